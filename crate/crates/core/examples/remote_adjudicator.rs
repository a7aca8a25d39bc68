//! Serve a tiny HTTP adjudicator locally, run gray-zone episodes against it,
//! then replay one run offline from its recorded exchanges.

use gatecoord::agent::{run_episode, RunConfig};
use gatecoord::gate::{BackendSpec, ScriptedAdjudicator};
use gatecoord::scenarios::{generate_dataset, ScenarioClass};

fn serve() -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind a local port");
    let port = server.server_addr().to_ip().expect("tcp listener").port();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let card: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
            // A cautious policy: escalate only when a teammate is known to hold the item.
            let holder = !card["candidates"]["escalate_request"].is_null();
            let decision = if holder { "escalate" } else { "stay_local" };
            let reply = format!(r#"{{"decision":"{decision}","confidence":0.7}}"#);
            let _ = req.respond(tiny_http::Response::from_string(reply));
        }
    });
    format!("http://127.0.0.1:{port}/")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = serve();
    let config = RunConfig::default();
    let specs = generate_dataset(0)?;
    let gray: Vec<_> = specs.iter().filter(|s| s.class == ScenarioClass::C).take(5).collect();
    let mut first = None;
    for spec in &gray {
        let mut remote = BackendSpec::Remote(url.clone()).build(config.gate.thresholds);
        let trace = run_episode(spec, &config, remote.as_mut())?;
        for x in trace.exchanges() {
            println!("{}: {} tokens, reply {}", spec.id(), x.tokens, x.reply.as_deref().unwrap_or("<none>"));
        }
        first.get_or_insert((spec, trace));
    }

    let (spec, recorded) = first.expect("at least one gray episode");
    let mut replay = ScriptedAdjudicator::from_exchanges(recorded.exchanges());
    let again = run_episode(spec, &config, &mut replay)?;
    println!("offline replay of {} identical: {}", spec.id(), again.to_jsonl() == recorded.to_jsonl());
    Ok(())
}
