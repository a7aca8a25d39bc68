//! One episode per scenario class, narrated from its trace: what blocked the
//! agent, how the gate routed it and what the coordination window did.

use gatecoord::agent::{run_episode, Event, IssuePhase, RunConfig};
use gatecoord::gate::MockAdjudicator;
use gatecoord::scenarios::{generate_dataset, ScenarioClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = generate_dataset(0)?;
    let config = RunConfig::default();
    for class in ScenarioClass::ALL {
        let spec = specs.iter().find(|s| s.class == class).expect("every class is generated");
        let trace = run_episode(spec, &config, &mut MockAdjudicator::new(config.gate.thresholds))?;
        println!(
            "== class {class:?}: {} ({} agents, {} blocks)",
            spec.id(),
            spec.agent_count(),
            spec.site.blueprint.nodes.len()
        );
        for e in &trace.events {
            let who = e.agent.as_ref().map_or("-".to_string(), |a| a.to_string());
            match &e.event {
                Event::Issue(r) if r.phase == IssuePhase::Detected => {
                    let item = r.missing.as_ref().map_or("-".to_string(), |m| format!("{} x{}", m.item, m.count));
                    println!("  t={:<3} {who}: {:?} at {} ({item})", e.step, r.issue, r.node);
                }
                Event::Issue(r) if r.phase == IssuePhase::Resolved => {
                    println!("  t={:<3} {who}: issue {} resolved", e.step, r.id);
                }
                Event::GateDecision(g) => println!(
                    "  t={:<3} {who}: gate {} score {:.3} -> {:?} via {:?}",
                    e.step, g.features, g.decision.score_norm, g.decision.verdict, g.decision.tier
                ),
                Event::CoordinationMessage(m) => {
                    println!(
                        "  t={:<3} {who}: {} {} -> {} ({} x{})",
                        e.step,
                        m.protocol.as_str(),
                        m.from,
                        m.target,
                        m.item,
                        m.count
                    )
                }
                Event::WindowState(w) => println!("  t={:<3} window {} {:?}", e.step, w.window, w.state),
                Event::EpisodeEnd(end) => {
                    println!("  end: {:?}, completion {:.3} after {} rounds", end.reason, end.completion, end.rounds)
                }
                _ => {}
            }
        }
    }
    Ok(())
}
