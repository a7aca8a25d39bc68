//! Component ablation over the full suite: switch off information isolation
//! and the gate tiers one at a time and compare communication cost.

use gatecoord::agent::RunConfig;
use gatecoord::cli::{ablation_variants, weight_variants};
use gatecoord::gate::BackendSpec;
use gatecoord::harness::{aggregate, compute_metrics, run_suite, EpisodeMetrics};
use gatecoord::scenarios::{generate_dataset, EpisodeSpec};

fn evaluate(specs: &[EpisodeSpec], cfg: &RunConfig) -> Result<Vec<EpisodeMetrics>, Box<dyn std::error::Error>> {
    let traces = run_suite(specs, cfg, &BackendSpec::Mock, 4)?;
    Ok(traces.iter().zip(specs).map(|(t, s)| compute_metrics(t, s)).collect::<Result<_, _>>()?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = generate_dataset(0)?;
    let base = RunConfig { allow_unvalidated: true, ..RunConfig::default() };
    let fmt = |x: Option<f64>| x.map_or("-".into(), |v| format!("{v:.3}"));

    println!("{:<20} {:>6} {:>7} {:>6} {:>5} {:>6}", "variant", "TSR", "CS", "ECR", "Msg", "Calls");
    for (name, cfg) in ablation_variants(&base) {
        let m = evaluate(&specs, &cfg)?;
        let a = aggregate(&m)?.overall;
        let msg: u64 = m.iter().map(|x| x.msg).sum();
        let calls: u64 = m.iter().map(|x| x.adjudicator_calls).sum();
        println!("{name:<20} {:>6.3} {:>7.2} {:>6} {msg:>5} {calls:>6}", a.tsr, a.cs, fmt(a.ecr));
    }

    println!("\n{:<30} {:>6} {:>6}", "weights", "UER", "TSR");
    for (name, w) in weight_variants() {
        let mut cfg = base.clone();
        cfg.gate.weights = w;
        let a = aggregate(&evaluate(&specs, &cfg)?)?.overall;
        println!("{:<30} {:>6} {:>6.3}", format!("{name} {w}"), fmt(a.uer), a.tsr);
    }
    Ok(())
}
