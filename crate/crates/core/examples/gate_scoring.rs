//! Score a handful of feature vectors and show which tier of the gate
//! decides each one under the default weights and thresholds.

use gatecoord::gate::{escalation_score, gate_decide, normalize_score, FeatureVector, GateConfig, MockAdjudicator};
use gatecoord::memory::{Candidates, DecisionCard, IssueType};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GateConfig::default();
    let (lo, hi) = cfg.weights.score_bounds();
    println!(
        "weights {}  raw range [{lo}, {hi}]  thresholds ({}, {})",
        cfg.weights, cfg.thresholds.t_low, cfg.thresholds.t_high
    );

    let cases = [
        ("source next door", IssueType::MissingMaterial, [0, 0, 0, 3, 0]),
        ("structural, short local path", IssueType::MissingMaterial, [2, 0, 1, 3, 0]),
        ("craftable from held inputs", IssueType::MissingMaterial, [1, 1, 1, 2, 0]),
        ("gray: teammate may hold it", IssueType::MissingMaterial, [2, 0, 1, 2, 0]),
        ("bottleneck, no local path", IssueType::MissingMaterial, [3, 2, 1, 0, 0]),
        ("after two failed requests", IssueType::MissingMaterial, [2, 2, 1, 0, 3]),
        ("needs a teammate's station", IssueType::TransferNeeded, [1, 2, 0, 1, 0]),
    ];
    let mut adjudicator = MockAdjudicator::new(cfg.thresholds);
    println!("{:<30} {:>11} {:>5} {:>6}  decision", "case", "features", "raw", "norm");
    for (name, issue, f) in cases {
        let fv = FeatureVector::new(f[0], f[1], f[2], f[3], f[4])?;
        let raw = escalation_score(&fv, &cfg.weights);
        let norm = normalize_score(raw, &cfg.weights)?;
        let card = |score_norm| DecisionCard {
            issue,
            features: fv,
            score_norm,
            missing: None,
            candidates: Candidates { local: vec![], escalate_request: None },
        };
        let (d, exchange) = gate_decide(issue, &fv, &cfg, &mut adjudicator, card)?;
        let asked = if exchange.is_some() { " (adjudicator consulted)" } else { "" };
        println!("{name:<30} {fv:>11} {raw:>5} {norm:>6.3}  {:?} via {:?}{asked}", d.verdict, d.tier);
    }
    Ok(())
}
