//! Grid-search gate weights and thresholds on the calibration half of the
//! suite, then check the chosen setting on the held-out templates.

use gatecoord::agent::RunConfig;
use gatecoord::gate::BackendSpec;
use gatecoord::harness::{aggregate, calibrate, compute_metrics, run_suite, split_templates, CalibrationConfig};
use gatecoord::scenarios::generate_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let split = split_templates(generate_dataset(0)?, 0.5, 0)?;
    let calib = split.calib_episodes();
    let base = RunConfig::default();
    let result = calibrate(&calib, &base, &CalibrationConfig::default(), &BackendSpec::Mock, 4)?;

    println!(
        "{:<14} {:<12} {:>6} {:>7} {:>6} {:>7} {:>8}",
        "weights", "thresholds", "TSR", "c_time", "c_red", "c_llm", "utility"
    );
    for row in &result.table {
        let t = &row.stats.theta;
        println!(
            "{:<14} {:<12} {:>6.3} {:>7.3} {:>6.3} {:>7.3} {:>8.4}",
            t.weights.to_string(),
            format!("({}, {})", t.thresholds.t_low, t.thresholds.t_high),
            row.stats.mean_tsr,
            row.c_time_norm,
            row.c_redundant_norm,
            row.c_llm_norm,
            row.objective
        );
    }
    let best = result.best;
    println!("\nchosen: weights {} thresholds ({}, {})", best.weights, best.thresholds.t_low, best.thresholds.t_high);

    let test = split.test_episodes();
    for (label, weights, thresholds) in
        [("default", base.gate.weights, base.gate.thresholds), ("calibrated", best.weights, best.thresholds)]
    {
        let mut cfg = base.clone();
        cfg.gate.weights = weights;
        cfg.gate.thresholds = thresholds;
        let traces = run_suite(&test, &cfg, &BackendSpec::Mock, 4)?;
        let metrics = traces.iter().zip(&test).map(|(t, s)| compute_metrics(t, s)).collect::<Result<Vec<_>, _>>()?;
        let a = aggregate(&metrics)?.overall;
        println!(
            "held-out {label:<10}: TSR {:.3}, Msg {:.2}, adjudicator calls {:.2}",
            a.tsr, a.msg, a.adjudicator_calls
        );
    }
    Ok(())
}
