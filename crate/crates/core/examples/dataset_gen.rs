//! Generate the 200-episode suite, audit every class property, save it to a
//! temporary directory and split its templates for calibration.

use gatecoord::harness::{load_dataset, save_dataset, split_templates};
use gatecoord::scenarios::{generate_dataset, validate_class_property};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = generate_dataset(0)?;
    let mut local_costs = Vec::new();
    for spec in &specs {
        let probe = validate_class_property(spec)?;
        if let Some(cost) = probe.local_plan_cost {
            local_costs.push(cost);
        }
    }
    println!("{} episodes pass their class audit; {} have a local plan", specs.len(), local_costs.len());

    let dir = std::env::temp_dir().join("gatecoord-dataset-example");
    let manifest = save_dataset(&dir, 0, &specs)?;
    println!("saved to {}: classes {:?}, agents {:?}", dir.display(), manifest.class_counts, manifest.agent_counts);
    let (_, back) = load_dataset(&dir)?;
    assert_eq!(back, specs);

    let split = split_templates(specs, 0.5, 7)?;
    println!("calibration templates {:?}", split.calib);
    println!("test templates        {:?}", split.test);
    println!("{} calibration episodes, {} test episodes", split.calib_episodes().len(), split.test_episodes().len());
    Ok(())
}
