//! Parallel batch runs. Each episode owns its world and its adjudicator, so
//! results do not depend on scheduling.

use rayon::prelude::*;

use super::HarnessError;
use crate::agent::{run_episode, RunConfig, Trace};
use crate::gate::BackendSpec;
use crate::scenarios::EpisodeSpec;

/// Runs every spec under `config`, returning traces in input order.
pub fn run_suite(
    specs: &[EpisodeSpec],
    config: &RunConfig,
    backend: &BackendSpec,
    jobs: usize,
) -> Result<Vec<Trace>, HarnessError> {
    run_suite_with(specs, |_| config.clone(), |_| backend.clone(), jobs)
}

/// As [`run_suite`], with per-episode configuration and backend.
pub fn run_suite_with<F, B>(
    specs: &[EpisodeSpec],
    config_for: F,
    backend_for: B,
    jobs: usize,
) -> Result<Vec<Trace>, HarnessError>
where
    F: Fn(&EpisodeSpec) -> RunConfig + Sync,
    B: Fn(&EpisodeSpec) -> BackendSpec + Sync,
{
    let run = |s: &EpisodeSpec| {
        let config = config_for(s);
        let mut adj = backend_for(s).build(config.gate.thresholds);
        run_episode(s, &config, adj.as_mut()).map_err(HarnessError::from)
    };
    if jobs <= 1 {
        return specs.iter().map(run).collect();
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    pool.install(|| specs.par_iter().map(run).collect())
}
