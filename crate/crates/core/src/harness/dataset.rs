//! Dataset persistence and the template-level calibration split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::scenarios::{EpisodeSpec, Manifest, ScenarioClass};

/// Episodes plus a partition of their templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub episodes: Vec<EpisodeSpec>,
    pub calib: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

impl Dataset {
    pub fn calib_episodes(&self) -> Vec<EpisodeSpec> {
        self.episodes.iter().filter(|e| self.calib.contains(&e.template)).cloned().collect()
    }

    pub fn test_episodes(&self) -> Vec<EpisodeSpec> {
        self.episodes.iter().filter(|e| self.test.contains(&e.template)).cloned().collect()
    }
}

/// Assigns whole templates to the calibration side. Templates are grouped by
/// (class, agent count) and each group is shuffled and cut separately, so
/// both sides stay balanced.
pub fn split_templates(episodes: Vec<EpisodeSpec>, calib_fraction: f64, seed: u64) -> Result<Dataset, HarnessError> {
    if !(calib_fraction > 0.0 && calib_fraction < 1.0) {
        return Err(HarnessError::BadFraction);
    }
    let mut groups: BTreeMap<(ScenarioClass, usize), BTreeSet<u32>> = BTreeMap::new();
    for e in &episodes {
        groups.entry((e.class, e.agent_count())).or_default().insert(e.template);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut calib, mut test) = (BTreeSet::new(), BTreeSet::new());
    for templates in groups.values() {
        let mut ts: Vec<u32> = templates.iter().copied().collect();
        ts.shuffle(&mut rng);
        let cut = (ts.len() as f64 * calib_fraction).round() as usize;
        calib.extend(&ts[..cut]);
        test.extend(&ts[cut..]);
    }
    if calib.is_empty() || test.is_empty() {
        return Err(HarnessError::EmptySplit);
    }
    Ok(Dataset { episodes, calib, test })
}

/// Writes `manifest.json` and one `episodes/<id>.json` per spec.
pub fn save_dataset(dir: &Path, dataset_seed: u64, specs: &[EpisodeSpec]) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(dir.join("episodes"))?;
    let manifest = Manifest::build(dataset_seed, specs);
    for (spec, entry) in specs.iter().zip(&manifest.episodes) {
        fs::write(dir.join(&entry.file), serde_json::to_vec_pretty(spec)?)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset written by [`save_dataset`], in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<EpisodeSpec>), HarnessError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let specs = manifest
        .episodes
        .iter()
        .map(|e| -> Result<EpisodeSpec, HarnessError> {
            let spec: EpisodeSpec = serde_json::from_slice(&fs::read(dir.join(&e.file))?)?;
            spec.validate()?;
            Ok(spec)
        })
        .collect::<Result<_, _>>()?;
    Ok((manifest, specs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::generate_dataset;

    #[test]
    fn half_split_balances_classes() {
        let d = split_templates(generate_dataset(0).unwrap(), 0.5, 3).unwrap();
        assert_eq!(d.calib.len(), 20);
        assert_eq!(d.test.len(), 20);
        assert_eq!(d.calib.iter().filter(|t| **t < 10).count(), 5);
        assert!(d.calib.is_disjoint(&d.test));
        let calib_seeds_of_7 = d.calib_episodes().iter().filter(|e| e.template == 7).count();
        assert!(calib_seeds_of_7 == 0 || calib_seeds_of_7 == 5);
    }

    #[test]
    fn split_is_deterministic_and_validated() {
        let ds = generate_dataset(0).unwrap();
        assert_eq!(split_templates(ds.clone(), 0.3, 9).unwrap(), split_templates(ds.clone(), 0.3, 9).unwrap());
        assert!(matches!(split_templates(ds.clone(), 1.0, 0), Err(HarnessError::BadFraction)));
        assert!(matches!(split_templates(ds, 0.01, 0), Err(HarnessError::EmptySplit)));
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds: Vec<EpisodeSpec> = generate_dataset(1).unwrap().into_iter().step_by(50).collect();
        let m = save_dataset(dir.path(), 1, &ds).unwrap();
        let (m2, back) = load_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(ds, back);
    }
}
