//! Offline grid search over gate weights and thresholds. Utility is mean TSR
//! minus weighted penalties for recovery time, zero-yield escalations and
//! adjudicator tokens, each scaled by its grid-wide maximum.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, run_suite, EpisodeMetrics, HarnessError};
use crate::agent::RunConfig;
use crate::gate::{validate_weights, BackendSpec, GateThresholds, GateWeights};
use crate::scenarios::EpisodeSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub weights: GateWeights,
    pub thresholds: GateThresholds,
}

impl Theta {
    fn key(&self) -> [f64; 7] {
        let w = self.weights.as_array();
        [w[0], w[1], w[2], w[3], w[4], self.thresholds.t_low, self.thresholds.t_high]
    }

    /// Lexicographic order over (weights, t_low, t_high).
    pub fn lex_cmp(&self, other: &Theta) -> Ordering {
        self.key()
            .iter()
            .zip(other.key().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub weights: Vec<GateWeights>,
    pub thresholds: Vec<GateThresholds>,
    /// Penalties on recovery time, redundant escalation and token use.
    pub lambda: [f64; 3],
    #[serde(default)]
    pub allow_unvalidated: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            weights: vec![
                GateWeights::DEFAULT,
                GateWeights::new([3.0, 2.0, 2.0, 2.0, 1.0]),
                GateWeights::new([5.0, 2.0, 2.0, 2.0, 1.0]),
                GateWeights::new([4.0, 3.0, 2.0, 2.0, 1.0]),
            ],
            thresholds: vec![
                GateThresholds::DEFAULT,
                GateThresholds { t_low: 0.45, t_high: 0.45 },
                GateThresholds { t_low: 0.35, t_high: 0.5 },
                GateThresholds { t_low: 0.4, t_high: 0.6 },
            ],
            lambda: [0.1, 0.2, 0.05],
            allow_unvalidated: false,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.weights.is_empty() || self.thresholds.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        if self.lambda.iter().any(|l| l.is_nan() || *l < 0.0) {
            return Err(HarnessError::NegativeLambda);
        }
        for t in &self.thresholds {
            GateThresholds::new(t.t_low, t.t_high).map_err(|e| HarnessError::Invalid(e.to_string()))?;
        }
        if !self.allow_unvalidated {
            for w in &self.weights {
                validate_weights(w, 1.0).map_err(HarnessError::Invalid)?;
            }
        }
        Ok(())
    }

    /// Every grid cell, in lexicographic order.
    pub fn cells(&self) -> Vec<Theta> {
        let mut cells: Vec<Theta> = self
            .weights
            .iter()
            .flat_map(|w| self.thresholds.iter().map(move |t| Theta { weights: *w, thresholds: *t }))
            .collect();
        cells.sort_by(Theta::lex_cmp);
        cells.dedup_by(|a, b| a.lex_cmp(b).is_eq());
        cells
    }
}

/// Raw cost terms of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub theta: Theta,
    pub episodes: usize,
    pub mean_tsr: f64,
    /// Mean of per-episode average recovery time.
    pub c_time: f64,
    /// Mean per-episode share of escalations that yielded nothing.
    pub c_redundant: f64,
    /// Mean adjudicator tokens per episode.
    pub c_llm: f64,
}

impl CellStats {
    pub fn from_metrics(theta: Theta, metrics: &[EpisodeMetrics]) -> CellStats {
        let n = metrics.len().max(1) as f64;
        let times: Vec<f64> = metrics.iter().filter_map(|m| m.recovery_time_avg).collect();
        CellStats {
            theta,
            episodes: metrics.len(),
            mean_tsr: metrics.iter().map(|m| m.tsr).sum::<f64>() / n,
            c_time: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
            c_redundant: metrics.iter().map(EpisodeMetrics::zero_yield_rate).sum::<f64>() / n,
            c_llm: metrics.iter().map(|m| m.token_cost as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    #[serde(flatten)]
    pub stats: CellStats,
    pub c_time_norm: f64,
    pub c_redundant_norm: f64,
    pub c_llm_norm: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub best: Theta,
    pub lambda: [f64; 3],
    pub table: Vec<ObjectiveRow>,
}

fn scaled(x: f64, max: f64) -> f64 {
    if max > 0.0 {
        x / max
    } else {
        0.0
    }
}

/// Normalizes cost terms by their grid maxima and scores every cell. Rows come
/// back in lexicographic Θ order; the best row has the highest objective, ties
/// going to the smallest Θ.
pub fn objective_table(mut cells: Vec<CellStats>, lambda: [f64; 3]) -> Result<CalibrationResult, HarnessError> {
    if cells.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    cells.sort_by(|a, b| a.theta.lex_cmp(&b.theta));
    let max = |f: fn(&CellStats) -> f64| cells.iter().map(f).fold(0.0f64, f64::max);
    let (mt, mr, ml) = (max(|c| c.c_time), max(|c| c.c_redundant), max(|c| c.c_llm));
    let table: Vec<ObjectiveRow> = cells
        .into_iter()
        .map(|s| {
            let (t, r, l) = (scaled(s.c_time, mt), scaled(s.c_redundant, mr), scaled(s.c_llm, ml));
            let objective = s.mean_tsr - lambda[0] * t - lambda[1] * r - lambda[2] * l;
            ObjectiveRow { stats: s, c_time_norm: t, c_redundant_norm: r, c_llm_norm: l, objective }
        })
        .collect();
    let best = table
        .iter()
        .fold(None::<&ObjectiveRow>, |acc, row| match acc {
            Some(b) if b.objective >= row.objective => Some(b),
            _ => Some(row),
        })
        .expect("non-empty table")
        .stats
        .theta;
    Ok(CalibrationResult { best, lambda, table })
}

/// Runs every calibration episode under every grid cell and picks the best Θ.
pub fn calibrate(
    specs: &[EpisodeSpec],
    base: &RunConfig,
    cal: &CalibrationConfig,
    backend: &BackendSpec,
    jobs: usize,
) -> Result<CalibrationResult, HarnessError> {
    cal.validate()?;
    if specs.is_empty() {
        return Err(HarnessError::Empty);
    }
    let run_cell = |theta: &Theta| -> Result<CellStats, HarnessError> {
        let mut cfg = base.clone();
        cfg.gate.weights = theta.weights;
        cfg.gate.thresholds = theta.thresholds;
        cfg.allow_unvalidated |= cal.allow_unvalidated;
        let traces = run_suite(specs, &cfg, backend, 1)?;
        let metrics = traces.iter().zip(specs).map(|(t, s)| compute_metrics(t, s)).collect::<Result<Vec<_>, _>>()?;
        Ok(CellStats::from_metrics(*theta, &metrics))
    };
    let cells = cal.cells();
    let stats: Vec<CellStats> = if jobs <= 1 {
        cells.iter().map(run_cell).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HarnessError::Invalid(e.to_string()))?;
        pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_, _>>())?
    };
    objective_table(stats, cal.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(w0: f64, tsr: f64, time: f64, red: f64, llm: f64) -> CellStats {
        CellStats {
            theta: Theta { weights: GateWeights::new([w0, 2.0, 2.0, 2.0, 1.0]), thresholds: GateThresholds::DEFAULT },
            episodes: 1,
            mean_tsr: tsr,
            c_time: time,
            c_redundant: red,
            c_llm: llm,
        }
    }

    #[test]
    fn singleton_grid_returns_its_cell() {
        let r = objective_table(vec![cell(4.0, 0.5, 1.0, 0.0, 0.0)], [0.1, 0.2, 0.05]).unwrap();
        assert_eq!(r.best.weights, GateWeights::DEFAULT);
        assert!((r.table[0].objective - (0.5 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smallest_theta() {
        let r = objective_table(vec![cell(5.0, 1.0, 0.0, 0.0, 0.0), cell(3.0, 1.0, 0.0, 0.0, 0.0)], [0.1, 0.2, 0.05])
            .unwrap();
        assert_eq!(r.best.weights.as_array()[0], 3.0);
    }

    #[test]
    fn penalties_use_grid_maxima() {
        let r = objective_table(vec![cell(3.0, 1.0, 0.0, 1.0, 0.0), cell(4.0, 1.0, 0.0, 0.5, 0.0)], [0.0, 0.2, 0.0])
            .unwrap();
        assert_eq!(r.table[0].c_redundant_norm, 1.0);
        assert_eq!(r.table[1].c_redundant_norm, 0.5);
        assert_eq!(r.best.weights.as_array()[0], 4.0);
    }

    #[test]
    fn grid_validation() {
        let mut c = CalibrationConfig::default();
        assert!(c.validate().is_ok());
        c.weights.push(GateWeights::new([1.0; 5]));
        assert!(c.validate().is_err());
        c.allow_unvalidated = true;
        assert!(c.validate().is_ok());
        c.lambda[1] = -0.1;
        assert!(matches!(c.validate(), Err(HarnessError::NegativeLambda)));
        c.weights.clear();
        assert!(matches!(c.validate(), Err(HarnessError::EmptyGrid)));
    }
}
