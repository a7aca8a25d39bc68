//! Metrics over traces, batch runs, dataset persistence and grid-search
//! calibration.

mod calibrate;
mod dataset;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, Event, IssuePhase, Trace};
use crate::protocol::WindowState;
use crate::scenarios::{EpisodeSpec, ScenarioClass, SpecError, LOCAL_BUDGET};
use crate::solver::{plan_for_item, SolverParams};

pub use calibrate::{calibrate, objective_table, CalibrationConfig, CalibrationResult, CellStats, ObjectiveRow, Theta};
pub use dataset::{load_dataset, save_dataset, split_templates, Dataset};
pub use run::{run_suite, run_suite_with};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("trace has no episode_end event")]
    IncompleteTrace,
    #[error("nothing to aggregate")]
    Empty,
    #[error("calibration grid is empty")]
    EmptyGrid,
    #[error("split leaves one side empty")]
    EmptySplit,
    #[error("calibration fraction must lie strictly between 0 and 1")]
    BadFraction,
    #[error("negative penalty coefficient")]
    NegativeLambda,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Knobs of the unnecessary-escalation oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub local_budget: u32,
    pub solver: SolverParams,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams { local_budget: LOCAL_BUDGET, solver: SolverParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: String,
    pub template: u32,
    pub seed: u64,
    pub class: ScenarioClass,
    pub agents: usize,
    pub tsr: f64,
    pub cs: u64,
    pub lrr: Option<f64>,
    pub uer: Option<f64>,
    pub ecr: Option<f64>,
    pub rsr: Option<f64>,
    pub msg: u64,
    pub escalations: u64,
    pub adjudicator_calls: u64,
    pub token_cost: u64,
    pub recovery_time_avg: Option<f64>,
    /// Windows that ended without a verified handover.
    pub zero_yield: u64,
}

impl EpisodeMetrics {
    /// Share of opened windows that yielded nothing; 0 without windows.
    pub fn zero_yield_rate(&self) -> f64 {
        if self.escalations == 0 {
            0.0
        } else {
            self.zero_yield as f64 / self.escalations as f64
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(trace: &Trace, spec: &EpisodeSpec) -> Result<EpisodeMetrics, HarnessError> {
    compute_metrics_with(trace, spec, &MetricParams::default())
}

/// Derives every episode metric from the trace alone; the episode spec only supplies
/// labels and the recipe book for replaying local plans.
pub fn compute_metrics_with(
    trace: &Trace,
    spec: &EpisodeSpec,
    params: &MetricParams,
) -> Result<EpisodeMetrics, HarnessError> {
    let end = trace.end().ok_or(HarnessError::IncompleteTrace)?;

    let mut detected_at: BTreeMap<u64, u64> = BTreeMap::new();
    let mut resolved_at: BTreeMap<u64, u64> = BTreeMap::new();
    let mut activated: BTreeSet<u64> = BTreeSet::new();
    let mut escalated: BTreeSet<u64> = BTreeSet::new();
    let (mut cs, mut msg, mut opened, mut fulfilled, mut calls, mut tokens, mut unnecessary) = (0, 0, 0, 0, 0, 0, 0);

    for e in &trace.events {
        match &e.event {
            Event::Action { action, .. } if action.is_environment_step() => cs += 1,
            Event::CoordinationMessage(_) => msg += 1,
            Event::WindowState(w) => match w.state {
                WindowState::Open => opened += 1,
                WindowState::Fulfilled if w.transfer_verified => fulfilled += 1,
                _ => {}
            },
            Event::Issue(r) => match r.phase {
                IssuePhase::Detected => {
                    detected_at.insert(r.id, e.step);
                }
                IssuePhase::Recovery => {
                    activated.insert(r.id);
                }
                IssuePhase::Resolved => {
                    resolved_at.insert(r.id, e.step);
                }
            },
            Event::GateDecision(g) => {
                if let Some(x) = &g.adjudicator {
                    calls += 1;
                    tokens += x.tokens;
                }
                if g.window.is_some() {
                    escalated.insert(g.issue_id);
                    let ctx = &g.context;
                    let feasible = ctx.state.blockage.as_ref().and_then(|b| b.missing.as_ref()).and_then(|m| {
                        plan_for_item(&m.item, m.count, &ctx.state, &ctx.view, &spec.site.recipes, &params.solver)
                    });
                    if feasible.is_some_and(|p| p.total_cost <= params.local_budget) {
                        unnecessary += 1;
                    }
                }
            }
            _ => {}
        }
    }

    let resolved = resolved_at.len() as u64;
    let local = resolved_at.keys().filter(|id| !escalated.contains(id)).count() as u64;
    let recovered = resolved_at.keys().filter(|id| activated.contains(id)).count() as u64;
    let times: Vec<f64> =
        resolved_at.iter().filter_map(|(id, t)| detected_at.get(id).map(|d| t.saturating_sub(*d) as f64)).collect();
    let recovery_time_avg = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);

    Ok(EpisodeMetrics {
        episode: spec.id(),
        template: spec.template,
        seed: spec.seed,
        class: spec.class,
        agents: spec.agent_count(),
        tsr: end.completion,
        cs,
        lrr: ratio(local, resolved),
        uer: ratio(unnecessary, opened),
        ecr: ratio(fulfilled, opened),
        rsr: ratio(recovered, activated.len() as u64),
        msg,
        escalations: opened,
        adjudicator_calls: calls,
        token_cost: tokens,
        recovery_time_avg,
        zero_yield: opened - fulfilled,
    })
}

/// Unweighted means; ratio fields average only over episodes that define them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub episodes: usize,
    pub tsr: f64,
    pub cs: f64,
    pub lrr: Option<f64>,
    pub uer: Option<f64>,
    pub ecr: Option<f64>,
    pub rsr: Option<f64>,
    pub msg: f64,
    pub escalations: f64,
    pub adjudicator_calls: f64,
    pub token_cost: f64,
    pub recovery_time_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub overall: AggregateRow,
    pub per_class: BTreeMap<ScenarioClass, AggregateRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn aggregate_row(label: &str, ms: &[&EpisodeMetrics]) -> AggregateRow {
    let avg = |f: &dyn Fn(&EpisodeMetrics) -> f64| mean(ms.iter().map(|m| f(m))).unwrap_or(0.0);
    let opt = |f: &dyn Fn(&EpisodeMetrics) -> Option<f64>| mean(ms.iter().filter_map(|m| f(m)));
    AggregateRow {
        label: label.to_string(),
        episodes: ms.len(),
        tsr: avg(&|m| m.tsr),
        cs: avg(&|m| m.cs as f64),
        lrr: opt(&|m| m.lrr),
        uer: opt(&|m| m.uer),
        ecr: opt(&|m| m.ecr),
        rsr: opt(&|m| m.rsr),
        msg: avg(&|m| m.msg as f64),
        escalations: avg(&|m| m.escalations as f64),
        adjudicator_calls: avg(&|m| m.adjudicator_calls as f64),
        token_cost: avg(&|m| m.token_cost as f64),
        recovery_time_avg: opt(&|m| m.recovery_time_avg),
    }
}

pub fn aggregate(metrics: &[EpisodeMetrics]) -> Result<AggregateMetrics, HarnessError> {
    if metrics.is_empty() {
        return Err(HarnessError::Empty);
    }
    let all: Vec<&EpisodeMetrics> = metrics.iter().collect();
    let mut per_class = BTreeMap::new();
    for c in ScenarioClass::ALL {
        let of: Vec<&EpisodeMetrics> = metrics.iter().filter(|m| m.class == c).collect();
        if !of.is_empty() {
            per_class.insert(c, aggregate_row(&format!("class_{c}"), &of));
        }
    }
    Ok(AggregateMetrics { overall: aggregate_row("all", &all), per_class })
}

/// Episode rows followed by the aggregate rows, one CSV table.
pub fn write_metrics_csv<W: Write>(out: W, metrics: &[EpisodeMetrics]) -> Result<(), HarnessError> {
    let agg = aggregate(metrics)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "episode",
        "class",
        "agents",
        "tsr",
        "cs",
        "lrr",
        "uer",
        "ecr",
        "rsr",
        "msg",
        "escalations",
        "adjudicator_calls",
        "token_cost",
        "recovery_time_avg",
    ])?;
    let f = |x: f64| format!("{x:.6}");
    let o = |x: Option<f64>| x.map(f).unwrap_or_default();
    for m in metrics {
        w.write_record([
            m.episode.clone(),
            m.class.to_string(),
            m.agents.to_string(),
            f(m.tsr),
            m.cs.to_string(),
            o(m.lrr),
            o(m.uer),
            o(m.ecr),
            o(m.rsr),
            m.msg.to_string(),
            m.escalations.to_string(),
            m.adjudicator_calls.to_string(),
            m.token_cost.to_string(),
            o(m.recovery_time_avg),
        ])?;
    }
    for r in std::iter::once(&agg.overall).chain(agg.per_class.values()) {
        let class = r.label.strip_prefix("class_").unwrap_or("").to_string();
        w.write_record([
            r.label.clone(),
            class,
            String::new(),
            f(r.tsr),
            f(r.cs),
            o(r.lrr),
            o(r.uer),
            o(r.ecr),
            o(r.rsr),
            f(r.msg),
            f(r.escalations),
            f(r.adjudicator_calls),
            f(r.token_cost),
            o(r.recovery_time_avg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(class: ScenarioClass, tsr: f64, uer: Option<f64>) -> EpisodeMetrics {
        EpisodeMetrics {
            episode: "t00_s0".into(),
            template: 0,
            seed: 0,
            class,
            agents: 2,
            tsr,
            cs: 10,
            lrr: None,
            uer,
            ecr: None,
            rsr: None,
            msg: 0,
            escalations: 0,
            adjudicator_calls: 0,
            token_cost: 0,
            recovery_time_avg: None,
            zero_yield: 0,
        }
    }

    #[test]
    fn mean_of_tsr() {
        let agg = aggregate(&[m(ScenarioClass::A, 0.2, None), m(ScenarioClass::A, 0.4, None)]).unwrap();
        assert!((agg.overall.tsr - 0.3).abs() < 1e-12);
    }

    #[test]
    fn absent_ratio_is_excluded() {
        let agg = aggregate(&[m(ScenarioClass::A, 1.0, Some(0.5)), m(ScenarioClass::B, 1.0, None)]).unwrap();
        assert_eq!(agg.overall.uer, Some(0.5));
        assert_eq!(agg.per_class[&ScenarioClass::B].uer, None);
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert!(matches!(aggregate(&[]), Err(HarnessError::Empty)));
    }

    #[test]
    fn csv_has_episode_and_aggregate_rows() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[m(ScenarioClass::A, 1.0, None), m(ScenarioClass::C, 0.5, Some(1.0))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 3);
        assert!(lines[3].starts_with("all,"));
        assert!(lines[5].starts_with("class_C,C,"));
    }
}
