//! Deterministic projection of the private state and public knowledge onto
//! the five ordinal escalation features.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FeatureVector;
use crate::memory::{PrivateState, TaskContext};
use crate::protocol::TeamPublicView;
use crate::solver::{local_skip, plan_local_recovery, RecoveryKind, RecoveryPlan, SolverParams};
use crate::world::{AgentId, NodeId, WorldError, WorldView};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("no active blockage")]
    NoBlockage,
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Teammate distance for the strongest coordination advantage (exclusive).
    pub vicinity: f64,
    /// Largest teammate distance that still offers any advantage.
    pub viable_radius: f64,
    /// Descendant count above which a node counts as structural.
    pub structural_threshold: usize,
    pub solver: SolverParams,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams { vicinity: 10.0, viable_radius: 50.0, structural_threshold: 2, solver: SolverParams::default() }
    }
}

pub struct FeatureInputs<'a> {
    pub state: &'a PrivateState,
    pub view: &'a WorldView,
    pub ctx: &'a TaskContext<'a>,
    pub team: &'a TeamPublicView,
    /// Cooldown level currently recorded for this agent and issue.
    pub cooldown_level: u8,
    pub params: FeatureParams,
}

/// Computes `(C, R, I, L, H)` for the active blockage. Also returns the local
/// plan found while scoring L, so callers need not recompute it.
pub fn extract_features(inp: &FeatureInputs<'_>) -> Result<(FeatureVector, Option<RecoveryPlan>), FeatureError> {
    let b = inp.state.blockage.as_ref().ok_or(FeatureError::NoBlockage)?;
    let graph = inp.ctx.graph();
    let placed = &inp.view.placed_nodes;
    let crit = graph.criticality_of(b.node, placed)?;
    let c = if crit.descendant_count == 0 {
        0
    } else if crit.on_critical_path && local_skip(inp.state, graph, placed, b.node).is_none() {
        3
    } else if crit.descendant_count > inp.params.structural_threshold || crit.dependent_depth >= 2 {
        2
    } else {
        1
    };

    let r = coordination_advantage(inp);
    let i = downstream_impact(inp, b.node);

    let plan = plan_local_recovery(inp.state, inp.view, &inp.ctx.site.recipes, &inp.params.solver)
        .map_err(|_| FeatureError::NoBlockage)?;
    let l = match (&b.missing, &plan) {
        // Nothing to fetch: waiting for a prerequisite or placing it first is
        // always available locally.
        (None, _) => 3,
        (Some(_), None) => 0,
        (Some(_), Some(p)) => {
            let s = p.first();
            let near = inp.params.solver.near_radius;
            match s.kind {
                RecoveryKind::Collect if s.distance <= near => 3,
                RecoveryKind::Craft => 2,
                RecoveryKind::Smelt if s.distance <= near => 2,
                _ => 1,
            }
        }
    };
    let fv = FeatureVector::new(c, r, i, l, inp.cooldown_level.min(3)).expect("features in range");
    Ok((fv, plan))
}

/// Teammates known to hold `item`: advertised surplus, episode designation,
/// or a visible inventory when isolation is off.
pub fn known_holders(inp: &FeatureInputs<'_>, item: &str) -> BTreeSet<AgentId> {
    let me = &inp.state.agent;
    let mut holders: BTreeSet<AgentId> = inp.team.advertised_holders(item).cloned().collect();
    if let Some(a) = inp.ctx.designations.get(item) {
        holders.insert(a.clone());
    }
    for t in &inp.view.teammates {
        if t.inventory.as_ref().is_some_and(|inv| inv.count(item) > 0) {
            holders.insert(t.id.clone());
        }
    }
    holders.remove(me);
    holders
}

fn coordination_advantage(inp: &FeatureInputs<'_>) -> u8 {
    let Some(missing) = inp.state.blockage.as_ref().and_then(|b| b.missing.as_ref()) else {
        return 0;
    };
    let p = &inp.params;
    let dist_of = |a: &AgentId| inp.view.teammate(a).map(|t| t.distance).filter(|d| *d <= p.viable_radius);
    let exact: Vec<f64> = known_holders(inp, &missing.item).iter().filter_map(dist_of).collect();
    if exact.iter().any(|d| *d < p.vicinity) {
        return 3;
    }
    if !exact.is_empty() {
        return 2;
    }
    let raw_nearby = inp
        .ctx
        .site
        .recipes
        .iter()
        .filter(|r| r.output.0 == missing.item)
        .any(|r| r.inputs.iter().all(|(input, _)| known_holders(inp, input).iter().any(|a| dist_of(a).is_some())));
    u8::from(raw_nearby)
}

fn downstream_impact(inp: &FeatureInputs<'_>, node: NodeId) -> u8 {
    let me = &inp.state.agent;
    let placed = &inp.view.placed_nodes;
    let graph = inp.ctx.graph();
    let downstream = graph.descendants(node);
    let foreign_downstream =
        downstream.iter().any(|d| !placed.contains(d) && inp.ctx.owners.get(d).is_some_and(|o| o != me));
    if !foreign_downstream {
        return 0;
    }
    let mut teammates_with_work: BTreeSet<&AgentId> = BTreeSet::new();
    let mut not_blocked: BTreeSet<&AgentId> = BTreeSet::new();
    for (n, owner) in inp.ctx.owners {
        if owner == me || placed.contains(n) {
            continue;
        }
        teammates_with_work.insert(owner);
        if !downstream.contains(n) {
            not_blocked.insert(owner);
        }
    }
    let blocked = teammates_with_work.len() - not_blocked.len();
    if blocked == 0 {
        1
    } else if blocked == teammates_with_work.len() && local_skip(inp.state, graph, placed, node).is_none() {
        3
    } else {
        2
    }
}
