//! Deterministic local handling: recovery plan synthesis, skipping past a
//! blockage, and the per-issue cooldown that follows failed coordination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{IssueType, PrivateState};
use crate::protocol::CoordinationOutcome;
use crate::world::{travel_steps, AgentId, ItemId, NodeId, Pos, Recipe, RecipeKind, SourceRef, TaskGraph, WorldView};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("no active blockage")]
    NoBlockage,
    #[error("a fulfilled outcome resets the cooldown instead")]
    NotAFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub near_radius: f64,
    pub far_threshold: f64,
    pub interaction_radius: f64,
    pub speed: u32,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { near_radius: 8.0, far_threshold: 40.0, interaction_radius: 3.0, speed: 5 }
    }
}

/// Recovery step kinds, ordered from cheapest to most involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    Craft,
    Smelt,
    Collect,
    PlanDetour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pickup {
    pub source: SourceRef,
    pub position: Pos,
    pub item: ItemId,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStep {
    pub kind: RecoveryKind,
    pub item: ItemId,
    /// Recipe used by craft/smelt and detour steps.
    pub recipe: Option<String>,
    /// Where a station is needed, its position.
    pub station: Option<Pos>,
    /// Items to gather first (collect and detour steps).
    pub pickups: Vec<Pickup>,
    /// Distance to the farthest location the step visits.
    pub distance: f64,
    pub estimated_cost: u32,
}

impl RecoveryStep {
    pub fn label(&self) -> String {
        let kind =
            serde_json::to_value(self.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        match &self.recipe {
            Some(r) => format!("{kind}:{r}"),
            None => format!("{kind}:{}", self.item),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub steps: Vec<RecoveryStep>,
    pub total_cost: u32,
}

impl RecoveryPlan {
    fn single(step: RecoveryStep) -> Self {
        RecoveryPlan { total_cost: step.estimated_cost, steps: vec![step] }
    }

    pub fn first(&self) -> &RecoveryStep {
        &self.steps[0]
    }
}

fn nearest_station(view: &WorldView, kind: &str, from: Pos, limit: f64) -> Option<(Pos, f64)> {
    view.stations
        .iter()
        .filter(|s| s.kind == kind && s.usable_by(&view.agent))
        .map(|s| (s.position, from.dist(&s.position)))
        .filter(|(_, d)| *d <= limit)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Nearest visible source or chest offering `item`, within `limit`.
fn nearest_supply(view: &WorldView, item: &str, from: Pos, limit: f64) -> Option<Pickup> {
    let sources = view
        .sources
        .iter()
        .filter(|s| s.item == item && s.remaining > 0)
        .map(|s| (SourceRef::Source { index: s.index }, s.position, s.remaining));
    let chests = view
        .chests
        .iter()
        .filter(|c| c.contents.count(item) > 0)
        .map(|c| (SourceRef::Chest { index: c.index, item: item.to_string() }, c.position, c.contents.count(item)));
    sources
        .chain(chests)
        .map(|(r, p, n)| (from.dist(&p), r, p, n))
        .filter(|(d, ..)| *d <= limit)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)))
        .map(|(_, source, position, n)| Pickup { source, position, item: item.to_string(), count: n })
}

fn recipe_step(
    r: &Recipe,
    view: &WorldView,
    p: &SolverParams,
    kind: RecoveryKind,
    pickups: Vec<Pickup>,
) -> Option<RecoveryStep> {
    let here = view.position;
    let mut cost = 1u32;
    let mut distance = 0.0f64;
    let mut at = here;
    for pk in &pickups {
        cost += travel_steps(at.dist(&pk.position), p.interaction_radius, p.speed) + pk.count;
        distance = distance.max(here.dist(&pk.position));
        at = pk.position;
    }
    let station = match &r.station_required {
        Some(kind) => {
            let (pos, _) = nearest_station(view, kind, at, p.far_threshold)?;
            cost += travel_steps(at.dist(&pos), p.interaction_radius, p.speed);
            distance = distance.max(here.dist(&pos));
            Some(pos)
        }
        None => None,
    };
    Some(RecoveryStep {
        kind,
        item: r.output.0.clone(),
        recipe: Some(r.id.clone()),
        station,
        pickups,
        distance,
        estimated_cost: cost,
    })
}

/// First satisfiable local recovery for the blocked item, trying in order:
/// craft from held inputs, smelt from held inputs at a usable station, collect
/// from a source or chest within the far threshold, then a detour that
/// gathers missing inputs before crafting or smelting.
pub fn plan_local_recovery(
    state: &PrivateState,
    view: &WorldView,
    recipes: &[Recipe],
    p: &SolverParams,
) -> Result<Option<RecoveryPlan>, SolverError> {
    let b = state.blockage.as_ref().ok_or(SolverError::NoBlockage)?;
    let Some(missing) = &b.missing else {
        return Ok(None);
    };
    Ok(plan_for_item(&missing.item, missing.count, state, view, recipes, p))
}

pub fn plan_for_item(
    item: &str,
    count: u32,
    state: &PrivateState,
    view: &WorldView,
    recipes: &[Recipe],
    p: &SolverParams,
) -> Option<RecoveryPlan> {
    let producing: Vec<&Recipe> = recipes.iter().filter(|r| r.output.0 == item).collect();
    let inv = &state.inventory;
    for kind in [RecipeKind::Craft, RecipeKind::Smelt] {
        let rk = if kind == RecipeKind::Craft { RecoveryKind::Craft } else { RecoveryKind::Smelt };
        if let Some(step) = producing
            .iter()
            .filter(|r| r.kind == kind && r.inputs_held(inv))
            .filter_map(|r| recipe_step(r, view, p, rk, Vec::new()))
            .min_by_key(|s| s.estimated_cost)
        {
            return Some(RecoveryPlan::single(step));
        }
    }
    if let Some(pk) = nearest_supply(view, item, view.position, p.far_threshold) {
        let take = count.min(pk.count).max(1);
        let distance = view.position.dist(&pk.position);
        let cost = travel_steps(distance, p.interaction_radius, p.speed) + take;
        let step = RecoveryStep {
            kind: RecoveryKind::Collect,
            item: item.to_string(),
            recipe: None,
            station: None,
            pickups: vec![Pickup { count: take, ..pk }],
            distance,
            estimated_cost: cost,
        };
        return Some(RecoveryPlan::single(step));
    }
    producing
        .iter()
        .filter_map(|r| {
            let mut pickups = Vec::new();
            let mut at = view.position;
            for (input, need) in &r.inputs {
                let short = need.saturating_sub(inv.count(input));
                if short == 0 {
                    continue;
                }
                let pk = nearest_supply(view, input, at, p.far_threshold)?;
                if pk.count < short {
                    return None;
                }
                at = pk.position;
                pickups.push(Pickup { count: short, ..pk });
            }
            recipe_step(r, view, p, RecoveryKind::PlanDetour, pickups)
        })
        .min_by_key(|s| s.estimated_cost)
        .map(RecoveryPlan::single)
}

/// Smallest-id assigned node that is unplaced, ready, independent of the
/// blocked node, and placeable with held material.
pub fn local_skip(
    state: &PrivateState,
    graph: &TaskGraph,
    placed: &std::collections::BTreeSet<NodeId>,
    blocked: NodeId,
) -> Option<NodeId> {
    let downstream = graph.descendants(blocked);
    state
        .task
        .pending
        .iter()
        .filter(|(n, _)| **n != blocked && !placed.contains(n) && !downstream.contains(n))
        .filter(|(n, _)| graph.is_ready(**n, placed))
        .find(|(_, item)| state.inventory.count(item) > 0)
        .map(|(n, _)| *n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooldownEntry {
    pub level: u8,
    pub expires_at: u64,
    pub consecutive_failures: u32,
}

impl CooldownEntry {
    /// The entry as seen at `now`: past expiry the level decays to 0, or to 2
    /// after repeated zero-yield escalations.
    pub fn at(&self, now: u64) -> CooldownEntry {
        if now < self.expires_at {
            return *self;
        }
        let level = if self.consecutive_failures >= 2 { 2 } else { 0 };
        CooldownEntry { level, ..*self }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooldownTable {
    entries: BTreeMap<AgentId, BTreeMap<IssueType, CooldownEntry>>,
}

impl CooldownTable {
    pub fn entry(&self, agent: &AgentId, issue: IssueType, now: u64) -> CooldownEntry {
        self.entries.get(agent).and_then(|m| m.get(&issue)).map(|e| e.at(now)).unwrap_or_default()
    }

    pub fn level(&self, agent: &AgentId, issue: IssueType, now: u64) -> u8 {
        self.entry(agent, issue, now).level
    }

    /// Window opening is refused during an explicit rejection cooldown and
    /// after two consecutive zero-yield escalations.
    pub fn hard_blocked(&self, agent: &AgentId, issue: IssueType, now: u64) -> bool {
        let e = self.entry(agent, issue, now);
        e.level == 3 || e.consecutive_failures >= 2
    }

    pub fn register_failure(
        &mut self,
        agent: &AgentId,
        issue: IssueType,
        outcome: CoordinationOutcome,
        now: u64,
        duration: u64,
    ) -> Result<CooldownEntry, SolverError> {
        let cur = self.entry(agent, issue, now);
        let consecutive_failures = cur.consecutive_failures + 1;
        let level = match outcome {
            CoordinationOutcome::Fulfilled => return Err(SolverError::NotAFailure),
            CoordinationOutcome::CannotSupply => 3,
            CoordinationOutcome::Timeout if consecutive_failures >= 2 => cur.level.max(2),
            CoordinationOutcome::Timeout => cur.level.max(1),
        };
        let e = CooldownEntry { level, expires_at: now + duration, consecutive_failures };
        self.entries.entry(agent.clone()).or_default().insert(issue, e);
        Ok(e)
    }

    pub fn reset(&mut self, agent: &AgentId, issue: IssueType) -> CooldownEntry {
        let e = CooldownEntry::default();
        self.entries.entry(agent.clone()).or_default().insert(issue, e);
        e
    }
}

/// Functional form of [`CooldownTable::register_failure`].
pub fn register_coordination_failure(
    cd: &CooldownTable,
    agent: &AgentId,
    issue: IssueType,
    outcome: CoordinationOutcome,
    now: u64,
    duration: u64,
) -> Result<CooldownTable, SolverError> {
    let mut next = cd.clone();
    next.register_failure(agent, issue, outcome, now, duration)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{BlockageRecord, MissingItem, PositionState, TaskState};
    use crate::world::{Inventory, Region, SourceView, Station};
    use std::collections::{BTreeSet, VecDeque};

    fn state(inv: Inventory, missing: &str) -> PrivateState {
        PrivateState {
            agent: AgentId::new("a0"),
            inventory: inv,
            task: TaskState { active_subtask: None, pending: BTreeMap::new() },
            position: PositionState { current: Pos::new(0, 0, 0), work_region: Region::point(Pos::new(0, 0, 0)) },
            blockage: Some(BlockageRecord {
                issue: IssueType::MissingMaterial,
                missing: Some(MissingItem { item: missing.into(), count: 1 }),
                node: NodeId(0),
                recovery_candidates: vec![],
                first_seen: 0,
            }),
            history: VecDeque::new(),
            h_max: 8,
        }
    }

    fn view() -> WorldView {
        WorldView {
            agent: AgentId::new("a0"),
            sim_time: 0,
            position: Pos::new(0, 0, 0),
            inventory: Inventory::new(),
            radius: 50.0,
            teammates: vec![],
            sources: vec![],
            chests: vec![],
            stations: vec![],
            placed_nodes: BTreeSet::new(),
        }
    }

    fn recipes() -> Vec<Recipe> {
        vec![
            Recipe {
                id: "planks".into(),
                kind: RecipeKind::Craft,
                inputs: vec![("oak_log".into(), 1)],
                output: ("oak_planks".into(), 4),
                station_required: None,
            },
            Recipe {
                id: "iron_ingot".into(),
                kind: RecipeKind::Smelt,
                inputs: vec![("iron_ore".into(), 1)],
                output: ("iron_ingot".into(), 1),
                station_required: Some("furnace".into()),
            },
        ]
    }

    #[test]
    fn craft_from_held_log() {
        let s = state(Inventory::from_pairs([("oak_log", 1)]), "oak_planks");
        let plan = plan_local_recovery(&s, &view(), &recipes(), &SolverParams::default()).unwrap().unwrap();
        assert_eq!(plan.first().kind, RecoveryKind::Craft);
        assert_eq!(plan.total_cost, 1);
    }

    #[test]
    fn smelt_with_furnace_ten_blocks_away() {
        let s = state(Inventory::from_pairs([("iron_ore", 1)]), "iron_ingot");
        let mut v = view();
        v.stations.push(Station { kind: "furnace".into(), position: Pos::new(10, 0, 0), owner: None });
        let plan = plan_local_recovery(&s, &v, &recipes(), &SolverParams::default()).unwrap().unwrap();
        assert_eq!(plan.first().kind, RecoveryKind::Smelt);
        assert_eq!(plan.total_cost, 2 + 1);
    }

    #[test]
    fn nothing_for_unobtainable_item() {
        let s = state(Inventory::new(), "redstone_repeater");
        assert!(plan_local_recovery(&s, &view(), &recipes(), &SolverParams::default()).unwrap().is_none());
    }

    #[test]
    fn detour_gathers_inputs_first() {
        let s = state(Inventory::new(), "oak_planks");
        let mut v = view();
        v.sources.push(SourceView { index: 0, item: "oak_log".into(), position: Pos::new(20, 0, 0), remaining: 3 });
        let plan = plan_local_recovery(&s, &v, &recipes(), &SolverParams::default()).unwrap().unwrap();
        assert_eq!(plan.first().kind, RecoveryKind::PlanDetour);
        // travel ceil(17/5)=4, collect 1, craft 1
        assert_eq!(plan.total_cost, 6);
    }

    #[test]
    fn no_blockage_is_an_error() {
        let mut s = state(Inventory::new(), "x");
        s.blockage = None;
        assert_eq!(
            plan_local_recovery(&s, &view(), &recipes(), &SolverParams::default()),
            Err(SolverError::NoBlockage)
        );
    }

    #[test]
    fn skip_prefers_independent_subtree() {
        let g = TaskGraph::new((0..4).map(NodeId), [(NodeId(0), NodeId(1)), (NodeId(2), NodeId(3))]).unwrap();
        let mut s = state(Inventory::from_pairs([("stone", 4)]), "x");
        for n in 0..4 {
            s.task.pending.insert(NodeId(n), "stone".into());
        }
        assert_eq!(local_skip(&s, &g, &BTreeSet::new(), NodeId(0)), Some(NodeId(2)));
        let chain = TaskGraph::new((0..3).map(NodeId), [(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))]).unwrap();
        s.task.pending.remove(&NodeId(3));
        assert_eq!(local_skip(&s, &chain, &BTreeSet::new(), NodeId(0)), None);
    }

    #[test]
    fn cooldown_levels() {
        let a = AgentId::new("a0");
        let mut cd = CooldownTable::default();
        let i = IssueType::MissingMaterial;
        let e = cd.register_failure(&a, i, CoordinationOutcome::Timeout, 10, 30).unwrap();
        assert_eq!(e.level, 1);
        assert!(!cd.hard_blocked(&a, i, 11));
        let e = cd.register_failure(&a, i, CoordinationOutcome::Timeout, 50, 30).unwrap();
        assert_eq!(e.level, 2);
        assert!(cd.hard_blocked(&a, i, 51));
        assert_eq!(cd.level(&a, i, 200), 2);
        let e = cd.register_failure(&a, IssueType::TransferNeeded, CoordinationOutcome::CannotSupply, 5, 30).unwrap();
        assert_eq!(e.level, 3);
        assert!(cd.hard_blocked(&a, IssueType::TransferNeeded, 34));
        assert_eq!(cd.level(&a, IssueType::TransferNeeded, 35), 0);
        assert!(cd.register_failure(&a, i, CoordinationOutcome::Fulfilled, 0, 30).is_err());
        cd.reset(&a, i);
        assert_eq!(cd.level(&a, i, 60), 0);
    }
}
