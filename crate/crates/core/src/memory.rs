//! Per-agent private working memory and structured blockage detection.
//!
//! A `PrivateState` changes only through [`update_private_state`] with one of
//! four trigger events, so it can be rebuilt exactly by replaying them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::FeatureVector;
use crate::solver::RecoveryStep;
use crate::world::{
    Action, AgentId, Delta, FailureReason, Inventory, ItemId, NodeId, Pos, Region, Site, Station, TaskGraph,
    VerifiedOutcome, WorldView,
};

pub const DEFAULT_H_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueType {
    MissingMaterial,
    SupportFailure,
    DependencyBlock,
    TransferNeeded,
    CoCraftRequired,
}

impl IssueType {
    pub const ALL: [IssueType; 5] = [
        IssueType::MissingMaterial,
        IssueType::SupportFailure,
        IssueType::DependencyBlock,
        IssueType::TransferNeeded,
        IssueType::CoCraftRequired,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IssueType::MissingMaterial => "missing_material",
            IssueType::SupportFailure => "support_failure",
            IssueType::DependencyBlock => "dependency_block",
            IssueType::TransferNeeded => "transfer_needed",
            IssueType::CoCraftRequired => "co_craft_required",
        }
    }

    /// Issues that name a concrete missing item.
    pub fn carries_item(&self) -> bool {
        matches!(self, IssueType::MissingMaterial | IssueType::TransferNeeded | IssueType::CoCraftRequired)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingItem {
    pub item: ItemId,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageRecord {
    pub issue: IssueType,
    pub missing: Option<MissingItem>,
    pub node: NodeId,
    pub recovery_candidates: Vec<RecoveryStep>,
    pub first_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub active_subtask: Option<NodeId>,
    /// Assigned nodes not yet placed, with their material.
    pub pending: BTreeMap<NodeId, ItemId>,
}

impl TaskState {
    /// Outstanding material demand aggregated per item.
    pub fn unfinished_requirements(&self) -> Vec<(ItemId, u32)> {
        let mut m: BTreeMap<&ItemId, u32> = BTreeMap::new();
        for item in self.pending.values() {
            *m.entry(item).or_insert(0) += 1;
        }
        m.into_iter().map(|(k, v)| (k.clone(), v)).collect()
    }

    pub fn requirement(&self, item: &str) -> u32 {
        self.pending.values().filter(|m| m.as_str() == item).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionState {
    pub current: Pos,
    pub work_region: Region,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub time: u64,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateState {
    pub agent: AgentId,
    pub inventory: Inventory,
    pub task: TaskState,
    pub position: PositionState,
    pub blockage: Option<BlockageRecord>,
    pub history: VecDeque<HistoryEntry>,
    pub h_max: usize,
}

impl PrivateState {
    /// Units of `item` held beyond the agent's own outstanding needs.
    pub fn surplus(&self, item: &str) -> u32 {
        self.inventory.count(item).saturating_sub(self.task.requirement(item))
    }

    fn remember(&mut self, time: u64, summary: String) {
        self.history.push_back(HistoryEntry { time, summary });
        while self.history.len() > self.h_max {
            self.history.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MemoryEvent {
    Init {
        agent: AgentId,
        inventory: Inventory,
        position: Pos,
        work_region: Region,
        assignments: BTreeMap<NodeId, ItemId>,
        h_max: usize,
    },
    Outcome(VerifiedOutcome),
    RecoveryEntry(BlockageRecord),
    ModeReset {
        active_subtask: Option<NodeId>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("state must be initialized before other events")]
    Uninitialized,
    #[error("no active blockage")]
    NoBlockage,
}

/// Folds one trigger event into the state. `Init` builds a fresh state and
/// ignores `state`; every other event requires an existing state.
pub fn update_private_state(state: Option<PrivateState>, event: &MemoryEvent) -> Result<PrivateState, MemoryError> {
    if let MemoryEvent::Init { agent, inventory, position, work_region, assignments, h_max } = event {
        return Ok(PrivateState {
            agent: agent.clone(),
            inventory: inventory.clone(),
            task: TaskState { active_subtask: None, pending: assignments.clone() },
            position: PositionState { current: *position, work_region: *work_region },
            blockage: None,
            history: VecDeque::new(),
            h_max: (*h_max).max(1),
        });
    }
    let mut s = state.ok_or(MemoryError::Uninitialized)?;
    match event {
        MemoryEvent::Init { .. } => unreachable!(),
        MemoryEvent::Outcome(o) => apply_outcome(&mut s, o),
        MemoryEvent::RecoveryEntry(b) => {
            s.blockage = Some(b.clone());
        }
        MemoryEvent::ModeReset { active_subtask } => {
            s.task.active_subtask = *active_subtask;
            s.blockage = None;
        }
    }
    Ok(s)
}

fn apply_outcome(s: &mut PrivateState, o: &VerifiedOutcome) {
    let me = s.agent.clone();
    if o.agent != me {
        // Only inbound handovers from teammates concern this agent.
        let mut got = Vec::new();
        for d in &o.deltas {
            if let Delta::Inventory { agent, item, change } = d {
                if agent == &me {
                    s.inventory.apply_change(item, *change);
                    got.push(format!("received {change} {item} from {}", o.agent));
                }
            }
        }
        for g in got {
            s.remember(o.sim_time, g);
        }
        return;
    }
    if matches!(o.action, Action::Idle | Action::SendMessage { .. }) {
        return;
    }
    for d in &o.deltas {
        match d {
            Delta::Inventory { agent, item, change } if agent == &me => s.inventory.apply_change(item, *change),
            Delta::Moved { agent, to, .. } if agent == &me => s.position.current = *to,
            _ => {}
        }
    }
    let summary = match (&o.action, o.failure()) {
        (Action::Place { node }, None) => {
            s.task.pending.remove(node);
            if s.task.active_subtask == Some(*node) {
                s.task.active_subtask = None;
            }
            if s.blockage.as_ref().is_some_and(|b| b.node == *node) {
                s.blockage = None;
            }
            format!("placed {node}")
        }
        (Action::Place { node }, Some(reason)) => {
            let issue = match reason {
                FailureReason::MissingMaterial => Some(IssueType::MissingMaterial),
                FailureReason::PrerequisiteUnplaced => Some(IssueType::SupportFailure),
                _ => None,
            };
            if let (Some(issue), Some(item)) = (issue, s.task.pending.get(node).cloned()) {
                let missing = (issue == IssueType::MissingMaterial).then(|| MissingItem {
                    count: s.task.requirement(&item).saturating_sub(s.inventory.count(&item)).max(1),
                    item,
                });
                s.blockage = Some(BlockageRecord {
                    issue,
                    missing,
                    node: *node,
                    recovery_candidates: Vec::new(),
                    first_seen: o.sim_time,
                });
            }
            format!("failed place {node}: {}", reason_str(reason))
        }
        (action, None) => format!("{} ok", action_label(action)),
        (action, Some(reason)) => format!("failed {}: {}", action_label(action), reason_str(reason)),
    };
    s.remember(o.sim_time, summary);
}

fn reason_str(r: FailureReason) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn action_label(a: &Action) -> String {
    match a {
        Action::Move { target } => format!("move {target}"),
        Action::Place { node } => format!("place {node}"),
        Action::Collect { .. } => "collect".into(),
        Action::Craft { recipe } => format!("craft {recipe}"),
        Action::Smelt { recipe } => format!("smelt {recipe}"),
        Action::Transfer { item, count, to } => format!("transfer {count} {item} to {to}"),
        Action::SendMessage { message } => format!("send {}", message.protocol),
        Action::Skip { node } => format!("skip {node}"),
        Action::Idle => "idle".into(),
    }
}

/// Public episode knowledge an agent may consult when classifying a blockage.
#[derive(Debug, Clone, Copy)]
pub struct TaskContext<'a> {
    pub site: &'a Site,
    /// Owner of every blueprint node.
    pub owners: &'a BTreeMap<NodeId, AgentId>,
    /// Items the episode reserves to one agent's partition.
    pub designations: &'a BTreeMap<ItemId, AgentId>,
    pub stations: &'a [Station],
}

impl TaskContext<'_> {
    pub fn graph(&self) -> &TaskGraph {
        &self.site.graph
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedIssue {
    pub issue: IssueType,
    pub node: NodeId,
    pub missing: Option<MissingItem>,
}

/// Assigned nodes still unplaced according to the current view.
pub fn pending_nodes(state: &PrivateState, view: &WorldView) -> BTreeSet<NodeId> {
    state.task.pending.keys().filter(|n| !view.placed_nodes.contains(n)).copied().collect()
}

/// Pending nodes whose prerequisites are all placed.
pub fn ready_nodes(state: &PrivateState, view: &WorldView, graph: &TaskGraph) -> BTreeSet<NodeId> {
    pending_nodes(state, view).into_iter().filter(|n| graph.is_ready(*n, &view.placed_nodes)).collect()
}

/// Classifies the current blockage, if any, into one of the five structured
/// issue types. The highest-priority applicable type wins:
/// dependency_block, co_craft_required, transfer_needed, missing_material,
/// support_failure.
pub fn detect_issue(state: &PrivateState, view: &WorldView, ctx: &TaskContext<'_>) -> Option<DetectedIssue> {
    let graph = ctx.graph();
    let pending = pending_nodes(state, view);
    if pending.is_empty() {
        return None;
    }
    let ready = ready_nodes(state, view, graph);
    if ready.is_empty() {
        let blocked = pending.iter().copied().find(|n| {
            graph
                .prerequisites(*n)
                .any(|p| !view.placed_nodes.contains(&p) && ctx.owners.get(&p).is_some_and(|o| o != &state.agent))
        });
        return blocked.map(|node| DetectedIssue { issue: IssueType::DependencyBlock, node, missing: None });
    }
    let focus = *ready.first().expect("non-empty");
    let item = state.task.pending[&focus].clone();
    let held = state.inventory.count(&item);
    if held == 0 {
        let count = state.task.requirement(&item).saturating_sub(held).max(1);
        let missing = Some(MissingItem { item: item.clone(), count });
        let co_craft = ctx.site.recipes.iter().any(|r| {
            r.output.0 == item
                && r.inputs_held(&state.inventory)
                && r.station_required.as_ref().is_some_and(|kind| {
                    let of_kind: Vec<&Station> = ctx.stations.iter().filter(|s| &s.kind == kind).collect();
                    !of_kind.is_empty() && of_kind.iter().all(|s| !s.usable_by(&state.agent))
                })
        });
        let issue = if co_craft {
            IssueType::CoCraftRequired
        } else if ctx.designations.get(&item).is_some_and(|a| a != &state.agent) {
            IssueType::TransferNeeded
        } else {
            IssueType::MissingMaterial
        };
        return Some(DetectedIssue { issue, node: focus, missing });
    }
    match &state.blockage {
        Some(b) if b.issue == IssueType::SupportFailure && pending.contains(&b.node) && !ready.contains(&b.node) => {
            Some(DetectedIssue { issue: IssueType::SupportFailure, node: b.node, missing: None })
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalateRequest {
    pub item: ItemId,
    pub count: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub local: Vec<String>,
    pub escalate_request: Option<EscalateRequest>,
}

/// Bounded structured payload sent to the adjudicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionCard {
    pub issue: IssueType,
    pub features: FeatureVector,
    pub score_norm: f64,
    pub missing: Option<MissingItem>,
    pub candidates: Candidates,
}

impl DecisionCard {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("card serializes")
    }
}

/// Builds the decision card from the active blockage. Local options are the
/// recovery candidates plus an explicit wait option.
pub fn render_decision_card(
    state: &PrivateState,
    fv: FeatureVector,
    score_norm: f64,
    escalate_target: Option<&AgentId>,
) -> Result<DecisionCard, MemoryError> {
    let b = state.blockage.as_ref().ok_or(MemoryError::NoBlockage)?;
    let mut local: Vec<String> = b.recovery_candidates.iter().map(RecoveryStep::label).collect();
    local.push("local_skip_or_wait".into());
    let escalate_request = b.missing.as_ref().map(|m| EscalateRequest {
        item: m.item.clone(),
        count: m.count,
        target: escalate_target.cloned(),
    });
    Ok(DecisionCard {
        issue: b.issue,
        features: fv,
        score_norm,
        missing: b.missing.clone(),
        candidates: Candidates { local, escalate_request },
    })
}
