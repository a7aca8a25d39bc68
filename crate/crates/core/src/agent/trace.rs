//! Episode event log. Every metric is computed from this stream, and its JSONL
//! form carries simulation time only, so identical runs produce identical bytes.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::gate::{AdjudicatorExchange, FeatureVector, GateDecision};
use crate::memory::{IssueType, MissingItem, PrivateState};
use crate::protocol::{CoordinationMessage, CoordinationOutcome, CoordinationWindow, WindowState};
use crate::solver::{CooldownEntry, RecoveryPlan};
use crate::world::{Action, AgentId, ItemId, NodeId, VerifiedOutcome, WorldView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssuePhase {
    Detected,
    Recovery,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    LocalRecover,
    LocalSkip,
    Escalate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub id: u64,
    pub phase: IssuePhase,
    pub issue: IssueType,
    pub node: NodeId,
    pub missing: Option<MissingItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RecoveryPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_node: Option<NodeId>,
}

/// What the agent knew when the gate ran; enough to replay local planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub state: PrivateState,
    pub view: WorldView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub issue_id: u64,
    pub issue: IssueType,
    pub features: FeatureVector,
    pub decision: GateDecision,
    pub adjudicator: Option<AdjudicatorExchange>,
    /// Window opened as a result, if the escalation was carried out.
    pub window: Option<u64>,
    pub context: DecisionContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: u64,
    pub requester: AgentId,
    pub responder: AgentId,
    pub issue: IssueType,
    pub item: ItemId,
    pub count: u32,
    pub state: WindowState,
    pub opened_at: u64,
    pub deadline: u64,
    pub messages: usize,
    pub transfer_verified: bool,
}

impl From<&CoordinationWindow> for WindowRecord {
    fn from(w: &CoordinationWindow) -> Self {
        WindowRecord {
            window: w.id,
            requester: w.requester().clone(),
            responder: w.responder.clone(),
            issue: w.issue.issue,
            item: w.issue.item.clone(),
            count: w.count,
            state: w.state,
            opened_at: w.opened_at,
            deadline: w.deadline,
            messages: w.messages.len(),
            transfer_verified: w.transfer_verified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooldownRecord {
    pub issue: IssueType,
    pub outcome: CoordinationOutcome,
    #[serde(flatten)]
    pub entry: CooldownEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub reason: EndReason,
    pub completion: f64,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Action { action: Action, obs_digest: String },
    Outcome(VerifiedOutcome),
    Issue(IssueRecord),
    GateDecision(Box<GateRecord>),
    CoordinationMessage(CoordinationMessage),
    WindowState(WindowRecord),
    CooldownUpdate(CooldownRecord),
    EpisodeEnd(EpisodeEnd),
}

/// One JSONL line: `{step, agent, kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: u64,
    pub agent: Option<AgentId>,
    #[serde(flatten)]
    pub event: Event,
}

// A derived flattened reader would buffer the payload and lose integer map
// keys, so the payload is kept raw and decoded as an adjacently tagged event.
impl<'de> Deserialize<'de> for TraceEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Line {
            step: u64,
            agent: Option<AgentId>,
            kind: String,
            payload: Box<RawValue>,
        }
        let line = Line::deserialize(d)?;
        let kind = serde_json::to_string(&line.kind).map_err(D::Error::custom)?;
        let text = format!(r#"{{"kind":{kind},"payload":{}}}"#, line.payload.get());
        let event = serde_json::from_str(&text).map_err(D::Error::custom)?;
        Ok(TraceEvent { step: line.step, agent: line.agent, event })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Parse(usize, serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, step: u64, agent: Option<&AgentId>, event: Event) {
        self.events.push(TraceEvent { step, agent: agent.cloned(), event });
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            serde_json::to_writer(&mut out, e).expect("trace event serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| TraceError::Parse(i + 1, e)))
            .collect::<Result<_, _>>()?;
        Ok(Trace { events })
    }

    pub fn end(&self) -> Option<&EpisodeEnd> {
        self.events.iter().rev().find_map(|e| match &e.event {
            Event::EpisodeEnd(end) => Some(end),
            _ => None,
        })
    }

    pub fn gate_records(&self) -> impl Iterator<Item = &GateRecord> + '_ {
        self.events.iter().filter_map(|e| match &e.event {
            Event::GateDecision(g) => Some(g.as_ref()),
            _ => None,
        })
    }

    pub fn messages(&self) -> impl Iterator<Item = &CoordinationMessage> + '_ {
        self.events.iter().filter_map(|e| match &e.event {
            Event::CoordinationMessage(m) => Some(m),
            _ => None,
        })
    }

    pub fn actions(&self) -> impl Iterator<Item = (&AgentId, &Action)> + '_ {
        self.events.iter().filter_map(|e| match (&e.event, &e.agent) {
            (Event::Action { action, .. }, Some(a)) => Some((a, action)),
            _ => None,
        })
    }

    /// Every adjudicator exchange in order, for building a replay backend.
    pub fn exchanges(&self) -> impl Iterator<Item = &AdjudicatorExchange> + '_ {
        self.gate_records().filter_map(|g| g.adjudicator.as_ref())
    }
}
