//! Public coordination layer: a closed message schema, short-lived windows
//! with deadlines, and the teammate reply policy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{IssueType, PrivateState};
use crate::world::{Action, AgentId, Inventory, ItemId, World};

/// Hard cap on messages exchanged inside one window.
pub const MAX_WINDOW_MESSAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    RequestMaterial,
    OfferTransfer,
    ConfirmTransfer,
    CannotSupply,
}

impl Protocol {
    pub const ALL: [Protocol; 4] =
        [Protocol::RequestMaterial, Protocol::OfferTransfer, Protocol::ConfirmTransfer, Protocol::CannotSupply];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::RequestMaterial => "REQUEST_MATERIAL",
            Protocol::OfferTransfer => "OFFER_TRANSFER",
            Protocol::ConfirmTransfer => "CONFIRM_TRANSFER",
            Protocol::CannotSupply => "CANNOT_SUPPLY",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    NeedForNode,
    HandoverComplete,
    NoSurplus,
    Timeout,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::NeedForNode => "need_for_node",
            Reason::HandoverComplete => "handover_complete",
            Reason::NoSurplus => "no_surplus",
            Reason::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinationMessage {
    pub protocol: Protocol,
    pub from: AgentId,
    pub target: AgentId,
    pub item: ItemId,
    pub count: u32,
    pub reason: Reason,
    pub time: u64,
}

pub const MESSAGE_FIELDS: [&str; 7] = ["protocol", "from", "target", "item", "count", "reason", "time"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaViolation {
    #[error("message is not a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unexpected field `{0}`")]
    UnexpectedField(String),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("unknown reason `{0}`")]
    UnknownReason(String),
    #[error("count must be a positive integer")]
    BadCount,
    #[error("field `{0}` has the wrong type")]
    WrongType(String),
    #[error("sender and target are the same agent")]
    SelfAddressed,
}

/// Checks a raw board record against the seven-field schema.
pub fn validate_message(raw: &serde_json::Value) -> Result<CoordinationMessage, SchemaViolation> {
    let obj = raw.as_object().ok_or(SchemaViolation::NotAnObject)?;
    for key in obj.keys() {
        if !MESSAGE_FIELDS.contains(&key.as_str()) {
            return Err(SchemaViolation::UnexpectedField(key.clone()));
        }
    }
    for f in MESSAGE_FIELDS {
        if !obj.contains_key(f) {
            return Err(SchemaViolation::MissingField(f.to_string()));
        }
    }
    let text = |f: &str| obj[f].as_str().ok_or_else(|| SchemaViolation::WrongType(f.to_string()));
    let proto = text("protocol")?;
    if !Protocol::ALL.iter().any(|p| p.as_str() == proto) {
        return Err(SchemaViolation::UnknownProtocol(proto.to_string()));
    }
    let reason = text("reason")?;
    if !["need_for_node", "handover_complete", "no_surplus", "timeout"].contains(&reason) {
        return Err(SchemaViolation::UnknownReason(reason.to_string()));
    }
    text("from")?;
    text("target")?;
    text("item")?;
    match obj["count"].as_u64() {
        Some(n) if n >= 1 && n <= u64::from(u32::MAX) => {}
        _ => return Err(SchemaViolation::BadCount),
    }
    if obj["time"].as_u64().is_none() {
        return Err(SchemaViolation::WrongType("time".into()));
    }
    let msg: CoordinationMessage =
        serde_json::from_value(raw.clone()).map_err(|_| SchemaViolation::WrongType("message".into()))?;
    validate_typed(&msg)?;
    Ok(msg)
}

/// Checks the invariants a well-typed message must still satisfy.
pub fn validate_typed(msg: &CoordinationMessage) -> Result<(), SchemaViolation> {
    if msg.count == 0 {
        return Err(SchemaViolation::BadCount);
    }
    if msg.from == msg.target {
        return Err(SchemaViolation::SelfAddressed);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowState {
    Open,
    Fulfilled,
    CannotSupply,
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinationOutcome {
    Fulfilled,
    CannotSupply,
    Timeout,
}

impl CoordinationOutcome {
    pub fn window_state(self) -> WindowState {
        match self {
            CoordinationOutcome::Fulfilled => WindowState::Fulfilled,
            CoordinationOutcome::CannotSupply => WindowState::CannotSupply,
            CoordinationOutcome::Timeout => WindowState::TimedOut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRef {
    pub agent: AgentId,
    pub issue: IssueType,
    pub item: ItemId,
}

/// Where an open window stands, read from its last message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStage {
    AwaitingReply,
    Offered,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationWindow {
    pub id: u64,
    pub issue: IssueRef,
    pub responder: AgentId,
    pub count: u32,
    pub opened_at: u64,
    pub deadline: u64,
    pub messages: Vec<CoordinationMessage>,
    pub state: WindowState,
    /// Set once the responder's transfer to the requester is verified.
    pub transfer_verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("a window is already open for {0} / {1:?}")]
    DuplicateWindow(AgentId, IssueType),
    #[error("window {0} is closed")]
    WindowClosed(u64),
    #[error("window {0} reached its message cap")]
    MessageCap(u64),
    #[error("unknown window {0}")]
    UnknownWindow(u64),
    #[error("schema violation: {0}")]
    Schema(#[from] SchemaViolation),
}

impl CoordinationWindow {
    pub fn requester(&self) -> &AgentId {
        &self.issue.agent
    }

    pub fn is_open(&self) -> bool {
        self.state == WindowState::Open
    }

    pub fn stage(&self) -> WindowStage {
        match self.messages.last().map(|m| m.protocol) {
            Some(Protocol::OfferTransfer) => WindowStage::Offered,
            Some(Protocol::ConfirmTransfer) => WindowStage::Confirmed,
            Some(Protocol::CannotSupply) => WindowStage::Rejected,
            _ => WindowStage::AwaitingReply,
        }
    }

    pub fn push(&mut self, msg: CoordinationMessage) -> Result<(), ProtocolError> {
        validate_typed(&msg)?;
        if !self.is_open() {
            return Err(ProtocolError::WindowClosed(self.id));
        }
        if self.messages.len() >= MAX_WINDOW_MESSAGES {
            return Err(ProtocolError::MessageCap(self.id));
        }
        self.messages.push(msg);
        Ok(())
    }

    /// The first message a window carries.
    pub fn request(&self) -> &CoordinationMessage {
        &self.messages[0]
    }
}

/// Opens a window and enqueues its REQUEST_MATERIAL.
pub fn open_window(
    id: u64,
    issue: IssueRef,
    responder: AgentId,
    count: u32,
    now: u64,
    timeout: u64,
) -> Result<CoordinationWindow, ProtocolError> {
    let request = CoordinationMessage {
        protocol: Protocol::RequestMaterial,
        from: issue.agent.clone(),
        target: responder.clone(),
        item: issue.item.clone(),
        count,
        reason: Reason::NeedForNode,
        time: now,
    };
    validate_typed(&request)?;
    Ok(CoordinationWindow {
        id,
        issue,
        responder,
        count,
        opened_at: now,
        deadline: now + timeout,
        messages: vec![request],
        state: WindowState::Open,
        transfer_verified: false,
    })
}

/// Reply to a material request: offer when the responder's surplus covers it.
pub fn respond_policy(responder: &PrivateState, request: &CoordinationMessage, now: u64) -> CoordinationMessage {
    let surplus = responder.surplus(&request.item);
    let (protocol, reason) = if surplus >= request.count {
        (Protocol::OfferTransfer, Reason::NeedForNode)
    } else {
        (Protocol::CannotSupply, Reason::NoSurplus)
    };
    CoordinationMessage {
        protocol,
        from: responder.agent.clone(),
        target: request.from.clone(),
        item: request.item.clone(),
        count: request.count,
        reason,
        time: now,
    }
}

/// Advances a window: decides its terminal state if reached and, while
/// confirmed, the responder's next action (approach, then hand over).
pub fn settle_window(
    window: &CoordinationWindow,
    world: &World,
    now: u64,
) -> (CoordinationWindow, Option<Action>, Option<CoordinationOutcome>) {
    let mut w = window.clone();
    if !w.is_open() {
        return (w, None, None);
    }
    let outcome = if w.transfer_verified {
        Some(CoordinationOutcome::Fulfilled)
    } else if w.stage() == WindowStage::Rejected {
        Some(CoordinationOutcome::CannotSupply)
    } else if now >= w.deadline {
        Some(CoordinationOutcome::Timeout)
    } else {
        None
    };
    if let Some(o) = outcome {
        w.state = o.window_state();
        return (w, None, Some(o));
    }
    let action = (w.stage() == WindowStage::Confirmed).then(|| responder_action(&w, world)).flatten();
    (w, action, None)
}

fn responder_action(w: &CoordinationWindow, world: &World) -> Option<Action> {
    let from = world.state.agents.get(&w.responder)?;
    let to = world.state.agents.get(w.requester())?;
    if from.position.dist(&to.position) <= world.params.interaction_radius {
        Some(Action::Transfer { item: w.issue.item.clone(), count: w.count, to: w.requester().clone() })
    } else {
        Some(Action::Move { target: to.position })
    }
}

/// Teammate surplus as advertised on the board through OFFER_TRANSFER.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeamPublicView {
    pub advertised: BTreeMap<AgentId, Inventory>,
}

impl TeamPublicView {
    pub fn advertised_holders(&self, item: &str) -> impl Iterator<Item = &AgentId> + '_ {
        let item = item.to_string();
        self.advertised.iter().filter(move |(_, inv)| inv.count(&item) > 0).map(|(a, _)| a)
    }
}

/// The episode's public board: every window and every message ever posted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PublicBoard {
    pub windows: Vec<CoordinationWindow>,
}

impl PublicBoard {
    pub fn open(
        &mut self,
        issue: IssueRef,
        responder: AgentId,
        count: u32,
        now: u64,
        timeout: u64,
    ) -> Result<u64, ProtocolError> {
        if self.windows.iter().any(|w| w.is_open() && w.issue.agent == issue.agent && w.issue.issue == issue.issue) {
            return Err(ProtocolError::DuplicateWindow(issue.agent, issue.issue));
        }
        let id = self.windows.len() as u64;
        self.windows.push(open_window(id, issue, responder, count, now, timeout)?);
        Ok(id)
    }

    pub fn window(&self, id: u64) -> Option<&CoordinationWindow> {
        self.windows.get(id as usize)
    }

    pub fn window_mut(&mut self, id: u64) -> Result<&mut CoordinationWindow, ProtocolError> {
        self.windows.get_mut(id as usize).ok_or(ProtocolError::UnknownWindow(id))
    }

    pub fn post(&mut self, id: u64, msg: CoordinationMessage) -> Result<(), ProtocolError> {
        self.window_mut(id)?.push(msg)
    }

    pub fn open_window_of(&self, agent: &AgentId) -> Option<&CoordinationWindow> {
        self.windows.iter().find(|w| w.is_open() && w.requester() == agent)
    }

    /// Open windows addressed to `agent`, oldest first.
    pub fn inbound(&self, agent: &AgentId) -> impl Iterator<Item = &CoordinationWindow> + '_ {
        let agent = agent.clone();
        self.windows.iter().filter(move |w| w.is_open() && w.responder == agent)
    }

    pub fn message_count(&self) -> usize {
        self.windows.iter().map(|w| w.messages.len()).sum()
    }

    /// Latest advertised offer per teammate, excluding `viewer`'s own.
    pub fn team_view(&self, viewer: &AgentId) -> TeamPublicView {
        let mut advertised: BTreeMap<AgentId, Inventory> = BTreeMap::new();
        for m in self.windows.iter().flat_map(|w| &w.messages) {
            if m.protocol == Protocol::OfferTransfer && &m.from != viewer {
                let inv = advertised.entry(m.from.clone()).or_default();
                let prev = inv.count(&m.item);
                inv.remove(&m.item, prev);
                inv.add(&m.item, m.count);
            }
        }
        TeamPublicView { advertised }
    }
}
