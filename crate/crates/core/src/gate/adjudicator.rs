//! Gray-zone adjudicator backends. Every backend sees only the decision card
//! and must answer with `{"decision": .., "confidence": ..}` and nothing else.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdjudicatorVerdict, GateThresholds, Verdict};
use crate::memory::DecisionCard;

/// Token proxy: combined request and reply length in bytes, divided by four.
pub fn token_cost(request: &str, reply: Option<&str>) -> u64 {
    ((request.len() + reply.map_or(0, str::len)) / 4) as u64
}

/// Strict reply parser: exactly the two fields, no trailing text.
pub fn parse_reply(reply: &str) -> Result<AdjudicatorVerdict, String> {
    let v: AdjudicatorVerdict = serde_json::from_str(reply).map_err(|e| format!("malformed reply: {e}"))?;
    if !(0.0..=1.0).contains(&v.confidence) {
        return Err(format!("confidence {} outside [0, 1]", v.confidence));
    }
    Ok(v)
}

/// One recorded adjudicator call, complete enough to replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicatorExchange {
    pub request: String,
    pub reply: Option<String>,
    pub error: Option<String>,
    pub verdict: Option<AdjudicatorVerdict>,
    pub tokens: u64,
}

pub trait Adjudicator: Send {
    /// Produces the raw reply text for a serialized card.
    fn exchange(&mut self, card: &DecisionCard, request: &str) -> Result<String, String>;

    fn adjudicate(&mut self, card: &DecisionCard) -> AdjudicatorExchange {
        let request = String::from_utf8(card.to_bytes()).expect("json is utf-8");
        let (reply, error, verdict) = match self.exchange(card, &request) {
            Ok(reply) => match parse_reply(&reply) {
                Ok(v) => (Some(reply), None, Some(v)),
                Err(e) => (Some(reply), Some(e), None),
            },
            Err(e) => (None, Some(e), None),
        };
        let tokens = token_cost(&request, reply.as_deref());
        AdjudicatorExchange { request, reply, error, verdict, tokens }
    }
}

/// Deterministic stand-in: escalates iff the score reaches the gray-zone
/// midpoint, with confidence growing linearly away from it.
#[derive(Debug, Clone)]
pub struct MockAdjudicator {
    thresholds: GateThresholds,
}

impl MockAdjudicator {
    pub fn new(thresholds: GateThresholds) -> Self {
        MockAdjudicator { thresholds }
    }

    pub fn verdict(&self, score_norm: f64) -> AdjudicatorVerdict {
        let th = self.thresholds;
        let mid = th.midpoint();
        let decision = if score_norm >= mid { Verdict::Escalate } else { Verdict::StayLocal };
        let width = th.t_high - th.t_low;
        let confidence = if width > 0.0 { ((score_norm - mid).abs() * 2.0 / width).clamp(0.0, 1.0) } else { 1.0 };
        AdjudicatorVerdict { decision, confidence }
    }
}

impl Adjudicator for MockAdjudicator {
    fn exchange(&mut self, card: &DecisionCard, _request: &str) -> Result<String, String> {
        Ok(serde_json::to_string(&self.verdict(card.score_norm)).expect("verdict serializes"))
    }
}

/// A canned reply (or transport error) for the scripted backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Verdict(Verdict),
    Reply(ScriptedReply),
}

/// Replays a fixed sequence of replies regardless of the card.
#[derive(Debug, Clone)]
pub struct ScriptedAdjudicator {
    replies: VecDeque<ScriptedReply>,
}

impl ScriptedAdjudicator {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        ScriptedAdjudicator { replies: replies.into() }
    }

    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Self {
        Self::new(verdicts.into_iter().map(verdict_reply).collect())
    }

    /// Rebuilds a backend from recorded exchanges so a run can be replayed.
    pub fn from_exchanges<'a>(exchanges: impl IntoIterator<Item = &'a AdjudicatorExchange>) -> Self {
        Self::new(
            exchanges
                .into_iter()
                .map(|e| ScriptedReply {
                    reply: e.reply.clone(),
                    error: if e.reply.is_some() { None } else { e.error.clone() },
                })
                .collect(),
        )
    }

    /// Reads a JSON array whose entries are either a bare verdict
    /// (`"escalate"`) or `{"reply": .., "error": ..}`.
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(text).map_err(|e| format!("bad script: {e}"))?;
        Ok(Self::new(
            entries
                .into_iter()
                .map(|e| match e {
                    ScriptEntry::Verdict(v) => verdict_reply(v),
                    ScriptEntry::Reply(r) => r,
                })
                .collect(),
        ))
    }

    pub fn remaining(&self) -> usize {
        self.replies.len()
    }
}

fn verdict_reply(v: Verdict) -> ScriptedReply {
    let reply = serde_json::to_string(&AdjudicatorVerdict { decision: v, confidence: 1.0 }).expect("serializes");
    ScriptedReply { reply: Some(reply), error: None }
}

impl Adjudicator for ScriptedAdjudicator {
    fn exchange(&mut self, _card: &DecisionCard, _request: &str) -> Result<String, String> {
        match self.replies.pop_front() {
            Some(ScriptedReply { reply: Some(r), .. }) => Ok(r),
            Some(ScriptedReply { error: Some(e), .. }) => Err(e),
            _ => Err("script exhausted".into()),
        }
    }
}

/// Posts the card as JSON to an HTTP endpoint and returns the body verbatim.
pub struct RemoteAdjudicator {
    url: String,
    agent: ureq::Agent,
}

impl RemoteAdjudicator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        RemoteAdjudicator { url: url.into(), agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl Adjudicator for RemoteAdjudicator {
    fn exchange(&mut self, _card: &DecisionCard, request: &str) -> Result<String, String> {
        let resp = self.agent.post(&self.url).set("Content-Type", "application/json").send_string(request).map_err(
            |e| match e {
                ureq::Error::Status(code, _) => format!("http status {code}"),
                ureq::Error::Transport(t) => format!("transport error: {}", t.kind()),
            },
        )?;
        resp.into_string().map_err(|e| format!("read error: {e}"))
    }
}

/// Which backend an episode should construct.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock,
    Scripted(Vec<ScriptedReply>),
    Remote(String),
}

impl BackendSpec {
    /// Parses `mock`, `scripted:<file>` or `remote:<url>`.
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "mock" {
            return Ok(BackendSpec::Mock);
        }
        if let Some(path) = s.strip_prefix("scripted:") {
            let script = ScriptedAdjudicator::from_file(Path::new(path))?;
            return Ok(BackendSpec::Scripted(script.replies.into()));
        }
        if let Some(url) = s.strip_prefix("remote:") {
            if url.is_empty() {
                return Err("remote backend requires an endpoint".into());
            }
            return Ok(BackendSpec::Remote(url.to_string()));
        }
        Err(format!("unknown backend `{s}` (expected mock, scripted:<file> or remote:<url>)"))
    }

    pub fn build(&self, thresholds: GateThresholds) -> Box<dyn Adjudicator> {
        match self {
            BackendSpec::Mock => Box::new(MockAdjudicator::new(thresholds)),
            BackendSpec::Scripted(r) => Box::new(ScriptedAdjudicator::new(r.clone())),
            BackendSpec::Remote(url) => Box::new(RemoteAdjudicator::new(url.clone(), Duration::from_secs(5))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock => f.write_str("mock"),
            BackendSpec::Scripted(r) => write!(f, "scripted({} replies)", r.len()),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}
