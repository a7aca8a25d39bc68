//! Three-tier escalation gate: hard rules, a weighted ordinal score with
//! asymmetric thresholds, and a bounded adjudicator for the gray zone.

mod adjudicator;
mod features;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{DecisionCard, IssueType};

pub use adjudicator::{
    parse_reply, token_cost, Adjudicator, AdjudicatorExchange, BackendSpec, MockAdjudicator, RemoteAdjudicator,
    ScriptedAdjudicator, ScriptedReply,
};
pub use features::{extract_features, known_holders, FeatureError, FeatureInputs, FeatureParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("feature {0} out of range: {1}")]
    FeatureRange(char, u8),
    #[error("degenerate weights: score range is empty")]
    DegenerateWeights,
    #[error("thresholds must satisfy 0 <= t_low <= t_high <= 1, got ({0}, {1})")]
    BadThresholds(f64, f64),
    #[error("weights violate the hierarchy: {0}")]
    Unvalidated(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct FeatureRepr {
    #[serde(rename = "C")]
    c: u8,
    #[serde(rename = "R")]
    r: u8,
    #[serde(rename = "I")]
    i: u8,
    #[serde(rename = "L")]
    l: u8,
    #[serde(rename = "H")]
    h: u8,
}

/// Ordinal escalation features, each in `0..=3`. Serializes as
/// `{"C":..,"R":..,"I":..,"L":..,"H":..}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "FeatureRepr", into = "FeatureRepr")]
pub struct FeatureVector {
    pub c: u8,
    pub r: u8,
    pub i: u8,
    pub l: u8,
    pub h: u8,
}

impl FeatureVector {
    pub fn new(c: u8, r: u8, i: u8, l: u8, h: u8) -> Result<Self, GateError> {
        for (name, v) in [('C', c), ('R', r), ('I', i), ('L', l), ('H', h)] {
            if v > 3 {
                return Err(GateError::FeatureRange(name, v));
            }
        }
        Ok(FeatureVector { c, r, i, l, h })
    }

    pub fn as_array(&self) -> [u8; 5] {
        [self.c, self.r, self.i, self.l, self.h]
    }

    /// Every vector of the 4^5 feature space, in lexicographic order.
    pub fn all() -> impl Iterator<Item = FeatureVector> {
        (0..1024u32).map(|k| {
            let d = |p: u32| ((k / 4u32.pow(p)) % 4) as u8;
            FeatureVector { c: d(4), r: d(3), i: d(2), l: d(1), h: d(0) }
        })
    }
}

impl TryFrom<FeatureRepr> for FeatureVector {
    type Error = GateError;
    fn try_from(r: FeatureRepr) -> Result<Self, GateError> {
        FeatureVector::new(r.c, r.r, r.i, r.l, r.h)
    }
}

impl From<FeatureVector> for FeatureRepr {
    fn from(f: FeatureVector) -> Self {
        FeatureRepr { c: f.c, r: f.r, i: f.i, l: f.l, h: f.h }
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{},{})", self.c, self.r, self.i, self.l, self.h)
    }
}

/// Feature weights `[wC, wR, wI, wL, wH]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct GateWeights {
    pub c: f64,
    pub r: f64,
    pub i: f64,
    pub l: f64,
    pub h: f64,
}

impl GateWeights {
    pub const DEFAULT: GateWeights = GateWeights { c: 4.0, r: 2.0, i: 2.0, l: 2.0, h: 1.0 };

    pub fn new(w: [f64; 5]) -> Self {
        w.into()
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.c, self.r, self.i, self.l, self.h]
    }

    /// Minimum and maximum attainable raw score.
    pub fn score_bounds(&self) -> (f64, f64) {
        (-3.0 * (self.l + self.h), 3.0 * (self.c + self.r + self.i))
    }
}

impl Default for GateWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl From<[f64; 5]> for GateWeights {
    fn from(w: [f64; 5]) -> Self {
        GateWeights { c: w[0], r: w[1], i: w[2], l: w[3], h: w[4] }
    }
}

impl From<GateWeights> for [f64; 5] {
    fn from(w: GateWeights) -> Self {
        w.as_array()
    }
}

impl fmt::Display for GateWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.as_array().map(|v| v.to_string());
        write!(f, "[{}]", a.join(","))
    }
}

/// Checks the weight hierarchy: wC dominates wR, wI and wL, which all exceed
/// wH and stay within `band` of each other.
pub fn validate_weights(w: &GateWeights, band: f64) -> Result<(), String> {
    if w.as_array().iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err("weights must be non-negative and finite".into());
    }
    if w.c <= w.r.max(w.i).max(w.l) {
        return Err(format!("wC={} must exceed max(wR, wI, wL)={}", w.c, w.r.max(w.i).max(w.l)));
    }
    if w.r.min(w.i).min(w.l) <= w.h {
        return Err(format!("min(wR, wI, wL)={} must exceed wH={}", w.r.min(w.i).min(w.l), w.h));
    }
    if (w.r - w.i).abs() > band {
        return Err(format!("|wR - wI|={} exceeds band {}", (w.r - w.i).abs(), band));
    }
    if (w.i - w.l).abs() > band {
        return Err(format!("|wI - wL|={} exceeds band {}", (w.i - w.l).abs(), band));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GateThresholds {
    pub t_low: f64,
    pub t_high: f64,
}

impl GateThresholds {
    pub const DEFAULT: GateThresholds = GateThresholds { t_low: 0.4, t_high: 0.5 };

    pub fn new(t_low: f64, t_high: f64) -> Result<Self, GateError> {
        if !(0.0..=1.0).contains(&t_low) || !(0.0..=1.0).contains(&t_high) || t_low > t_high {
            return Err(GateError::BadThresholds(t_low, t_high));
        }
        Ok(GateThresholds { t_low, t_high })
    }

    pub fn midpoint(&self) -> f64 {
        (self.t_low + self.t_high) / 2.0
    }

    pub fn in_gray_zone(&self, norm: f64) -> bool {
        self.t_low < norm && norm < self.t_high
    }
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Raw score `wC·C + wR·R + wI·I − wL·L − wH·H`.
pub fn escalation_score(fv: &FeatureVector, w: &GateWeights) -> f64 {
    w.c * f64::from(fv.c) + w.r * f64::from(fv.r) + w.i * f64::from(fv.i)
        - w.l * f64::from(fv.l)
        - w.h * f64::from(fv.h)
}

/// Linear map of the raw score onto `[0, 1]` over the weight-implied bounds.
pub fn normalize_score(raw: f64, w: &GateWeights) -> Result<f64, GateError> {
    let (lo, hi) = w.score_bounds();
    if hi - lo <= 0.0 {
        return Err(GateError::DegenerateWeights);
    }
    Ok(((raw - lo) / (hi - lo)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StayLocal,
    Escalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Rule,
    Score,
    Adjudicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub tier: Tier,
    pub score_raw: f64,
    pub score_norm: f64,
    pub adjudicator_confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjudicatorVerdict {
    pub decision: Verdict,
    pub confidence: f64,
}

/// Individually switchable hard rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub stay_recoverable: bool,
    pub escalate_critical: bool,
    pub escalate_collaborative: bool,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet { stay_recoverable: true, escalate_critical: true, escalate_collaborative: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierToggles {
    pub rules: bool,
    pub score: bool,
    pub adjudicator: bool,
}

impl TierToggles {
    pub const ALL: TierToggles = TierToggles { rules: true, score: true, adjudicator: true };
    pub const NONE: TierToggles = TierToggles { rules: false, score: false, adjudicator: false };
}

impl Default for TierToggles {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub weights: GateWeights,
    pub thresholds: GateThresholds,
    pub tiers: TierToggles,
    #[serde(default)]
    pub rules: RuleSet,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            weights: GateWeights::DEFAULT,
            thresholds: GateThresholds::DEFAULT,
            tiers: TierToggles::ALL,
            rules: RuleSet::default(),
        }
    }
}

/// Deterministic hard rules evaluated before scoring.
pub fn tier1_rules(issue: IssueType, fv: &FeatureVector, rules: &RuleSet) -> Option<Verdict> {
    if rules.stay_recoverable && fv.l == 3 && fv.c <= 1 {
        return Some(Verdict::StayLocal);
    }
    if rules.escalate_critical && fv.c == 3 && fv.l == 0 && fv.h == 0 {
        return Some(Verdict::Escalate);
    }
    if rules.escalate_collaborative
        && matches!(issue, IssueType::TransferNeeded | IssueType::CoCraftRequired)
        && fv.r >= 2
        && fv.h <= 1
    {
        return Some(Verdict::Escalate);
    }
    None
}

/// Runs the gate. The adjudicator is consulted at most once, and only when no
/// rule fires and the normalized score falls strictly inside the gray zone.
/// `card` builds the adjudicator payload from the normalized score.
pub fn gate_decide(
    issue: IssueType,
    fv: &FeatureVector,
    cfg: &GateConfig,
    adjudicator: &mut dyn Adjudicator,
    card: impl FnOnce(f64) -> DecisionCard,
) -> Result<(GateDecision, Option<AdjudicatorExchange>), GateError> {
    let score_raw = escalation_score(fv, &cfg.weights);
    let score_norm = normalize_score(score_raw, &cfg.weights)?;
    let decided = |verdict, tier| GateDecision { verdict, tier, score_raw, score_norm, adjudicator_confidence: None };
    let th = &cfg.thresholds;
    let t = &cfg.tiers;
    if t.rules {
        if let Some(v) = tier1_rules(issue, fv, &cfg.rules) {
            return Ok((decided(v, Tier::Rule), None));
        }
    }
    if t.score {
        if score_norm <= th.t_low {
            return Ok((decided(Verdict::StayLocal, Tier::Score), None));
        }
        if score_norm >= th.t_high {
            return Ok((decided(Verdict::Escalate, Tier::Score), None));
        }
        if !t.adjudicator {
            // Without an adjudicator the gray zone is split at its midpoint.
            let v = if score_norm >= th.midpoint() { Verdict::Escalate } else { Verdict::StayLocal };
            return Ok((decided(v, Tier::Score), None));
        }
    }
    if t.adjudicator {
        let exchange = adjudicator.adjudicate(&card(score_norm));
        let (verdict, confidence) = match &exchange.verdict {
            Some(v) => (v.decision, v.confidence),
            None => (Verdict::StayLocal, 0.0),
        };
        let d = GateDecision {
            verdict,
            tier: Tier::Adjudicator,
            score_raw,
            score_norm,
            adjudicator_confidence: Some(confidence),
        };
        return Ok((d, Some(exchange)));
    }
    // No enabled tier could decide: communication-first default.
    Ok((decided(Verdict::Escalate, Tier::Rule), None))
}
