//! Per-agent decision chain: observe, update private memory, detect a
//! structured issue, gate it, then act locally or open a coordination window.

mod episode;
mod trace;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gate::{
    extract_features, gate_decide, validate_weights, Adjudicator, FeatureError, FeatureInputs, FeatureParams,
    FeatureVector, GateConfig, GateError, Verdict,
};
use crate::memory::{
    detect_issue, ready_nodes, render_decision_card, update_private_state, BlockageRecord, DetectedIssue, MemoryError,
    MemoryEvent, PrivateState, TaskContext,
};
use crate::protocol::{
    respond_policy, settle_window, CoordinationMessage, CoordinationOutcome, IssueRef, Protocol, ProtocolError,
    PublicBoard, Reason, WindowStage,
};
use crate::scenarios::{ResponderScript, SpecError};
use crate::solver::{local_skip, CooldownTable, RecoveryKind, RecoveryPlan, RecoveryStep, SolverError};
use crate::world::{Action, AgentId, ItemId, NodeId, RecipeKind, VerifiedOutcome, World, WorldError, WorldView};

pub use episode::{run_episode, run_episode_with_backend};
pub use trace::{
    CooldownRecord, DecisionContext, EndReason, EpisodeEnd, Event, GateRecord, IssuePhase, IssueRecord, Route, Trace,
    TraceError, TraceEvent, WindowRecord,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// Everything that parameterizes a run apart from the episode itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gate: GateConfig,
    /// Information isolation between agents.
    pub partition: bool,
    pub window_timeout: u64,
    pub cooldown_duration: u64,
    /// Maximum number of rounds; each round gives every agent one action.
    pub step_budget: u32,
    pub seed: u64,
    pub view_radius: f64,
    pub h_max: usize,
    pub features: FeatureParams,
    pub allow_unvalidated: bool,
    pub weight_band: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gate: GateConfig::default(),
            partition: true,
            window_timeout: 20,
            cooldown_duration: 30,
            step_budget: 200,
            seed: 0,
            view_radius: 50.0,
            h_max: crate::memory::DEFAULT_H_MAX,
            features: FeatureParams::default(),
            allow_unvalidated: false,
            weight_band: 1.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.step_budget == 0 {
            return Err(AgentError::Config("step_budget must be at least 1".into()));
        }
        if self.view_radius <= 0.0 {
            return Err(AgentError::Config("view_radius must be positive".into()));
        }
        let th = self.gate.thresholds;
        crate::gate::GateThresholds::new(th.t_low, th.t_high)?;
        if !self.allow_unvalidated {
            validate_weights(&self.gate.weights, self.weight_band).map_err(GateError::Unvalidated)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    Recovering,
    Coordinating,
    Skipping,
}

/// A recovery step being carried out, with per-pickup inventory targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivePlan {
    pub step: RecoveryStep,
    pub goals: Vec<u32>,
    pub started_at: u64,
    pub finished: bool,
}

impl ActivePlan {
    fn new(step: RecoveryStep, state: &PrivateState, now: u64) -> Self {
        let goals = step.pickups.iter().map(|p| state.inventory.count(&p.item) + p.count).collect();
        ActivePlan { step, goals, started_at: now, finished: false }
    }

    fn expired(&self, now: u64, agents: usize) -> bool {
        let allowance = (u64::from(self.step.estimated_cost) * 2 + 4) * agents as u64;
        now.saturating_sub(self.started_at) > allowance
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveIssue {
    id: u64,
    detected: DetectedIssue,
    last_gate: Option<(FeatureVector, Verdict)>,
}

fn same_instance(a: &DetectedIssue, b: &DetectedIssue) -> bool {
    a.issue == b.issue && a.node == b.node && a.missing.as_ref().map(|m| &m.item) == b.missing.as_ref().map(|m| &m.item)
}

#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: AgentId,
    pub state: PrivateState,
    pub assigned: BTreeSet<NodeId>,
    pub plan: Option<ActivePlan>,
    pub window: Option<u64>,
    pub mode: Mode,
    skip: Option<NodeId>,
    issue: Option<ActiveIssue>,
    inbox: Vec<VerifiedOutcome>,
    window_results: Vec<(u64, CoordinationOutcome)>,
}

impl AgentRuntime {
    pub fn new(state: PrivateState) -> Self {
        AgentRuntime {
            id: state.agent.clone(),
            assigned: state.task.pending.keys().copied().collect(),
            state,
            plan: None,
            window: None,
            mode: Mode::Standard,
            skip: None,
            issue: None,
            inbox: Vec::new(),
            window_results: Vec::new(),
        }
    }

    pub fn deliver(&mut self, outcome: VerifiedOutcome) {
        self.inbox.push(outcome);
    }

    pub fn notify_window(&mut self, window: u64, outcome: CoordinationOutcome) {
        self.window_results.push((window, outcome));
    }

    fn refresh_mode(&mut self) {
        self.mode = if self.plan.is_some() {
            Mode::Recovering
        } else if self.window.is_some() {
            Mode::Coordinating
        } else if self.skip.is_some() {
            Mode::Skipping
        } else {
            Mode::Standard
        };
    }
}

/// Shared episode resources an agent reads and mutates during its turn.
pub struct StepEnv<'a> {
    pub world: &'a World,
    pub board: &'a mut PublicBoard,
    pub cooldowns: &'a mut CooldownTable,
    pub config: &'a RunConfig,
    pub adjudicator: &'a mut dyn Adjudicator,
    pub ctx: TaskContext<'a>,
    pub script: ResponderScript,
    pub trace: &'a mut Trace,
    pub issue_counter: &'a mut u64,
}

impl StepEnv<'_> {
    fn now(&self) -> u64 {
        self.world.state.sim_time
    }

    fn post(&mut self, window: u64, msg: CoordinationMessage) -> Result<Action, AgentError> {
        self.board.post(window, msg.clone())?;
        let from = msg.from.clone();
        self.trace.push(self.now(), Some(&from), Event::CoordinationMessage(msg.clone()));
        Ok(Action::SendMessage { message: msg })
    }

    fn in_reach(&self, view: &WorldView, pos: &crate::world::Pos) -> bool {
        view.position.dist(pos) <= self.world.params.interaction_radius
    }

    fn work_on(&self, view: &WorldView, node: NodeId) -> Action {
        match self.world.site.blueprint.node(node) {
            Some(spec) if self.in_reach(view, &spec.position) => Action::Place { node },
            Some(spec) => Action::Move { target: spec.position },
            None => Action::Idle,
        }
    }
}

/// Short content digest of what the agent observed this turn.
pub fn observation_digest(view: &WorldView, board: Option<&PublicBoard>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(view).expect("view serializes"));
    if let Some(b) = board {
        h.update(serde_json::to_vec(b).expect("board serializes"));
    }
    hex::encode(&h.finalize()[..8])
}

/// One turn of one agent. Exactly one action is returned.
pub fn step(rt: &mut AgentRuntime, env: &mut StepEnv<'_>) -> Result<Action, AgentError> {
    let action = decide(rt, env)?;
    rt.refresh_mode();
    Ok(action)
}

fn decide(rt: &mut AgentRuntime, env: &mut StepEnv<'_>) -> Result<Action, AgentError> {
    let now = env.now();
    for o in std::mem::take(&mut rt.inbox) {
        if o.agent == rt.id && !o.succeeded() && rt.plan.is_some() {
            rt.plan = None;
        }
        rt.state = update_private_state(Some(rt.state.clone()), &MemoryEvent::Outcome(o))?;
    }
    let view = env.world.observe(&rt.id, env.config.view_radius, env.config.partition)?;

    if let Some(a) = responder_duty(rt, env, now)? {
        return Ok(a);
    }

    for (wid, outcome) in std::mem::take(&mut rt.window_results) {
        rt.window = None;
        let issue = env.board.window(wid).map(|w| w.issue.issue).ok_or(ProtocolError::UnknownWindow(wid))?;
        let entry = match outcome {
            CoordinationOutcome::Fulfilled => env.cooldowns.reset(&rt.id, issue),
            _ => env.cooldowns.register_failure(&rt.id, issue, outcome, now, env.config.cooldown_duration)?,
        };
        env.trace.push(now, Some(&rt.id), Event::CooldownUpdate(CooldownRecord { issue, outcome, entry }));
    }

    let Some(d) = detect_issue(&rt.state, &view, &env.ctx) else {
        resolve_issue(rt, env, now)?;
        rt.skip = None;
        let ready = ready_nodes(&rt.state, &view, env.ctx.graph());
        return Ok(ready.first().map_or(Action::Idle, |n| env.work_on(&view, *n)));
    };

    track_issue(rt, env, &d, now)?;

    if let Some(wid) = rt.window {
        let w = env.board.window(wid).ok_or(ProtocolError::UnknownWindow(wid))?.clone();
        if w.is_open() && w.stage() == WindowStage::Offered {
            let confirm = CoordinationMessage {
                protocol: Protocol::ConfirmTransfer,
                from: rt.id.clone(),
                target: w.responder.clone(),
                item: w.issue.item.clone(),
                count: w.count,
                reason: Reason::HandoverComplete,
                time: now,
            };
            return env.post(wid, confirm);
        }
        // Keep momentum while the window is pending.
        return Ok(skip_or_idle(rt, env, &view, d.node));
    }

    if let Some(a) = continue_plan(rt, env, &view, now) {
        return Ok(a);
    }

    let level = env.cooldowns.level(&rt.id, d.issue, now);
    let team = env.board.team_view(&rt.id);
    let (fv, plan) = extract_features(&FeatureInputs {
        state: &rt.state,
        view: &view,
        ctx: &env.ctx,
        team: &team,
        cooldown_level: level,
        params: env.config.features,
    })?;
    if let Some(b) = rt.state.blockage.as_mut() {
        b.recovery_candidates = plan.iter().flat_map(|p| p.steps.clone()).collect();
    }

    let active = rt.issue.as_ref().expect("issue tracked");
    let cached = active.last_gate.filter(|(f, _)| *f == fv).map(|(_, v)| v);
    let (verdict, mut record) = match cached {
        Some(v) => (v, None),
        None => {
            let target = choose_target(rt, env, &view, &d);
            let state = &rt.state;
            let (decision, exchange) = gate_decide(d.issue, &fv, &env.config.gate, &mut *env.adjudicator, |n| {
                render_decision_card(state, fv, n, target.as_ref()).expect("blockage present")
            })?;
            let record = GateRecord {
                issue_id: active.id,
                issue: d.issue,
                features: fv,
                decision,
                adjudicator: exchange,
                window: None,
                context: DecisionContext { state: rt.state.clone(), view: view.clone() },
            };
            (decision.verdict, Some(record))
        }
    };
    if let Some(a) = rt.issue.as_mut() {
        a.last_gate = Some((fv, verdict));
    }

    if verdict == Verdict::Escalate && d.issue.carries_item() && !env.cooldowns.hard_blocked(&rt.id, d.issue, now) {
        if let (Some(target), Some(missing)) = (choose_target(rt, env, &view, &d), d.missing.clone()) {
            let issue_ref = IssueRef { agent: rt.id.clone(), issue: d.issue, item: missing.item.clone() };
            let wid = env.board.open(issue_ref, target, missing.count, now, env.config.window_timeout)?;
            let w = env.board.window(wid).expect("just opened").clone();
            if let Some(r) = record.as_mut() {
                r.window = Some(wid);
            }
            if let Some(r) = record.take() {
                env.trace.push(now, Some(&rt.id), Event::GateDecision(Box::new(r)));
            }
            rt.window = Some(wid);
            rt.plan = None;
            push_issue(env, rt, &d, IssuePhase::Recovery, Some(Route::Escalate), None, None, now);
            env.trace.push(now, Some(&rt.id), Event::CoordinationMessage(w.request().clone()));
            env.trace.push(now, Some(&rt.id), Event::WindowState(WindowRecord::from(&w)));
            return Ok(Action::SendMessage { message: w.request().clone() });
        }
    }
    if let Some(r) = record {
        env.trace.push(now, Some(&rt.id), Event::GateDecision(Box::new(r)));
    }
    local_route(rt, env, &view, &d, plan, now)
}

fn responder_duty(rt: &mut AgentRuntime, env: &mut StepEnv<'_>, now: u64) -> Result<Option<Action>, AgentError> {
    let inbound: Vec<u64> = env.board.inbound(&rt.id).map(|w| w.id).collect();
    for wid in inbound {
        let w = env.board.window(wid).expect("listed").clone();
        match w.stage() {
            WindowStage::AwaitingReply => {
                let reply = match env.script {
                    ResponderScript::Silent => continue,
                    ResponderScript::Policy => respond_policy(&rt.state, w.request(), now),
                    ResponderScript::CannotSupply => CoordinationMessage {
                        protocol: Protocol::CannotSupply,
                        from: rt.id.clone(),
                        target: w.requester().clone(),
                        item: w.issue.item.clone(),
                        count: w.count,
                        reason: Reason::NoSurplus,
                        time: now,
                    },
                };
                return env.post(wid, reply).map(Some);
            }
            WindowStage::Confirmed => {
                if let (_, Some(a), _) = settle_window(&w, env.world, now) {
                    return Ok(Some(a));
                }
            }
            _ => {}
        }
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn push_issue(
    env: &mut StepEnv<'_>,
    rt: &AgentRuntime,
    d: &DetectedIssue,
    phase: IssuePhase,
    route: Option<Route>,
    plan: Option<RecoveryPlan>,
    skip_node: Option<NodeId>,
    now: u64,
) {
    let id = rt.issue.as_ref().map_or(0, |i| i.id);
    env.trace.push(
        now,
        Some(&rt.id),
        Event::Issue(IssueRecord {
            id,
            phase,
            issue: d.issue,
            node: d.node,
            missing: d.missing.clone(),
            route,
            plan,
            skip_node,
        }),
    );
}

fn resolve_issue(rt: &mut AgentRuntime, env: &mut StepEnv<'_>, now: u64) -> Result<(), AgentError> {
    if let Some(old) = rt.issue.clone() {
        push_issue(env, rt, &old.detected, IssuePhase::Resolved, None, None, None, now);
        rt.issue = None;
        rt.plan = None;
        rt.state = update_private_state(Some(rt.state.clone()), &MemoryEvent::ModeReset { active_subtask: None })?;
    }
    Ok(())
}

fn track_issue(rt: &mut AgentRuntime, env: &mut StepEnv<'_>, d: &DetectedIssue, now: u64) -> Result<(), AgentError> {
    let same = rt.issue.as_ref().is_some_and(|i| same_instance(&i.detected, d));
    if !same {
        resolve_issue(rt, env, now)?;
        *env.issue_counter += 1;
        rt.issue = Some(ActiveIssue { id: *env.issue_counter, detected: d.clone(), last_gate: None });
        push_issue(env, rt, d, IssuePhase::Detected, None, None, None, now);
    }
    let first_seen = if same { rt.state.blockage.as_ref().map_or(now, |b| b.first_seen) } else { now };
    let stale =
        rt.state.blockage.as_ref().is_none_or(|b| b.missing != d.missing || b.issue != d.issue || b.node != d.node);
    if stale {
        let record = BlockageRecord {
            issue: d.issue,
            missing: d.missing.clone(),
            node: d.node,
            recovery_candidates: Vec::new(),
            first_seen,
        };
        rt.state = update_private_state(Some(rt.state.clone()), &MemoryEvent::RecoveryEntry(record))?;
        if let Some(i) = rt.issue.as_mut() {
            i.detected = d.clone();
        }
    }
    Ok(())
}

/// Request target: a known holder of the item (nearest visible first), else
/// the nearest visible teammate.
fn choose_target(rt: &AgentRuntime, env: &StepEnv<'_>, view: &WorldView, d: &DetectedIssue) -> Option<AgentId> {
    let item: &ItemId = &d.missing.as_ref()?.item;
    let team = env.board.team_view(&rt.id);
    let inputs = FeatureInputs {
        state: &rt.state,
        view,
        ctx: &env.ctx,
        team: &team,
        cooldown_level: 0,
        params: env.config.features,
    };
    let holders = crate::gate::known_holders(&inputs, item);
    let dist = |a: &AgentId| view.teammate(a).map_or(f64::INFINITY, |t| t.distance);
    let best_holder = holders.iter().min_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.cmp(b)));
    if let Some(h) = best_holder {
        return Some(h.clone());
    }
    view.teammates
        .iter()
        .filter(|t| t.distance <= env.config.features.viable_radius)
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)))
        .map(|t| t.id.clone())
}

fn skip_or_idle(rt: &mut AgentRuntime, env: &mut StepEnv<'_>, view: &WorldView, blocked: NodeId) -> Action {
    match local_skip(&rt.state, env.ctx.graph(), &view.placed_nodes, blocked) {
        Some(n) => {
            rt.skip = Some(n);
            env.work_on(view, n)
        }
        None => {
            rt.skip = None;
            Action::Idle
        }
    }
}

fn local_route(
    rt: &mut AgentRuntime,
    env: &mut StepEnv<'_>,
    view: &WorldView,
    d: &DetectedIssue,
    plan: Option<RecoveryPlan>,
    now: u64,
) -> Result<Action, AgentError> {
    if let Some(p) = plan {
        rt.plan = Some(ActivePlan::new(p.first().clone(), &rt.state, now));
        push_issue(env, rt, d, IssuePhase::Recovery, Some(Route::LocalRecover), Some(p), None, now);
        if let Some(a) = continue_plan(rt, env, view, now) {
            return Ok(a);
        }
    }
    let before = rt.skip;
    let action = skip_or_idle(rt, env, view, d.node);
    if rt.skip.is_some() && rt.skip != before {
        push_issue(env, rt, d, IssuePhase::Recovery, Some(Route::LocalSkip), None, rt.skip, now);
    }
    Ok(action)
}

/// Next action of the active plan, or `None` once it is finished or stuck.
fn continue_plan(rt: &mut AgentRuntime, env: &StepEnv<'_>, view: &WorldView, now: u64) -> Option<Action> {
    let agents = env.world.state.agents.len();
    let plan = rt.plan.as_mut()?;
    if plan.finished || plan.expired(now, agents) {
        rt.plan = None;
        return None;
    }
    let inv = &rt.state.inventory;
    for (pk, goal) in plan.step.pickups.iter().zip(&plan.goals) {
        if inv.count(&pk.item) < *goal {
            return Some(if env.in_reach(view, &pk.position) {
                Action::Collect { source: pk.source.clone() }
            } else {
                Action::Move { target: pk.position }
            });
        }
    }
    if plan.step.kind == RecoveryKind::Collect {
        rt.plan = None;
        return None;
    }
    let recipe = plan.step.recipe.as_ref().and_then(|id| env.world.site.recipe(id))?;
    if !recipe.inputs_held(inv) {
        rt.plan = None;
        return None;
    }
    if let Some(st) = plan.step.station {
        if !env.in_reach(view, &st) {
            return Some(Action::Move { target: st });
        }
    }
    plan.finished = true;
    Some(match recipe.kind {
        RecipeKind::Craft => Action::Craft { recipe: recipe.id.clone() },
        RecipeKind::Smelt => Action::Smelt { recipe: recipe.id.clone() },
    })
}
