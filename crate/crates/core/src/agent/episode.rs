//! Round-robin episode driver. Agents act in id order; one round advances
//! simulation time by one.

use std::collections::BTreeMap;

use super::trace::{EndReason, EpisodeEnd, Event, Trace, WindowRecord};
use super::{observation_digest, step, AgentError, AgentRuntime, RunConfig, StepEnv};
use crate::gate::{Adjudicator, BackendSpec};
use crate::memory::{update_private_state, MemoryEvent, TaskContext};
use crate::protocol::{settle_window, PublicBoard, WindowStage};
use crate::scenarios::EpisodeSpec;
use crate::solver::CooldownTable;
use crate::world::{blueprint_completion, Action, AgentId, VerifiedOutcome, World};

/// Runs one episode to completion or budget exhaustion and returns its trace.
pub fn run_episode(
    spec: &EpisodeSpec,
    config: &RunConfig,
    adjudicator: &mut dyn Adjudicator,
) -> Result<Trace, AgentError> {
    config.validate()?;
    spec.validate()?;
    let mut world = spec.world()?;
    let stations = world.state.stations.clone();
    let ctx =
        TaskContext { site: &spec.site, owners: &spec.owners, designations: &spec.designations, stations: &stations };

    let mut runtimes: BTreeMap<AgentId, AgentRuntime> = BTreeMap::new();
    for id in spec.agents() {
        let body = world.agent(&id)?;
        let init = MemoryEvent::Init {
            agent: id.clone(),
            inventory: body.inventory.clone(),
            position: body.position,
            work_region: spec.work_regions.get(&id).copied().unwrap_or(crate::world::Region::point(body.position)),
            assignments: spec.assignments(&id),
            h_max: config.h_max,
        };
        runtimes.insert(id, AgentRuntime::new(update_private_state(None, &init)?));
    }
    let order: Vec<AgentId> = runtimes.keys().cloned().collect();

    let mut board = PublicBoard::default();
    let mut cooldowns = CooldownTable::default();
    let mut trace = Trace::default();
    let mut issue_counter = 0u64;
    let mut rounds = 0;

    'episode: while rounds < config.step_budget && !world.is_complete() {
        for id in &order {
            let now = world.state.sim_time;
            settle_open_windows(&mut board, &world, now, &mut trace, &mut runtimes);

            let view = world.observe(id, config.view_radius, config.partition)?;
            let obs_digest = observation_digest(&view, (!config.partition).then_some(&board));
            let rt = runtimes.get_mut(id).expect("runtime per agent");
            let action = {
                let mut env = StepEnv {
                    world: &world,
                    board: &mut board,
                    cooldowns: &mut cooldowns,
                    config,
                    adjudicator: &mut *adjudicator,
                    ctx,
                    script: spec.responder(id),
                    trace: &mut trace,
                    issue_counter: &mut issue_counter,
                };
                step(rt, &mut env)?
            };
            trace.push(now, Some(id), Event::Action { action: action.clone(), obs_digest });
            let outcome = world.apply(id, &action)?;
            trace.push(now, Some(id), Event::Outcome(outcome.clone()));
            mark_transfer(&mut board, &outcome);
            for a in outcome.touched_agents() {
                if let Some(r) = runtimes.get_mut(&a) {
                    r.deliver(outcome.clone());
                }
            }
            if world.is_complete() {
                rounds += 1;
                break 'episode;
            }
        }
        world.tick();
        rounds += 1;
    }

    let now = world.state.sim_time;
    let completion = blueprint_completion(&world.state, &spec.site.blueprint);
    let reason = if world.is_complete() { EndReason::Completed } else { EndReason::BudgetExhausted };
    trace.push(now, None, Event::EpisodeEnd(EpisodeEnd { reason, completion, rounds }));
    Ok(trace)
}

/// Builds the adjudicator from `backend` and runs the episode.
pub fn run_episode_with_backend(
    spec: &EpisodeSpec,
    config: &RunConfig,
    backend: &BackendSpec,
) -> Result<Trace, AgentError> {
    let mut adj = backend.build(config.gate.thresholds);
    run_episode(spec, config, adj.as_mut())
}

fn settle_open_windows(
    board: &mut PublicBoard,
    world: &World,
    now: u64,
    trace: &mut Trace,
    runtimes: &mut BTreeMap<AgentId, AgentRuntime>,
) {
    for i in 0..board.windows.len() {
        if !board.windows[i].is_open() {
            continue;
        }
        let (next, _, outcome) = settle_window(&board.windows[i], world, now);
        if let Some(o) = outcome {
            board.windows[i] = next;
            let w = &board.windows[i];
            trace.push(now, Some(w.requester()), Event::WindowState(WindowRecord::from(w)));
            if let Some(r) = runtimes.get_mut(w.requester()) {
                r.notify_window(w.id, o);
            }
        }
    }
}

/// A successful handover from the responder of a confirmed window to its
/// requester verifies that window.
fn mark_transfer(board: &mut PublicBoard, outcome: &VerifiedOutcome) {
    let Action::Transfer { item, to, .. } = &outcome.action else {
        return;
    };
    if !outcome.succeeded() {
        return;
    }
    if let Some(w) = board.windows.iter_mut().find(|w| {
        w.is_open()
            && w.stage() == WindowStage::Confirmed
            && w.responder == outcome.agent
            && w.requester() == to
            && &w.issue.item == item
    }) {
        w.transfer_verified = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::MockAdjudicator;
    use crate::scenarios::generate_dataset;

    #[test]
    fn traces_roundtrip_through_jsonl() {
        let specs = generate_dataset(0).unwrap();
        for spec in specs.iter().step_by(7) {
            let config = RunConfig::default();
            let mut adj = MockAdjudicator::new(config.gate.thresholds);
            let trace = run_episode(spec, &config, &mut adj).unwrap();
            let bytes = trace.to_jsonl();
            let back = Trace::from_jsonl(std::str::from_utf8(&bytes).unwrap()).unwrap();
            assert_eq!(back, trace, "{}", spec.id());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = &generate_dataset(3).unwrap()[155];
        let config = RunConfig::default();
        let run = || run_episode(spec, &config, &mut MockAdjudicator::new(config.gate.thresholds)).unwrap().to_jsonl();
        assert_eq!(run(), run());
    }
}
