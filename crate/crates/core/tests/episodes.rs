//! Whole-episode invariants over the generated suite.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use gatecoord::agent::{run_episode, EndReason, Event, RunConfig, Trace};
use gatecoord::gate::{BackendSpec, MockAdjudicator, ScriptedAdjudicator, ScriptedReply, Tier, Verdict};
use gatecoord::harness::{compute_metrics, run_suite};
use gatecoord::protocol::WindowState;
use gatecoord::scenarios::{generate_dataset, EpisodeSpec, ScenarioClass};

fn specs() -> &'static [EpisodeSpec] {
    static SPECS: OnceLock<Vec<EpisodeSpec>> = OnceLock::new();
    SPECS.get_or_init(|| generate_dataset(0).unwrap())
}

fn default_traces() -> &'static [Trace] {
    static TRACES: OnceLock<Vec<Trace>> = OnceLock::new();
    TRACES.get_or_init(|| run_suite(specs(), &RunConfig::default(), &BackendSpec::Mock, 4).unwrap())
}

fn of_class(c: ScenarioClass) -> Vec<EpisodeSpec> {
    specs().iter().filter(|s| s.class == c).cloned().collect()
}

#[test]
fn every_window_closes_by_its_deadline() {
    for t in default_traces() {
        let mut open: BTreeMap<u64, u64> = BTreeMap::new();
        for e in &t.events {
            if let Event::WindowState(w) = &e.event {
                if w.state == WindowState::Open {
                    open.insert(w.window, w.deadline);
                } else {
                    let deadline = open.remove(&w.window).expect("closed window was opened");
                    assert!(e.step <= deadline, "window {} closed at {} after deadline {deadline}", w.window, e.step);
                }
            }
        }
        assert!(open.is_empty(), "windows left open: {open:?}");
    }
}

#[test]
fn episodes_end_exactly_once_and_last() {
    for t in default_traces() {
        let ends = t.events.iter().filter(|e| matches!(e.event, Event::EpisodeEnd(_))).count();
        assert_eq!(ends, 1);
        assert!(matches!(t.events.last().unwrap().event, Event::EpisodeEnd(_)));
    }
}

#[test]
fn completed_episodes_report_full_completion() {
    for (t, s) in default_traces().iter().zip(specs()) {
        let end = t.end().unwrap();
        if end.reason == EndReason::Completed {
            assert_eq!(end.completion, 1.0, "{}", s.id());
        }
        if s.class != ScenarioClass::D {
            assert_eq!(end.reason, EndReason::Completed, "{}", s.id());
        }
    }
}

#[test]
fn every_message_passes_the_schema() {
    for t in default_traces() {
        for m in t.messages() {
            let raw = serde_json::to_value(m).unwrap();
            assert_eq!(&gatecoord::protocol::validate_message(&raw).unwrap(), m);
        }
    }
}

#[test]
fn adjudicator_that_always_stays_keeps_gray_cases_local() {
    let cfg = RunConfig::default();
    for spec in of_class(ScenarioClass::C).iter().take(10) {
        let mut adj = ScriptedAdjudicator::from_verdicts(vec![Verdict::StayLocal; 8]);
        let t = run_episode(spec, &cfg, &mut adj).unwrap();
        let m = compute_metrics(&t, spec).unwrap();
        assert!(m.adjudicator_calls >= 1, "{}", spec.id());
        assert_eq!(m.msg, 0, "{}", spec.id());
        assert_eq!(m.tsr, 1.0, "{}", spec.id());
    }
}

#[test]
fn adjudicator_failures_fall_back_to_staying_local() {
    let cfg = RunConfig::default();
    let spec = &of_class(ScenarioClass::C)[0];
    let broken = ScriptedReply { reply: Some("escalate, definitely".into()), error: None };
    let mut adj = ScriptedAdjudicator::new(vec![broken; 4]);
    let t = run_episode(spec, &cfg, &mut adj).unwrap();
    let g = t.gate_records().find(|g| g.adjudicator.is_some()).expect("gray case reaches the adjudicator");
    assert_eq!(g.decision.tier, Tier::Adjudicator);
    assert_eq!(g.decision.verdict, Verdict::StayLocal);
    assert!(g.adjudicator.as_ref().unwrap().error.is_some());
}

#[test]
fn withheld_material_is_requested_at_most_twice() {
    let cfg = RunConfig::default();
    for spec in of_class(ScenarioClass::D).iter().take(12) {
        let t = run_episode(spec, &cfg, &mut MockAdjudicator::new(cfg.gate.thresholds)).unwrap();
        let requests = t
            .messages()
            .filter(|m| m.protocol == gatecoord::protocol::Protocol::RequestMaterial && m.from == spec.injection.agent)
            .count();
        assert!(requests <= 2, "{}: {requests} requests", spec.id());
        assert!(t.end().unwrap().completion > 0.0, "{}", spec.id());
    }
}

#[test]
fn disabling_partition_does_not_change_class_a_outcomes() {
    let cfg = RunConfig { partition: false, ..RunConfig::default() };
    for spec in of_class(ScenarioClass::A).iter().take(10) {
        let t = run_episode(spec, &cfg, &mut MockAdjudicator::new(cfg.gate.thresholds)).unwrap();
        assert_eq!(t.end().unwrap().completion, 1.0);
        assert_eq!(t.messages().count(), 0);
    }
}

#[test]
fn ungated_agents_escalate_class_a_blockages() {
    let mut cfg = RunConfig::default();
    cfg.gate.tiers = gatecoord::gate::TierToggles::NONE;
    let escalated = of_class(ScenarioClass::A)
        .iter()
        .take(10)
        .filter(|spec| {
            let t = run_episode(spec, &cfg, &mut MockAdjudicator::new(cfg.gate.thresholds)).unwrap();
            let escalates = t.gate_records().any(|g| g.decision.verdict == Verdict::Escalate);
            escalates
        })
        .count();
    assert_eq!(escalated, 10);
}
