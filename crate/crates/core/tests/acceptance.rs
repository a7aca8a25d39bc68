//! End-to-end acceptance suite. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line regardless of output capture.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use gatecoord::agent::{run_episode, Event, IssuePhase, RunConfig, Trace};
use gatecoord::cli::ablation_variants;
use gatecoord::gate::{
    escalation_score, gate_decide, normalize_score, BackendSpec, FeatureVector, GateConfig, GateThresholds,
    GateWeights, MockAdjudicator, ScriptedAdjudicator, ScriptedReply, TierToggles, Verdict,
};
use gatecoord::harness::{
    aggregate, calibrate, compute_metrics, run_suite, split_templates, CalibrationConfig, EpisodeMetrics,
};
use gatecoord::memory::IssueType;
use gatecoord::protocol::{
    open_window, settle_window, validate_message, CoordinationMessage, IssueRef, Protocol, Reason, MESSAGE_FIELDS,
};
use gatecoord::scenarios::{generate_dataset, validate_class_property, EpisodeSpec, Manifest, ScenarioClass};
use gatecoord::world::{apply_action, Action, AgentId, NodeId, Pos, SourceRef, World};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn suite(specs: &[EpisodeSpec], config: &RunConfig) -> (Vec<Trace>, Vec<EpisodeMetrics>) {
    let traces = run_suite(specs, config, &BackendSpec::Mock, jobs()).expect("suite runs");
    let metrics = traces.iter().zip(specs).map(|(t, s)| compute_metrics(t, s).unwrap()).collect();
    (traces, metrics)
}

fn score_range() -> Check {
    let start = Instant::now();
    let w = GateWeights::DEFAULT;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut nlo, mut nhi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut n = 0;
    for c in 0..4u8 {
        for r in 0..4u8 {
            for i in 0..4u8 {
                for l in 0..4u8 {
                    for h in 0..4u8 {
                        let fv = FeatureVector::new(c, r, i, l, h).unwrap();
                        let s = escalation_score(&fv, &w);
                        let z = normalize_score(s, &w).unwrap();
                        ensure((0.0..=1.0).contains(&z), format!("normalized {z} outside [0,1]"))?;
                        lo = lo.min(s);
                        hi = hi.max(s);
                        nlo = nlo.min(z);
                        nhi = nhi.max(z);
                        n += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(n == 1024, format!("{n} vectors"))?;
    ensure(lo == -9.0 && hi == 24.0, format!("raw range [{lo}, {hi}]"))?;
    ensure(nlo == 0.0 && nhi == 1.0, format!("normalized range [{nlo}, {nhi}]"))?;
    ensure(elapsed.as_secs_f64() < 1.0, format!("took {elapsed:?}"))?;
    Ok(format!("1024 vectors, raw [-9, 24], normalized [0, 1], {elapsed:?}"))
}

fn gray_zone(specs: &[EpisodeSpec]) -> Check {
    let mut cfg = RunConfig::default();
    cfg.gate.thresholds = GateThresholds::new(0.45, 0.45).unwrap();
    let (_, m) = suite(specs, &cfg);
    let calls: u64 = m.iter().map(|x| x.adjudicator_calls).sum();
    ensure(calls == 0, format!("{calls} calls with th=(0.45, 0.45)"))?;

    let (traces, _) = suite(specs, &RunConfig::default());
    let mut n = 0;
    for t in &traces {
        for g in t.gate_records().filter(|g| g.adjudicator.is_some()) {
            let z = g.decision.score_norm;
            ensure(z > 0.4 && z < 0.5, format!("call at score_norm {z}"))?;
            n += 1;
        }
    }
    ensure(n > 0, "default thresholds never reached the adjudicator")?;
    Ok(format!("0 calls at (0.45, 0.45); {n} calls at (0.4, 0.5), all inside the gray zone"))
}

fn dataset_audit(specs: &[EpisodeSpec]) -> Check {
    let m = Manifest::build(0, specs);
    ensure(m.total_episodes == 200, format!("{} episodes", m.total_episodes))?;
    for c in ScenarioClass::ALL {
        ensure(m.class_counts.get(&c) == Some(&50), format!("class {c:?}: {:?}", m.class_counts.get(&c)))?;
    }
    ensure(m.agent_counts.get(&2) == Some(&120), format!("two-agent {:?}", m.agent_counts.get(&2)))?;
    ensure(m.agent_counts.get(&3) == Some(&80), format!("three-agent {:?}", m.agent_counts.get(&3)))?;
    for s in specs {
        validate_class_property(s).map_err(|e| format!("{}: {e}", s.id()))?;
    }
    Ok("200 episodes, 50 per class, 120 two-agent / 80 three-agent, all class properties hold".into())
}

fn class_behaviour(specs: &[EpisodeSpec]) -> Check {
    let start = Instant::now();
    let (traces, metrics) = suite(specs, &RunConfig::default());
    let elapsed = start.elapsed();
    let of = |c: ScenarioClass| -> Vec<usize> { (0..specs.len()).filter(|&i| specs[i].class == c).collect() };

    let a = of(ScenarioClass::A);
    let a_metrics: Vec<EpisodeMetrics> = a.iter().map(|&i| metrics[i].clone()).collect();
    let lrr = aggregate(&a_metrics).unwrap().overall.lrr.unwrap_or(0.0);
    let silent = a.iter().filter(|&&i| metrics[i].msg == 0).count() as f64 / a.len() as f64;
    ensure(lrr >= 0.9, format!("class A LRR {lrr}"))?;
    ensure(silent >= 0.9, format!("class A silent share {silent}"))?;

    let b = of(ScenarioClass::B);
    let on_target = b
        .iter()
        .filter(|&&i| {
            let inj = &specs[i].injection;
            traces[i].events.iter().any(|e| match &e.event {
                Event::GateDecision(g) => {
                    g.window.is_some()
                        && e.agent.as_ref() == Some(&inj.agent)
                        && g.context.state.blockage.as_ref().is_some_and(|bl| bl.node == inj.node)
                }
                _ => false,
            })
        })
        .count() as f64
        / b.len() as f64;
    ensure(on_target >= 0.9, format!("class B escalation on bottleneck {on_target}"))?;

    let d = of(ScenarioClass::D);
    let mut max_windows = 0;
    for &i in &d {
        let mut per: BTreeMap<(AgentId, IssueType), BTreeSet<u64>> = BTreeMap::new();
        for e in &traces[i].events {
            if let Event::WindowState(w) = &e.event {
                per.entry((w.requester.clone(), w.issue)).or_default().insert(w.window);
            }
        }
        max_windows = max_windows.max(per.values().map(BTreeSet::len).max().unwrap_or(0));
    }
    ensure(max_windows <= 2, format!("class D: {max_windows} windows for one (agent, issue)"))?;
    let unfinished = traces.iter().filter(|t| t.end().is_none()).count();
    ensure(unfinished == 0, format!("{unfinished} non-terminating episodes"))?;
    let d_metrics: Vec<EpisodeMetrics> = d.iter().map(|&i| metrics[i].clone()).collect();
    let tsr_d = aggregate(&d_metrics).unwrap().overall.tsr;
    ensure(tsr_d > 0.0, "class D TSR is zero")?;
    ensure(elapsed.as_secs_f64() < 60.0, format!("suite took {elapsed:?}"))?;
    Ok(format!(
        "A: LRR {lrr:.3}, silent {:.0}%; B: bottleneck escalation {:.0}%; D: max {max_windows} windows, TSR {tsr_d:.3}; suite {elapsed:.2?}",
        silent * 100.0,
        on_target * 100.0
    ))
}

fn ablation_directions(specs: &[EpisodeSpec]) -> Check {
    let base = RunConfig { allow_unvalidated: true, ..RunConfig::default() };
    let mut by_name = BTreeMap::new();
    for (name, cfg) in ablation_variants(&base) {
        let (_, m) = suite(specs, &cfg);
        by_name.insert(name, m);
    }
    let msg = |n: &str| by_name[n].iter().map(|m| m.msg).sum::<u64>();
    let ecr = |n: &str| aggregate(&by_name[n]).unwrap().overall.ecr.unwrap_or(0.0);
    let (full, rule, none) = (msg("full"), msg("rule"), msg("without_gating"));
    ensure(full < rule && rule < none, format!("Msg full {full}, rule {rule}, no gating {none}"))?;
    let (ecr_full, ecr_none) = (ecr("full"), ecr("without_gating"));
    ensure(ecr_full > ecr_none, format!("ECR full {ecr_full} vs no gating {ecr_none}"))?;

    let uer = |w: [f64; 5]| {
        let mut cfg = base.clone();
        cfg.gate.weights = GateWeights::new(w);
        let (_, m) = suite(specs, &cfg);
        aggregate(&m).unwrap().overall.uer.unwrap_or(0.0)
    };
    let (u_star, u_no_l, u_equal) = (uer([4.0, 2.0, 2.0, 2.0, 1.0]), uer([4.0, 2.0, 2.0, 0.0, 1.0]), uer([1.0; 5]));
    ensure(u_no_l > u_star, format!("UER without L {u_no_l} vs default {u_star}"))?;
    ensure(u_equal > u_star, format!("UER equal weights {u_equal} vs default {u_star}"))?;
    Ok(format!(
        "Msg {full} < {rule} < {none}; ECR {ecr_full:.3} > {ecr_none:.3}; UER {u_star:.3} < {u_no_l:.3}, {u_equal:.3}"
    ))
}

/// Objective terms recomputed straight from trace events.
fn brute_cell(traces: &[Trace]) -> [f64; 4] {
    let n = traces.len() as f64;
    let mut tsr = 0.0;
    let mut times = Vec::new();
    let mut redundant = 0.0;
    let mut tokens = 0.0;
    for t in traces {
        tsr += t.end().unwrap().completion;
        let mut detected = BTreeMap::new();
        let mut resolved = BTreeMap::new();
        let (mut opened, mut good, mut tok) = (0u64, 0u64, 0u64);
        for e in &t.events {
            match &e.event {
                Event::Issue(r) if r.phase == IssuePhase::Detected => {
                    detected.insert(r.id, e.step);
                }
                Event::Issue(r) if r.phase == IssuePhase::Resolved => {
                    resolved.insert(r.id, e.step);
                }
                Event::WindowState(w) => {
                    if w.state == gatecoord::protocol::WindowState::Open {
                        opened += 1;
                    } else if w.state == gatecoord::protocol::WindowState::Fulfilled && w.transfer_verified {
                        good += 1;
                    }
                }
                Event::GateDecision(g) => tok += g.adjudicator.as_ref().map_or(0, |x| x.tokens),
                _ => {}
            }
        }
        let d: Vec<f64> =
            resolved.iter().filter_map(|(id, s)| detected.get(id).map(|d| s.saturating_sub(*d) as f64)).collect();
        if !d.is_empty() {
            times.push(d.iter().sum::<f64>() / d.len() as f64);
        }
        if opened > 0 {
            redundant += (opened - good) as f64 / opened as f64;
        }
        tokens += tok as f64;
    }
    let time = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
    [tsr / n, time, redundant / n, tokens / n]
}

fn calibration_oracle(specs: &[EpisodeSpec]) -> Check {
    let split = split_templates(specs.to_vec(), 0.5, 11).map_err(|e| e.to_string())?;
    ensure(split.calib.is_disjoint(&split.test), "template on both sides")?;
    let calib = split.calib_episodes();
    let test = split.test_episodes();
    ensure(calib.len() + test.len() == specs.len(), "split lost episodes")?;
    let sides: BTreeMap<u32, BTreeSet<bool>> = calib
        .iter()
        .map(|e| (e.template, true))
        .chain(test.iter().map(|e| (e.template, false)))
        .fold(BTreeMap::new(), |mut m, (t, side)| {
            m.entry(t).or_insert_with(BTreeSet::new).insert(side);
            m
        });
    ensure(sides.values().all(|s| s.len() == 1), "a template's seeds straddle the split")?;

    // Three calibration episodes per class.
    let mut picked = Vec::new();
    for c in ScenarioClass::ALL {
        picked.extend(calib.iter().filter(|e| e.class == c).step_by(7).take(3).cloned());
    }
    ensure(picked.len() == 12, format!("picked {}", picked.len()))?;
    let mut cal = CalibrationConfig::default();
    cal.weights.truncate(2);
    let cells = cal.cells();
    ensure(cells.len() == 8, format!("{} cells", cells.len()))?;
    let result =
        calibrate(&picked, &RunConfig::default(), &cal, &BackendSpec::Mock, jobs()).map_err(|e| e.to_string())?;

    let raw: Vec<[f64; 4]> = cells
        .iter()
        .map(|theta| {
            let mut cfg = RunConfig::default();
            cfg.gate.weights = theta.weights;
            cfg.gate.thresholds = theta.thresholds;
            let traces: Vec<Trace> = picked
                .iter()
                .map(|s| run_episode(s, &cfg, &mut MockAdjudicator::new(theta.thresholds)).unwrap())
                .collect();
            brute_cell(&traces)
        })
        .collect();
    let max = |k: usize| raw.iter().map(|r| r[k]).fold(0.0f64, f64::max);
    let (mt, mr, ml) = (max(1), max(2), max(3));
    let scale = |x: f64, m: f64| if m > 0.0 { x / m } else { 0.0 };
    let lambda = cal.lambda;
    let objectives: Vec<f64> = raw
        .iter()
        .map(|r| r[0] - lambda[0] * scale(r[1], mt) - lambda[1] * scale(r[2], mr) - lambda[2] * scale(r[3], ml))
        .collect();
    for (i, (row, obj)) in result.table.iter().zip(&objectives).enumerate() {
        ensure(row.stats.theta == cells[i], format!("row {i} out of order"))?;
        ensure(
            row.objective.to_bits() == obj.to_bits(),
            format!("cell {i}: objective {} vs oracle {obj}", row.objective),
        )?;
    }
    let mut best = 0;
    for i in 1..objectives.len() {
        if objectives[i] > objectives[best] {
            best = i;
        }
    }
    ensure(result.best == cells[best], format!("argmax {:?} vs oracle {:?}", result.best, cells[best]))?;
    Ok(format!(
        "8 cells x 12 episodes match the brute-force objective bit for bit; best weights {} th ({}, {})",
        result.best.weights, result.best.thresholds.t_low, result.best.thresholds.t_high
    ))
}

fn serve_adjudicator() -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
    let port = server.server_addr().to_ip().expect("ip address").port();
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let z = serde_json::from_str::<serde_json::Value>(&body)
                .ok()
                .and_then(|v| v["score_norm"].as_f64())
                .unwrap_or(0.0);
            let decision = if z >= 0.45 { "escalate" } else { "stay_local" };
            let reply = format!(r#"{{"decision":"{decision}","confidence":0.8}}"#);
            let _ = req.respond(tiny_http::Response::from_string(reply));
        }
    });
    format!("http://127.0.0.1:{port}/")
}

fn determinism_and_replay(specs: &[EpisodeSpec]) -> Check {
    let again = generate_dataset(0).map_err(|e| e.to_string())?;
    ensure(again == specs, "dataset generation is not reproducible")?;
    let script: Vec<ScriptedReply> = [Verdict::Escalate, Verdict::StayLocal, Verdict::Escalate]
        .iter()
        .map(|v| ScriptedReply {
            reply: Some(format!(r#"{{"decision":{},"confidence":1.0}}"#, serde_json::to_string(v).unwrap())),
            error: None,
        })
        .collect();
    let backend = BackendSpec::Scripted(script);
    let cfg = RunConfig::default();
    let a = run_suite(specs, &cfg, &backend, jobs()).map_err(|e| e.to_string())?;
    let b = run_suite(&again, &cfg, &backend, 1).map_err(|e| e.to_string())?;
    for (x, y) in a.iter().zip(&b) {
        ensure(x.to_jsonl() == y.to_jsonl(), "scripted runs differ")?;
    }

    let url = serve_adjudicator();
    let gray: Vec<EpisodeSpec> = specs.iter().filter(|s| s.class == ScenarioClass::C).take(12).cloned().collect();
    let mut calls = 0;
    for s in &gray {
        let remote = run_episode(s, &cfg, BackendSpec::Remote(url.clone()).build(cfg.gate.thresholds).as_mut())
            .map_err(|e| e.to_string())?;
        let exchanges: Vec<_> = remote.exchanges().cloned().collect();
        ensure(exchanges.iter().all(|x| x.error.is_none()), format!("{}: remote exchange failed", s.id()))?;
        calls += exchanges.len();
        let mut replay = ScriptedAdjudicator::from_exchanges(&exchanges);
        let replayed = run_episode(s, &cfg, &mut replay).map_err(|e| e.to_string())?;
        ensure(remote.to_jsonl() == replayed.to_jsonl(), format!("{}: replay differs", s.id()))?;
    }
    ensure(calls > 0, "remote backend was never consulted")?;
    Ok(format!(
        "200 scripted traces byte-identical; {} remote episodes ({calls} calls) replay byte-identically",
        gray.len()
    ))
}

const CASES: u32 = 10_000;

fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

fn score_verdict(fv: &FeatureVector, w: [f64; 5], th: GateThresholds) -> u8 {
    let cfg = GateConfig {
        weights: GateWeights::new(w),
        thresholds: th,
        tiers: TierToggles { rules: false, score: true, adjudicator: false },
        ..GateConfig::default()
    };
    let mut mock = MockAdjudicator::new(th);
    let (d, _) = gate_decide(IssueType::MissingMaterial, fv, &cfg, &mut mock, |_| unreachable!()).unwrap();
    u8::from(d.verdict == Verdict::Escalate)
}

fn monotonicity() -> Result<(), String> {
    let strat =
        (prop::array::uniform5(0u8..4), prop::array::uniform5(0.0f64..5.0), 0.0f64..1.0, 0.0f64..1.0, 0usize..5);
    runner()
        .run(&strat, |(mut f, mut w, a, b, k)| {
            f[k] = f[k].min(2);
            w[0] = w[0].max(0.1);
            let th = GateThresholds::new(a.min(b), a.max(b)).unwrap();
            let fv = FeatureVector::new(f[0], f[1], f[2], f[3], f[4]).unwrap();
            let mut g = f;
            g[k] += 1;
            let up = FeatureVector::new(g[0], g[1], g[2], g[3], g[4]).unwrap();
            let (s0, s1) = (escalation_score(&fv, &GateWeights::new(w)), escalation_score(&up, &GateWeights::new(w)));
            let (v0, v1) = (score_verdict(&fv, w, th), score_verdict(&up, w, th));
            if k < 3 {
                prop_assert!(s1 >= s0 && v1 >= v0);
            } else {
                prop_assert!(s1 <= s0 && v1 <= v0);
            }
            Ok(())
        })
        .map_err(|e| format!("monotonicity: {e}"))
}

fn random_action(spec: &EpisodeSpec, world: &World, pick: (u8, usize, usize, u32, i32, i32)) -> Action {
    let (kind, a, b, n, dx, dz) = pick;
    let agents: Vec<AgentId> = world.state.agents.keys().cloned().collect();
    let items: Vec<String> = world.item_totals().keys().cloned().collect();
    let recipes = &spec.site.recipes;
    match kind % 8 {
        0 => {
            let p = world.state.agents[&agents[a % agents.len()]].position;
            Action::Move { target: Pos { x: p.x + dx, y: 0, z: p.z + dz } }
        }
        1 => Action::Place { node: NodeId((b % (spec.site.blueprint.nodes.len() + 2)) as u32) },
        2 => Action::Collect { source: SourceRef::Source { index: b % (world.state.sources.len() + 1) } },
        3 => Action::Collect {
            source: SourceRef::Chest {
                index: b % (world.state.chests.len() + 1),
                item: items[a % items.len()].clone(),
            },
        },
        4 if !recipes.is_empty() => Action::Craft { recipe: recipes[b % recipes.len()].id.clone() },
        5 if !recipes.is_empty() => Action::Smelt { recipe: recipes[b % recipes.len()].id.clone() },
        6 => Action::Transfer { item: items[b % items.len()].clone(), count: n, to: agents[b % agents.len()].clone() },
        _ => Action::Idle,
    }
}

fn conservation(specs: &[EpisodeSpec]) -> Result<(), String> {
    let step = (any::<u8>(), 0usize..1000, 0usize..1000, 1u32..4, -6i32..7, -6i32..7);
    let strat = (0..specs.len(), prop::collection::vec(step, 1..6), 0usize..1000);
    runner()
        .run(&strat, |(e, steps, who)| {
            let spec = &specs[e];
            let mut world = spec.world().unwrap();
            let agents = spec.agents();
            for pick in steps {
                let agent = &agents[(who + pick.1) % agents.len()];
                let action = random_action(spec, &world, pick);
                let before = world.item_totals();
                let Ok((next, out)) = apply_action(&world, agent, &action) else {
                    continue;
                };
                world = next;
                let mut expected = before.clone();
                if out.succeeded() {
                    if let Action::Craft { recipe } | Action::Smelt { recipe } = &action {
                        let r = spec.site.recipe(recipe).unwrap();
                        for (item, k) in &r.inputs {
                            *expected.entry(item.clone()).or_insert(0) -= i64::from(*k);
                        }
                        *expected.entry(r.output.0.clone()).or_insert(0) += i64::from(r.output.1);
                        expected.retain(|_, v| *v != 0);
                    }
                }
                prop_assert_eq!(world.item_totals(), expected, "{:?}", action);
            }
            Ok(())
        })
        .map_err(|e| format!("conservation: {e}"))
}

fn schema_rejection() -> Result<(), String> {
    let strat = (0usize..3, 0usize..7, "[a-z_]{1,12}", any::<bool>(), 1u32..9, 0u64..500);
    runner()
        .run(&strat, |(mutation, field, extra, cannot, count, time)| {
            let msg = CoordinationMessage {
                protocol: if cannot { Protocol::CannotSupply } else { Protocol::RequestMaterial },
                from: AgentId::new("a0"),
                target: AgentId::new("a1"),
                item: "oak_log".into(),
                count,
                reason: if cannot { Reason::NoSurplus } else { Reason::NeedForNode },
                time,
            };
            let mut raw = serde_json::to_value(&msg).unwrap();
            prop_assert!(validate_message(&raw).is_ok());
            let obj = raw.as_object_mut().unwrap();
            let name = MESSAGE_FIELDS[field];
            match mutation {
                0 => {
                    obj.remove(name);
                }
                1 => {
                    prop_assume!(!MESSAGE_FIELDS.contains(&extra.as_str()));
                    obj.insert(extra, serde_json::json!(1));
                }
                _ => {
                    prop_assume!(!MESSAGE_FIELDS.contains(&extra.as_str()));
                    let v = obj.remove(name).unwrap();
                    obj.insert(extra, v);
                }
            }
            prop_assert!(validate_message(&raw).is_err());
            Ok(())
        })
        .map_err(|e| format!("schema: {e}"))
}

fn window_termination(specs: &[EpisodeSpec]) -> Result<(), String> {
    let world = specs[0].world().unwrap();
    let protocols =
        [Protocol::OfferTransfer, Protocol::ConfirmTransfer, Protocol::CannotSupply, Protocol::RequestMaterial];
    let strat = (1u64..40, 0u64..100, prop::collection::vec((0usize..4, any::<bool>()), 0..6));
    runner()
        .run(&strat, |(timeout, start, msgs)| {
            let (a0, a1) = (AgentId::new("a0"), AgentId::new("a1"));
            let issue = IssueRef { agent: a0.clone(), issue: IssueType::MissingMaterial, item: "oak_log".into() };
            let mut w = open_window(1, issue, a1.clone(), 1, start, timeout).unwrap();
            let mut now = start;
            for (p, from_requester) in msgs {
                let (from, target) = if from_requester { (a0.clone(), a1.clone()) } else { (a1.clone(), a0.clone()) };
                let m = CoordinationMessage {
                    protocol: protocols[p],
                    from,
                    target,
                    item: "oak_log".into(),
                    count: 1,
                    reason: Reason::NeedForNode,
                    time: now,
                };
                let _ = w.push(m);
            }
            let mut closed_at = None;
            while now <= start + timeout {
                let (next, _, outcome) = settle_window(&w, &world, now);
                w = next;
                if outcome.is_some() {
                    closed_at = Some(now);
                    break;
                }
                now += 1;
            }
            prop_assert!(closed_at.is_some_and(|t| t <= start + timeout));
            prop_assert!(!w.is_open());
            Ok(())
        })
        .map_err(|e| format!("window: {e}"))
}

fn property_fuzz(specs: &[EpisodeSpec]) -> Check {
    monotonicity()?;
    conservation(specs)?;
    schema_rejection()?;
    window_termination(specs)?;
    Ok(format!("{CASES} cases each: score monotonicity, item conservation, schema rejection, window termination"))
}

fn main() {
    let specs = generate_dataset(0).expect("dataset generates");
    let criteria: Vec<Criterion> = vec![
        ("score range", Box::new(score_range)),
        ("gray-zone discipline", Box::new(|| gray_zone(&specs))),
        ("dataset audit", Box::new(|| dataset_audit(&specs))),
        ("class-conditional behaviour", Box::new(|| class_behaviour(&specs))),
        ("ablation directions", Box::new(|| ablation_directions(&specs))),
        ("calibration oracle", Box::new(|| calibration_oracle(&specs))),
        ("determinism and replay", Box::new(|| determinism_and_replay(&specs))),
        ("property fuzz", Box::new(|| property_fuzz(&specs))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
