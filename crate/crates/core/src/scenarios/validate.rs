//! Mechanical class checks: the injected blockage is reproduced from the
//! initial world, scored under the default gate, and compared with what its
//! class promises.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EpisodeSpec, ResponderScript, ScenarioClass, SpecError};
use crate::gate::{
    extract_features, gate_decide, FeatureInputs, FeatureParams, FeatureVector, GateConfig, GateDecision,
    MockAdjudicator, Verdict,
};
use crate::memory::{
    detect_issue, render_decision_card, update_private_state, BlockageRecord, DetectedIssue, MemoryEvent, PrivateState,
    TaskContext,
};
use crate::protocol::TeamPublicView;
use crate::solver::local_skip;
use crate::world::{ItemId, NodeId, Region, World};

/// Local plans above this cost do not count as a feasible local route.
pub const LOCAL_BUDGET: u32 = 30;
const MIN_BLOCKS: usize = 8;
const MAX_BLOCKS: usize = 40;
const MIN_DEPTH: usize = 2;
const MAX_DEPTH: usize = 6;

/// What the injected agent sees at its first decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbe {
    pub issue: DetectedIssue,
    pub features: FeatureVector,
    pub decision: GateDecision,
    pub local_plan_cost: Option<u32>,
    pub local_skip: Option<NodeId>,
    pub depth: usize,
}

/// Initial private state of `agent` as the episode driver builds it.
pub fn initial_state(
    spec: &EpisodeSpec,
    world: &World,
    agent: &crate::world::AgentId,
) -> Result<PrivateState, SpecError> {
    let body = world.agent(agent)?;
    let init = MemoryEvent::Init {
        agent: agent.clone(),
        inventory: body.inventory.clone(),
        position: body.position,
        work_region: spec.work_regions.get(agent).copied().unwrap_or(Region::point(body.position)),
        assignments: spec.assignments(agent),
        h_max: crate::memory::DEFAULT_H_MAX,
    };
    update_private_state(None, &init).map_err(|e| SpecError::Invalid(e.to_string()))
}

/// Reproduces the injected blockage from the initial world and runs the
/// default gate on it.
pub fn probe_injection(spec: &EpisodeSpec) -> Result<ClassProbe, SpecError> {
    let world = spec.world()?;
    let inj = &spec.injection;
    let mut state = initial_state(spec, &world, &inj.agent)?;
    let view = world.observe(&inj.agent, 50.0, true)?;
    let stations = world.state.stations.clone();
    let ctx =
        TaskContext { site: &spec.site, owners: &spec.owners, designations: &spec.designations, stations: &stations };
    let issue = detect_issue(&state, &view, &ctx)
        .ok_or_else(|| SpecError::Class("injected agent starts without a blockage".into()))?;
    if issue.node != inj.node || issue.missing.as_ref().map(|m| &m.item) != Some(&inj.item) {
        return Err(SpecError::Class(format!("first blockage is on {} rather than the injected node", issue.node)));
    }
    let record = BlockageRecord {
        issue: issue.issue,
        missing: issue.missing.clone(),
        node: issue.node,
        recovery_candidates: Vec::new(),
        first_seen: 0,
    };
    state = update_private_state(Some(state), &MemoryEvent::RecoveryEntry(record))
        .map_err(|e| SpecError::Invalid(e.to_string()))?;
    let team = TeamPublicView::default();
    let (features, plan) = extract_features(&FeatureInputs {
        state: &state,
        view: &view,
        ctx: &ctx,
        team: &team,
        cooldown_level: 0,
        params: FeatureParams::default(),
    })
    .map_err(|e| SpecError::Invalid(e.to_string()))?;
    let cfg = GateConfig::default();
    let mut mock = MockAdjudicator::new(cfg.thresholds);
    let (decision, _) = gate_decide(issue.issue, &features, &cfg, &mut mock, |n| {
        render_decision_card(&state, features, n, None).expect("blockage recorded")
    })
    .map_err(|e| SpecError::Invalid(e.to_string()))?;
    let skip = local_skip(&state, &spec.site.graph, &view.placed_nodes, inj.node);
    let depth = spec.site.graph.critical_path(&Default::default()).len();
    Ok(ClassProbe { issue, features, decision, local_plan_cost: plan.map(|p| p.total_cost), local_skip: skip, depth })
}

/// Items the world can supply: inventories, sources and chests, plus one
/// level of recipes over those.
fn supply(spec: &EpisodeSpec) -> BTreeMap<ItemId, u64> {
    let mut have: BTreeMap<ItemId, u64> = BTreeMap::new();
    let s = &spec.initial;
    for (item, n) in s.agents.values().flat_map(|a| a.inventory.iter()) {
        *have.entry(item.clone()).or_default() += u64::from(n);
    }
    for src in &s.sources {
        *have.entry(src.item.clone()).or_default() += u64::from(src.remaining);
    }
    for (item, n) in s.chests.iter().flat_map(|c| c.inventory.iter()) {
        *have.entry(item.clone()).or_default() += u64::from(n);
    }
    for r in &spec.site.recipes {
        let batches =
            r.inputs.iter().map(|(i, n)| have.get(i).copied().unwrap_or(0) / u64::from(*n).max(1)).min().unwrap_or(0);
        *have.entry(r.output.0.clone()).or_default() += batches * u64::from(r.output.1);
    }
    have
}

fn check(cond: bool, msg: &str) -> Result<(), SpecError> {
    if cond {
        Ok(())
    } else {
        Err(SpecError::Class(msg.to_string()))
    }
}

/// Checks the structural bounds, the resource audit and the class promise.
pub fn validate_class_property(spec: &EpisodeSpec) -> Result<ClassProbe, SpecError> {
    spec.validate()?;
    let blocks = spec.site.blueprint.nodes.len();
    check((MIN_BLOCKS..=MAX_BLOCKS).contains(&blocks), "blueprint size outside 8..=40 blocks")?;

    let mut need: BTreeMap<&ItemId, u64> = BTreeMap::new();
    for n in &spec.site.blueprint.nodes {
        *need.entry(&n.material).or_default() += 1;
    }
    let have = supply(spec);
    for (item, n) in need {
        let withheld = spec.class == ScenarioClass::D && *item == spec.injection.item;
        if !withheld && have.get(item).copied().unwrap_or(0) < n {
            return Err(SpecError::Class(format!("not enough {item} in the world")));
        }
    }

    let p = probe_injection(spec)?;
    check((MIN_DEPTH..=MAX_DEPTH).contains(&p.depth), "dependency depth outside 2..=6")?;
    let inj = &spec.injection;
    let holder_surplus = inj.holder.as_ref().is_some_and(|h| {
        let held = spec.initial.agents.get(h).map_or(0, |a| a.inventory.count(&inj.item));
        let needed = spec.assignments(h).values().filter(|m| **m == inj.item).count() as u32;
        held > needed
    });
    let cheap_local = p.local_plan_cost.is_some_and(|c| c <= LOCAL_BUDGET);
    match spec.class {
        ScenarioClass::A => {
            check(cheap_local, "no short local recovery path")?;
            check(p.decision.verdict == Verdict::StayLocal, "default gate would escalate")?;
        }
        ScenarioClass::B | ScenarioClass::D => {
            check(p.local_plan_cost.is_none(), "item is recoverable locally")?;
            check(p.issue.issue.carries_item(), "blockage does not name an item")?;
            check(holder_surplus, "no teammate holds a surplus of the item")?;
            check(spec.designations.get(&inj.item) == inj.holder.as_ref(), "holder is not publicly known")?;
            check(p.features.c >= 2, "injected node is not load-bearing")?;
            check(p.decision.verdict == Verdict::Escalate, "default gate would stay local")?;
            let script = inj.holder.as_ref().map_or(ResponderScript::Policy, |h| spec.responder(h));
            if spec.class == ScenarioClass::D {
                check(script != ResponderScript::Policy, "holder is not scripted to fail")?;
                check(p.local_skip.is_some(), "no independent work to fall back on")?;
            } else {
                check(script == ResponderScript::Policy, "holder is scripted to fail")?;
            }
        }
        ScenarioClass::C => {
            check(cheap_local, "no local route")?;
            check(holder_surplus, "no cooperative route")?;
            let th = GateConfig::default().thresholds;
            check(th.in_gray_zone(p.decision.score_norm), "score outside the gray zone")?;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::super::{inject_class, template};
    use super::*;

    #[test]
    fn class_a_has_short_local_plan() {
        let spec = inject_class(&template(0).unwrap(), 0, 0).unwrap();
        let p = validate_class_property(&spec).unwrap();
        assert!(p.local_plan_cost.unwrap() <= LOCAL_BUDGET);
    }

    #[test]
    fn b_spec_where_requester_holds_the_item_is_rejected() {
        let mut spec = inject_class(&template(10).unwrap(), 0, 0).unwrap();
        let item = spec.injection.item.clone();
        spec.initial.agents.get_mut(&spec.injection.agent).unwrap().inventory.add(&item, 1);
        assert!(validate_class_property(&spec).is_err());
    }

    #[test]
    fn a_spec_without_source_is_rejected() {
        let mut spec = inject_class(&template(0).unwrap(), 0, 0).unwrap();
        spec.initial.sources.clear();
        spec.site.recipes.clear();
        assert!(validate_class_property(&spec).is_err());
    }

    #[test]
    fn c_spec_scores_in_gray_zone() {
        let spec = inject_class(&template(20).unwrap(), 0, 0).unwrap();
        let p = validate_class_property(&spec).unwrap();
        let raw = p.decision.score_raw;
        assert!(raw > 4.2 && raw < 7.5, "raw {raw}");
    }

    #[test]
    fn d_spec_scripts_the_holder() {
        let spec = inject_class(&template(30).unwrap(), 0, 0).unwrap();
        let h = spec.injection.holder.clone().unwrap();
        assert_eq!(spec.responder(&h), ResponderScript::CannotSupply);
    }
}
