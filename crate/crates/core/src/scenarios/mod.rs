//! Stress-test episode dataset: 40 templates × 5 seeds across four classes of
//! injected blockage.

mod generate;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{AgentId, ItemId, NodeId, Region, Site, World, WorldError, WorldParams, WorldState};

pub use generate::{generate_dataset, inject_class, template, Family, Template, SEEDS_PER_TEMPLATE, TEMPLATE_COUNT};
pub use validate::{initial_state, probe_injection, validate_class_property, ClassProbe, LOCAL_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioClass {
    /// A short local recovery path exists.
    A,
    /// The item is only available from a teammate.
    B,
    /// Local and cooperative routes cost about the same.
    C,
    /// Cooperation is required but the teammate refuses or stays silent.
    D,
}

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 4] = [ScenarioClass::A, ScenarioClass::B, ScenarioClass::C, ScenarioClass::D];
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// How an agent answers material requests addressed to it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderScript {
    /// Follow the surplus reply policy.
    #[default]
    Policy,
    CannotSupply,
    Silent,
}

/// The anomaly planted in an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub agent: AgentId,
    pub node: NodeId,
    pub item: ItemId,
    /// Teammate holding the item, when one does.
    pub holder: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub template: u32,
    pub seed: u64,
    pub class: ScenarioClass,
    pub site: Site,
    pub params: WorldParams,
    pub initial: WorldState,
    /// Owner of every blueprint node.
    pub owners: BTreeMap<NodeId, AgentId>,
    pub work_regions: BTreeMap<AgentId, Region>,
    /// Items reserved to one agent's partition.
    pub designations: BTreeMap<ItemId, AgentId>,
    #[serde(default)]
    pub responders: BTreeMap<AgentId, ResponderScript>,
    pub injection: Injection,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid episode spec: {0}")]
    Invalid(String),
    #[error("class property violated: {0}")]
    Class(String),
}

impl EpisodeSpec {
    pub fn id(&self) -> String {
        format!("t{:02}_s{}", self.template, self.seed)
    }

    pub fn agents(&self) -> Vec<AgentId> {
        self.initial.agents.keys().cloned().collect()
    }

    pub fn agent_count(&self) -> usize {
        self.initial.agents.len()
    }

    pub fn assignments(&self, agent: &AgentId) -> BTreeMap<NodeId, ItemId> {
        self.owners
            .iter()
            .filter(|(_, o)| *o == agent)
            .filter_map(|(n, _)| self.site.blueprint.node(*n).map(|b| (*n, b.material.clone())))
            .collect()
    }

    pub fn responder(&self, agent: &AgentId) -> ResponderScript {
        self.responders.get(agent).copied().unwrap_or_default()
    }

    pub fn world(&self) -> Result<World, SpecError> {
        Ok(World::new(self.site.clone(), self.params, self.initial.clone())?)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        self.site.validate()?;
        let nodes: BTreeSet<NodeId> = self.site.blueprint.node_ids().collect();
        let owned: BTreeSet<NodeId> = self.owners.keys().copied().collect();
        if nodes != owned {
            return Err(SpecError::Invalid("every blueprint node needs exactly one owner".into()));
        }
        let agents: BTreeSet<&AgentId> = self.initial.agents.keys().collect();
        if agents.len() < 2 {
            return Err(SpecError::Invalid("at least two agents required".into()));
        }
        if let Some(o) = self.owners.values().find(|o| !agents.contains(o)) {
            return Err(SpecError::Invalid(format!("owner {o} is not an agent")));
        }
        if !agents.contains(&self.injection.agent) || !nodes.contains(&self.injection.node) {
            return Err(SpecError::Invalid("injection refers to unknown agent or node".into()));
        }
        if !self.initial.placed.is_empty() || self.initial.sim_time != 0 {
            return Err(SpecError::Invalid("episodes start from an empty site at time 0".into()));
        }
        Ok(())
    }
}

/// One manifest row per episode file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub template: u32,
    pub seed: u64,
    pub class: ScenarioClass,
    pub agents: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_seed: u64,
    pub total_episodes: usize,
    pub templates: usize,
    pub seeds_per_template: usize,
    pub class_counts: BTreeMap<ScenarioClass, usize>,
    pub agent_counts: BTreeMap<usize, usize>,
    pub episodes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn build(dataset_seed: u64, specs: &[EpisodeSpec]) -> Manifest {
        let mut class_counts = BTreeMap::new();
        let mut agent_counts = BTreeMap::new();
        let mut templates = BTreeSet::new();
        let episodes = specs
            .iter()
            .map(|s| {
                *class_counts.entry(s.class).or_insert(0) += 1;
                *agent_counts.entry(s.agent_count()).or_insert(0) += 1;
                templates.insert(s.template);
                ManifestEntry {
                    template: s.template,
                    seed: s.seed,
                    class: s.class,
                    agents: s.agent_count(),
                    file: format!("episodes/{}.json", s.id()),
                }
            })
            .collect();
        Manifest {
            dataset_seed,
            total_episodes: specs.len(),
            templates: templates.len(),
            seeds_per_template: if templates.is_empty() { 0 } else { specs.len() / templates.len() },
            class_counts,
            agent_counts,
            episodes,
        }
    }
}
