//! Build a two-block world by hand, inspect its prerequisite graph and step
//! it with a few verified actions.

use std::collections::{BTreeMap, BTreeSet};

use gatecoord::world::{
    Action, AgentBody, AgentId, BlockSpec, Blueprint, Inventory, NodeId, Pos, Recipe, RecipeKind, Site, Source,
    SourceRef, TaskGraph, World, WorldParams, WorldState,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let blueprint = Blueprint {
        name: "post".into(),
        nodes: vec![
            BlockSpec { node_id: NodeId(0), material: "oak_log".into(), position: Pos { x: 0, y: 0, z: 0 } },
            BlockSpec { node_id: NodeId(1), material: "oak_planks".into(), position: Pos { x: 0, y: 1, z: 0 } },
        ],
    };
    let graph = TaskGraph::new([NodeId(0), NodeId(1)], [(NodeId(0), NodeId(1))])?;
    let planks = Recipe {
        id: "oak_planks".into(),
        kind: RecipeKind::Craft,
        inputs: vec![("oak_log".into(), 1)],
        output: ("oak_planks".into(), 4),
        station_required: None,
    };
    let site = Site { blueprint, graph, recipes: vec![planks] };
    let builder = AgentId::new("a0");
    let state = WorldState {
        placed: BTreeMap::new(),
        sources: vec![Source { item: "oak_log".into(), position: Pos { x: 4, y: 0, z: 0 }, remaining: 3 }],
        chests: vec![],
        stations: vec![],
        agents: BTreeMap::from([(
            builder.clone(),
            AgentBody { position: Pos { x: 0, y: 0, z: -2 }, inventory: Inventory::new() },
        )]),
        sim_time: 0,
    };
    let mut world = World::new(site, WorldParams::default(), state)?;
    println!("critical path: {:?}", world.site.graph.critical_path(&BTreeSet::new()));

    let plan = [
        Action::Place { node: NodeId(0) },
        Action::Move { target: Pos { x: 4, y: 0, z: 0 } },
        Action::Collect { source: SourceRef::Source { index: 0 } },
        Action::Collect { source: SourceRef::Source { index: 0 } },
        Action::Craft { recipe: "oak_planks".into() },
        Action::Move { target: Pos { x: 0, y: 0, z: 0 } },
        Action::Place { node: NodeId(0) },
        Action::Place { node: NodeId(1) },
    ];
    for action in &plan {
        let out = world.apply(&builder, action)?;
        world.tick();
        match out.failure() {
            None => println!("t={:<2} {:?}: ok, {} deltas", out.sim_time, action, out.deltas.len()),
            Some(reason) => println!("t={:<2} {:?}: failed ({reason:?})", out.sim_time, action),
        }
    }
    println!("complete: {}, item totals: {:?}", world.is_complete(), world.item_totals());
    Ok(())
}
