//! Blueprint prerequisite graph: readiness, critical path and node criticality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::WorldError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node_{}", self.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskGraphRepr {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
}

/// Directed acyclic prerequisite graph. An edge `(u, v)` means `u` must be
/// placed before `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaskGraphRepr", into = "TaskGraphRepr")]
pub struct TaskGraph {
    nodes: BTreeSet<NodeId>,
    edges: Vec<(NodeId, NodeId)>,
    prereqs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    dependents: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl TryFrom<TaskGraphRepr> for TaskGraph {
    type Error = WorldError;

    fn try_from(r: TaskGraphRepr) -> Result<Self, Self::Error> {
        TaskGraph::new(r.nodes, r.edges)
    }
}

impl From<TaskGraph> for TaskGraphRepr {
    fn from(g: TaskGraph) -> Self {
        TaskGraphRepr { nodes: g.nodes.into_iter().collect(), edges: g.edges }
    }
}

/// Structural importance of an unplaced node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criticality {
    pub descendant_count: usize,
    pub on_critical_path: bool,
    pub dependent_depth: usize,
}

impl TaskGraph {
    /// Builds a graph, rejecting unknown endpoints, self loops, duplicate
    /// nodes and cycles.
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, WorldError> {
        let mut node_set = BTreeSet::new();
        for n in nodes {
            if !node_set.insert(n) {
                return Err(WorldError::InvalidGraph(format!("duplicate node {n}")));
            }
        }
        let mut prereqs: BTreeMap<NodeId, BTreeSet<NodeId>> = node_set.iter().map(|n| (*n, BTreeSet::new())).collect();
        let mut dependents = prereqs.clone();
        let mut edge_list = Vec::new();
        for (u, v) in edges {
            if !node_set.contains(&u) || !node_set.contains(&v) {
                return Err(WorldError::InvalidGraph(format!("edge {u}->{v} has unknown endpoint")));
            }
            if u == v {
                return Err(WorldError::InvalidGraph(format!("self loop on {u}")));
            }
            if dependents.get_mut(&u).expect("known").insert(v) {
                prereqs.get_mut(&v).expect("known").insert(u);
                edge_list.push((u, v));
            }
        }
        let g = TaskGraph { nodes: node_set, edges: edge_list, prereqs, dependents };
        if g.topo_order().len() != g.nodes.len() {
            return Err(WorldError::InvalidGraph("cycle detected".into()));
        }
        Ok(g)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.nodes.contains(&n)
    }

    pub fn prerequisites(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.prereqs.get(&n).into_iter().flatten().copied()
    }

    pub fn dependents(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.dependents.get(&n).into_iter().flatten().copied()
    }

    /// Kahn's algorithm with smallest-id-first selection.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (*n, self.prereqs[n].len())).collect();
        let mut frontier: BTreeSet<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = frontier.pop_first() {
            order.push(n);
            for d in &self.dependents[&n] {
                let e = indeg.get_mut(d).expect("known");
                *e -= 1;
                if *e == 0 {
                    frontier.insert(*d);
                }
            }
        }
        order
    }

    /// True when every prerequisite of `n` is placed.
    pub fn is_ready(&self, n: NodeId, placed: &BTreeSet<NodeId>) -> bool {
        self.prerequisites(n).all(|p| placed.contains(&p))
    }

    /// All nodes reachable from `n` along dependency edges (excluding `n`).
    pub fn descendants(&self, n: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.dependents(n).collect();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(self.dependents(v));
            }
        }
        seen
    }

    /// Longest chain length (in nodes) starting at each unplaced node,
    /// restricted to the unplaced subgraph.
    fn chain_lengths(&self, placed: &BTreeSet<NodeId>) -> BTreeMap<NodeId, usize> {
        let mut len = BTreeMap::new();
        for n in self.topo_order().into_iter().rev() {
            if placed.contains(&n) {
                continue;
            }
            let best = self.dependents(n).filter_map(|d| len.get(&d).copied()).max().unwrap_or(0);
            len.insert(n, best + 1);
        }
        len
    }

    /// The longest prerequisite chain among unplaced nodes. Among equally long
    /// chains the lexicographically smallest node-id sequence wins.
    pub fn critical_path(&self, placed: &BTreeSet<NodeId>) -> Vec<NodeId> {
        let len = self.chain_lengths(placed);
        let Some(best) = len.values().max().copied() else {
            return Vec::new();
        };
        // Start nodes must have no unplaced prerequisite, otherwise a longer
        // chain would exist; the smallest id with maximal length is chosen.
        let mut cur = *len.iter().find(|(_, l)| **l == best).expect("max exists").0;
        let mut path = vec![cur];
        while len[&cur] > 1 {
            let want = len[&cur] - 1;
            cur = self.dependents(cur).find(|d| len.get(d) == Some(&want)).expect("chain continues");
            path.push(cur);
        }
        path
    }

    pub fn criticality_of(&self, n: NodeId, placed: &BTreeSet<NodeId>) -> Result<Criticality, WorldError> {
        if !self.contains(n) {
            return Err(WorldError::UnknownNode(n));
        }
        if placed.contains(&n) {
            return Err(WorldError::NodeAlreadyPlaced(n));
        }
        let desc = self.descendants(n);
        let descendant_count = desc.iter().filter(|d| !placed.contains(d)).count();
        let len = self.chain_lengths(placed);
        let dependent_depth = len.get(&n).copied().unwrap_or(1) - 1;
        let on_critical_path = self.critical_path(placed).contains(&n);
        Ok(Criticality { descendant_count, on_critical_path, dependent_depth })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|i| NodeId(*i)).collect()
    }

    fn graph(n: u32, edges: &[(u32, u32)]) -> TaskGraph {
        TaskGraph::new((0..n).map(NodeId), edges.iter().map(|(a, b)| (NodeId(*a), NodeId(*b)))).unwrap()
    }

    #[test]
    fn single_chain_is_critical_path() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(g.critical_path(&BTreeSet::new()), ids(&[0, 1, 2]));
    }

    #[test]
    fn longer_of_two_parallel_chains() {
        let g = graph(5, &[(0, 1), (2, 3), (3, 4)]);
        assert_eq!(g.critical_path(&BTreeSet::new()), ids(&[2, 3, 4]));
    }

    #[test]
    fn all_placed_gives_empty_path() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let placed: BTreeSet<_> = ids(&[0, 1, 2]).into_iter().collect();
        assert!(g.critical_path(&placed).is_empty());
    }

    #[test]
    fn cycle_rejected() {
        let err = TaskGraph::new(ids(&[0, 1]), vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))]);
        assert!(matches!(err, Err(WorldError::InvalidGraph(_))));
    }

    #[test]
    fn unknown_endpoint_rejected() {
        let err = TaskGraph::new(ids(&[0]), vec![(NodeId(0), NodeId(7))]);
        assert!(err.is_err());
    }

    #[test]
    fn leaf_has_no_descendants() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = g.criticality_of(NodeId(2), &BTreeSet::new()).unwrap();
        assert_eq!(c.descendant_count, 0);
        assert_eq!(c.dependent_depth, 0);
    }

    #[test]
    fn root_of_three_chain() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let c = g.criticality_of(NodeId(0), &BTreeSet::new()).unwrap();
        assert_eq!(c.descendant_count, 2);
        assert_eq!(c.dependent_depth, 2);
        assert!(c.on_critical_path);
    }

    #[test]
    fn criticality_errors() {
        let g = graph(2, &[(0, 1)]);
        assert!(matches!(g.criticality_of(NodeId(9), &BTreeSet::new()), Err(WorldError::UnknownNode(_))));
        let placed: BTreeSet<_> = [NodeId(0)].into_iter().collect();
        assert!(g.criticality_of(NodeId(0), &placed).is_err());
    }

    #[test]
    fn graph_roundtrips_through_json() {
        let g = graph(4, &[(0, 1), (0, 2), (2, 3)]);
        let s = serde_json::to_string(&g).unwrap();
        let back: TaskGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        let bad = r#"{"nodes":[0,1],"edges":[[0,1],[1,0]]}"#;
        assert!(serde_json::from_str::<TaskGraph>(bad).is_err());
    }
}
