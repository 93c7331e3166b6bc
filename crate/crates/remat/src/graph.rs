//! Compute graph model: nodes with execution durations and output sizes,
//! edges expressing data dependencies.
//!
//! Graphs are loaded from a small JSON document format (see [`load_graph`]),
//! validated to be acyclic, and indexed densely so the rest of the crate can
//! work with integer node ids. String names from the document are kept in a
//! name table for reporting.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node index. Assigned in document order when loading from JSON.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to parse graph document: {0}")]
    Parse(String),
    #[error("graph must contain at least one node")]
    Empty,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("negative {field} on node {node:?}")]
    Negative { node: String, field: &'static str },
    #[error("edge endpoint {0:?} does not name a node")]
    DanglingEdge(String),
    #[error("self-loop on node {0:?}")]
    SelfLoop(String),
    #[error("duplicate edge {0:?} -> {1:?}")]
    DuplicateEdge(String, String),
    #[error("graph contains a directed cycle")]
    Cycle,
    #[error("order is not a permutation of the graph's nodes")]
    NotAPermutation,
    #[error("order violates edge {from} -> {to}")]
    OrderViolatesEdge { from: NodeId, to: NodeId },
}

// ---------------------------------------------------------------------------
// JSON document format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    duration: i64,
    out_size: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: String,
    to: String,
}

// ---------------------------------------------------------------------------
// ComputeGraph
// ---------------------------------------------------------------------------

/// A directed acyclic compute graph. Node `v` runs for `duration(v)` time
/// units and produces one output tensor of `out_size(v)` memory units; an
/// edge `u -> v` means `v` reads `u`'s output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComputeGraph {
    names: Vec<String>,
    durations: Vec<u64>,
    out_sizes: Vec<u64>,
    edges: Vec<(NodeId, NodeId)>,
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
}

impl ComputeGraph {
    /// Builds a graph from parallel per-node arrays and an edge list. Node
    /// names default to `n0`, `n1`, ... in index order.
    pub fn new(
        durations: Vec<u64>,
        out_sizes: Vec<u64>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let names = (0..durations.len()).map(|i| format!("n{i}")).collect();
        Self::with_names(names, durations, out_sizes, edges)
    }

    /// Builds a graph with explicit node names.
    pub fn with_names(
        names: Vec<String>,
        durations: Vec<u64>,
        out_sizes: Vec<u64>,
        edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        assert_eq!(names.len(), durations.len());
        assert_eq!(names.len(), out_sizes.len());
        if names.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = names.len();
        let mut seen = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if seen.insert(name.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(name.clone()));
            }
        }
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut edge_set = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u >= n {
                return Err(GraphError::DanglingEdge(format!("#{u}")));
            }
            if v >= n {
                return Err(GraphError::DanglingEdge(format!("#{v}")));
            }
            if u == v {
                return Err(GraphError::SelfLoop(names[u].clone()));
            }
            if !edge_set.insert((u, v)) {
                return Err(GraphError::DuplicateEdge(names[u].clone(), names[v].clone()));
            }
            succs[u].push(v);
            preds[v].push(u);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
        }
        // Edge order is canonical so equal graphs compare equal regardless
        // of the order the document listed them in.
        let mut edges = edges;
        edges.sort_unstable();
        let g = ComputeGraph { names, durations, out_sizes, edges, preds, succs };
        // Kahn's algorithm: all nodes must drain, otherwise a cycle remains.
        if kahn_order(&g, |cands, _| cands[0]).len() != n {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn duration(&self, v: NodeId) -> u64 {
        self.durations[v]
    }

    pub fn out_size(&self, v: NodeId) -> u64 {
        self.out_sizes[v]
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.names[v]
    }

    /// Dense id for a document node name, if present.
    pub fn node_index(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn preds(&self, v: NodeId) -> &[NodeId] {
        &self.preds[v]
    }

    pub fn succs(&self, v: NodeId) -> &[NodeId] {
        &self.succs[v]
    }

    pub fn total_duration(&self) -> u64 {
        self.durations.iter().sum()
    }

    pub fn total_size(&self) -> u64 {
        self.out_sizes.iter().sum()
    }

    /// Serializes to the canonical JSON document: nodes in id order, edges
    /// sorted by `(from, to)` id pair, pretty-printed. Loading the output
    /// reproduces the graph, and re-serializing reproduces the bytes.
    pub fn to_canonical_json(&self) -> String {
        let nodes = (0..self.node_count())
            .map(|v| NodeDoc {
                id: self.names[v].clone(),
                duration: self.durations[v] as i64,
                out_size: self.out_sizes[v] as i64,
            })
            .collect();
        let mut edges = self.edges.clone();
        edges.sort_unstable();
        let edges = edges
            .into_iter()
            .map(|(u, v)| EdgeDoc { from: self.names[u].clone(), to: self.names[v].clone() })
            .collect();
        let doc = GraphDoc { nodes, edges };
        let mut out = serde_json::to_string_pretty(&doc).expect("document serialization");
        out.push('\n');
        out
    }
}

/// Parses a JSON graph document.
///
/// Document shape:
///
/// ```json
/// {
///   "nodes": [{"id": "a", "duration": 2, "out_size": 4}],
///   "edges": [{"from": "a", "to": "b"}]
/// }
/// ```
///
/// Unknown fields are rejected. Node ids are strings; they are mapped to
/// dense integer ids in document order. Durations and sizes must be
/// non-negative (zero is allowed for both).
pub fn load_graph(bytes: &[u8]) -> Result<ComputeGraph, GraphError> {
    let doc: GraphDoc =
        serde_json::from_slice(bytes).map_err(|e| GraphError::Parse(e.to_string()))?;
    if doc.nodes.is_empty() {
        return Err(GraphError::Empty);
    }
    let mut names = Vec::with_capacity(doc.nodes.len());
    let mut durations = Vec::with_capacity(doc.nodes.len());
    let mut out_sizes = Vec::with_capacity(doc.nodes.len());
    let mut index = HashMap::new();
    for node in &doc.nodes {
        if node.duration < 0 {
            return Err(GraphError::Negative { node: node.id.clone(), field: "duration" });
        }
        if node.out_size < 0 {
            return Err(GraphError::Negative { node: node.id.clone(), field: "out_size" });
        }
        if index.insert(node.id.clone(), names.len()).is_some() {
            return Err(GraphError::DuplicateNode(node.id.clone()));
        }
        names.push(node.id.clone());
        durations.push(node.duration as u64);
        out_sizes.push(node.out_size as u64);
    }
    let mut edges = Vec::with_capacity(doc.edges.len());
    for edge in &doc.edges {
        let u = *index.get(&edge.from).ok_or_else(|| GraphError::DanglingEdge(edge.from.clone()))?;
        let v = *index.get(&edge.to).ok_or_else(|| GraphError::DanglingEdge(edge.to.clone()))?;
        edges.push((u, v));
    }
    ComputeGraph::with_names(names, durations, out_sizes, edges)
}

// ---------------------------------------------------------------------------
// Topological orders
// ---------------------------------------------------------------------------

/// A topological order of a graph, with 1-based position lookup. Positions
/// are the stage indices used by the staged event domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    order: Vec<NodeId>,
    position: Vec<usize>,
}

impl TopoOrder {
    /// Validates that `order` is a permutation respecting every edge.
    pub fn new(g: &ComputeGraph, order: Vec<NodeId>) -> Result<Self, GraphError> {
        let n = g.node_count();
        let mut position = vec![0usize; n];
        if order.len() != n {
            return Err(GraphError::NotAPermutation);
        }
        for (i, &v) in order.iter().enumerate() {
            if v >= n || position[v] != 0 {
                return Err(GraphError::NotAPermutation);
            }
            position[v] = i + 1;
        }
        for &(u, v) in g.edges() {
            if position[u] >= position[v] {
                return Err(GraphError::OrderViolatesEdge { from: u, to: v });
            }
        }
        Ok(TopoOrder { order, position })
    }

    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// 1-based position of `v` in the order.
    pub fn position(&self, v: NodeId) -> usize {
        self.position[v]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Kahn's algorithm with a pluggable tie-break among ready nodes. The
/// candidate list passed to `pick` is sorted ascending.
fn kahn_order(g: &ComputeGraph, mut pick: impl FnMut(&[NodeId], usize) -> NodeId) -> Vec<NodeId> {
    let n = g.node_count();
    let mut indegree: Vec<usize> = (0..n).map(|v| g.preds(v).len()).collect();
    let mut ready: Vec<NodeId> = (0..n).filter(|&v| indegree[v] == 0).collect();
    ready.sort_unstable();
    let mut order = Vec::with_capacity(n);
    let mut step = 0usize;
    while !ready.is_empty() {
        let v = pick(&ready, step);
        let slot = ready.iter().position(|&x| x == v).expect("pick from candidates");
        ready.remove(slot);
        order.push(v);
        step += 1;
        for &w in g.succs(v) {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                let at = ready.partition_point(|&x| x < w);
                ready.insert(at, w);
            }
        }
    }
    order
}

/// Random topological order: Kahn's algorithm breaking ties uniformly at
/// random among ready nodes, driven by a ChaCha stream seeded with `seed`.
/// The same seed always yields the same order.
pub fn random_topological_order(g: &ComputeGraph, seed: u64) -> TopoOrder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = kahn_order(g, |cands, _| cands[rng.gen_range(0..cands.len())]);
    TopoOrder::new(g, order).expect("Kahn order is topological")
}

/// Peak memory of executing `order` once, with every tensor retained from
/// its compute step through its last consumer (or its own step if unused).
/// This is the rematerialization-free baseline that fractional budgets are
/// resolved against.
pub fn no_remat_peak_memory(g: &ComputeGraph, order: &TopoOrder) -> u64 {
    let n = g.node_count();
    debug_assert_eq!(order.len(), n);
    // last_use[v]: 1-based position through which v's output stays live.
    let mut last_use: Vec<usize> = (0..n).map(|v| order.position(v)).collect();
    for &(u, v) in g.edges() {
        last_use[u] = last_use[u].max(order.position(v));
    }
    let mut delta = vec![0i128; n + 2];
    for v in 0..n {
        let from = order.position(v);
        delta[from] += g.out_size(v) as i128;
        delta[last_use[v] + 1] -= g.out_size(v) as i128;
    }
    let mut level = 0i128;
    let mut peak = 0i128;
    for d in &delta[1..=n] {
        level += d;
        peak = peak.max(level);
    }
    peak as u64
}
