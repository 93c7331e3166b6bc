//! Test-instance factories: layered random DAGs shaped like real training
//! graphs, plus exhaustive enumeration of small labeled DAGs for oracle
//! sweeps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{ComputeGraph, NodeId};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("layer count must be at least 1")]
    NoLayers,
    #[error("width range ({0}, {1}) is empty")]
    EmptyWidthRange(usize, usize),
    #[error("probability {name} = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("{name} range ({lo}, {hi}) is empty")]
    EmptyValueRange { name: &'static str, lo: u64, hi: u64 },
    #[error("enumeration supports at most {limit} nodes, requested {requested}")]
    TooManyNodes { requested: usize, limit: usize },
}

/// Parameters for [`random_layered`]. Nodes are arranged in layers; every
/// node outside the first layer receives at least one predecessor from the
/// previous layer, extra previous-layer edges appear with probability
/// `p_local`, and longer skip edges with probability `p_skip`.
#[derive(Debug, Clone)]
pub struct LayeredSpec {
    pub layers: usize,
    pub width_min: usize,
    pub width_max: usize,
    pub p_local: f64,
    pub p_skip: f64,
    /// Inclusive range of node durations.
    pub duration_range: (u64, u64),
    /// Inclusive range of node output sizes.
    pub size_range: (u64, u64),
    pub seed: u64,
}

impl Default for LayeredSpec {
    /// Tuned to produce graphs around 100 nodes and low-hundreds of edges,
    /// the shape used by the scaling benchmarks.
    fn default() -> Self {
        LayeredSpec {
            layers: 40,
            width_min: 1,
            width_max: 4,
            p_local: 0.35,
            p_skip: 0.012,
            duration_range: (1, 1000),
            size_range: (1, 1000),
            seed: 0,
        }
    }
}

impl LayeredSpec {
    fn validate(&self) -> Result<(), GeneratorError> {
        if self.layers == 0 {
            return Err(GeneratorError::NoLayers);
        }
        if self.width_min == 0 || self.width_min > self.width_max {
            return Err(GeneratorError::EmptyWidthRange(self.width_min, self.width_max));
        }
        for (name, value) in [("p_local", self.p_local), ("p_skip", self.p_skip)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GeneratorError::BadProbability { name, value });
            }
        }
        for (name, (lo, hi)) in
            [("duration", self.duration_range), ("size", self.size_range)]
        {
            if lo > hi {
                return Err(GeneratorError::EmptyValueRange { name, lo, hi });
            }
        }
        Ok(())
    }
}

/// Generates a random layered DAG. Deterministic in `spec.seed`: the same
/// spec always yields byte-identical graphs.
pub fn random_layered(spec: &LayeredSpec) -> Result<ComputeGraph, GeneratorError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layer_of: Vec<usize> = Vec::new();
    let mut layer_nodes: Vec<Vec<NodeId>> = Vec::with_capacity(spec.layers);
    for layer in 0..spec.layers {
        let width = rng.gen_range(spec.width_min..=spec.width_max);
        let mut nodes = Vec::with_capacity(width);
        for _ in 0..width {
            nodes.push(layer_of.len());
            layer_of.push(layer);
        }
        layer_nodes.push(nodes);
    }
    let n = layer_of.len();
    let mut durations = Vec::with_capacity(n);
    let mut out_sizes = Vec::with_capacity(n);
    for _ in 0..n {
        durations.push(rng.gen_range(spec.duration_range.0..=spec.duration_range.1));
        out_sizes.push(rng.gen_range(spec.size_range.0..=spec.size_range.1));
    }
    let mut edge_set = std::collections::HashSet::new();
    let mut edges = Vec::new();
    // Every node beyond the first layer pulls one mandatory predecessor from
    // the previous layer, keeping the graph connected front to back.
    for layer in 1..spec.layers {
        for &v in &layer_nodes[layer] {
            let prev = &layer_nodes[layer - 1];
            let u = prev[rng.gen_range(0..prev.len())];
            if edge_set.insert((u, v)) {
                edges.push((u, v));
            }
        }
    }
    for layer in 1..spec.layers {
        for &v in &layer_nodes[layer] {
            for &u in &layer_nodes[layer - 1] {
                if rng.gen_bool(spec.p_local) && edge_set.insert((u, v)) {
                    edges.push((u, v));
                }
            }
        }
    }
    // Skip edges span at least two layers; these create the long retention
    // intervals that make rematerialization pay off.
    for v in 0..n {
        for u in 0..v {
            if layer_of[v] >= layer_of[u] + 2 && rng.gen_bool(spec.p_skip) && edge_set.insert((u, v))
            {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    Ok(ComputeGraph::new(durations, out_sizes, edges).expect("layered construction is acyclic"))
}

/// A unit-weight path `0 -> 1 -> ... -> n-1`.
pub fn chain(n: usize) -> ComputeGraph {
    let edges = (1..n).map(|v| (v - 1, v)).collect();
    ComputeGraph::new(vec![1; n], vec![1; n], edges).expect("chain is a DAG")
}

const ENUMERATION_LIMIT: usize = 5;

/// Enumerates every labeled DAG with 1..=`max_n` nodes whose underlying
/// undirected graph is connected, as unit-duration unit-size graphs.
/// Each unordered node pair is either absent or oriented one way, so the
/// candidate space is 3^(n choose 2) per node count; cyclic and disconnected
/// candidates are filtered out. Capped at `max_n <= 5`.
pub fn enumerate_small_dags(max_n: usize) -> Result<Vec<ComputeGraph>, GeneratorError> {
    if max_n > ENUMERATION_LIMIT {
        return Err(GeneratorError::TooManyNodes { requested: max_n, limit: ENUMERATION_LIMIT });
    }
    let mut out = Vec::new();
    for n in 1..=max_n {
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let mut choice = vec![0u8; pairs.len()];
        loop {
            if let Some(g) = build_candidate(n, &pairs, &choice) {
                out.push(g);
            }
            // Odometer over {absent, forward, backward} per pair.
            let mut i = 0;
            loop {
                if i == choice.len() {
                    break;
                }
                choice[i] += 1;
                if choice[i] < 3 {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == choice.len() {
                break;
            }
        }
    }
    Ok(out)
}

fn build_candidate(n: usize, pairs: &[(usize, usize)], choice: &[u8]) -> Option<ComputeGraph> {
    let mut edges = Vec::new();
    for (i, &(u, v)) in pairs.iter().enumerate() {
        match choice[i] {
            0 => {}
            1 => edges.push((u, v)),
            2 => edges.push((v, u)),
            _ => unreachable!(),
        }
    }
    if n > 1 && !underlying_connected(n, &edges) {
        return None;
    }
    ComputeGraph::new(vec![1; n], vec![1; n], edges).ok()
}

fn underlying_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru] = rv;
            components -= 1;
        }
    }
    components == 1
}
