//! Assignment of the retention-interval variables: one (start, end, active)
//! triple per interval copy, laid out per node.

use crate::graph::{ComputeGraph, NodeId};
use crate::model::Event;

/// The event every pinned inactive interval sits on.
pub const DUMMY_EVENT: Event = 1;

/// A complete assignment of interval triples. Intervals are addressed by
/// `(node, copy)` with 0-based copy indices; copy 0 is the mandatory first
/// computation. Inactive copies are pinned to the dummy placement
/// `(DUMMY_EVENT, DUMMY_EVENT)` and excluded from every constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalSolution {
    caps: Vec<u32>,
    offsets: Vec<usize>,
    starts: Vec<Event>,
    ends: Vec<Event>,
    active: Vec<bool>,
}

impl IntervalSolution {
    /// All copy-0 intervals active at the dummy placement, all others
    /// inactive. Callers then place the intervals they use.
    pub fn new(caps: &[u32]) -> Self {
        let mut offsets = Vec::with_capacity(caps.len() + 1);
        let mut total = 0usize;
        offsets.push(0);
        for &c in caps {
            total += c as usize;
            offsets.push(total);
        }
        let mut sol = IntervalSolution {
            caps: caps.to_vec(),
            offsets,
            starts: vec![DUMMY_EVENT; total],
            ends: vec![DUMMY_EVENT; total],
            active: vec![false; total],
        };
        for v in 0..caps.len() {
            let i = sol.index(v, 0);
            sol.active[i] = true;
        }
        sol
    }

    pub fn node_count(&self) -> usize {
        self.caps.len()
    }

    pub fn interval_count(&self) -> usize {
        self.starts.len()
    }

    pub fn cap(&self, node: NodeId) -> usize {
        self.caps[node] as usize
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn index(&self, node: NodeId, copy: usize) -> usize {
        debug_assert!(copy < self.cap(node));
        self.offsets[node] + copy
    }

    /// Inverse of [`IntervalSolution::index`].
    pub fn interval_at(&self, index: usize) -> (NodeId, usize) {
        let node = self.offsets.partition_point(|&o| o <= index) - 1;
        (node, index - self.offsets[node])
    }

    pub fn start(&self, node: NodeId, copy: usize) -> Event {
        self.starts[self.index(node, copy)]
    }

    pub fn end(&self, node: NodeId, copy: usize) -> Event {
        self.ends[self.index(node, copy)]
    }

    pub fn is_active(&self, node: NodeId, copy: usize) -> bool {
        self.active[self.index(node, copy)]
    }

    pub fn set(&mut self, node: NodeId, copy: usize, start: Event, end: Event, active: bool) {
        let i = self.index(node, copy);
        if active {
            self.starts[i] = start;
            self.ends[i] = end;
        } else {
            self.starts[i] = DUMMY_EVENT;
            self.ends[i] = DUMMY_EVENT;
        }
        self.active[i] = active;
    }

    pub fn deactivate(&mut self, node: NodeId, copy: usize) {
        self.set(node, copy, DUMMY_EVENT, DUMMY_EVENT, false);
    }

    /// Active intervals as `(node, copy, start, end)`.
    pub fn active_intervals(&self) -> impl Iterator<Item = (NodeId, usize, Event, Event)> + '_ {
        (0..self.node_count()).flat_map(move |v| {
            (0..self.cap(v)).filter_map(move |i| {
                if self.is_active(v, i) {
                    Some((v, i, self.start(v, i), self.end(v, i)))
                } else {
                    None
                }
            })
        })
    }

    /// Active intervals sorted by start event: the execution order.
    pub fn active_by_start(&self) -> Vec<(Event, NodeId, usize)> {
        let mut items: Vec<_> =
            self.active_intervals().map(|(v, i, s, _)| (s, v, i)).collect();
        items.sort_unstable();
        items
    }

    /// Total duration of the assignment: the sum of node durations over
    /// active intervals. Does not depend on placements.
    pub fn total_duration(&self, g: &ComputeGraph) -> u64 {
        self.active_intervals().map(|(v, _, _, _)| g.duration(v)).sum()
    }

    /// Peak memory under closed-interval accounting: each active interval
    /// holds its node's output size on every event of `[start, end]`.
    pub fn peak_memory(&self, g: &ComputeGraph) -> u64 {
        let horizon = self
            .active_intervals()
            .map(|(_, _, _, e)| e)
            .max()
            .unwrap_or(DUMMY_EVENT);
        let mut delta = vec![0i128; horizon + 2];
        for (v, _, s, e) in self.active_intervals() {
            delta[s] += g.out_size(v) as i128;
            delta[e + 1] -= g.out_size(v) as i128;
        }
        let mut level = 0i128;
        let mut peak = 0i128;
        for d in &delta[1..=horizon] {
            level += d;
            peak = peak.max(level);
        }
        peak as u64
    }
}
