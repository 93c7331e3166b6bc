//! Independent schedule evaluation.
//!
//! This module owns the ground truth for what a schedule means:
//!
//! * [`simulate`] executes a compute sequence (node ids, repeats are
//!   recomputations) with most-recent-provider serving and minimal tensor
//!   retention, reporting peak memory and total duration;
//! * [`sequence_solution`] encodes a sequence as a retention-interval
//!   assignment on the problem's event line;
//! * [`validate`] checks an interval assignment directly against every
//!   constraint of the formulation, sharing no code with the solver's
//!   propagators;
//! * [`decode_schedule`] turns a validated assignment into an execution
//!   schedule;
//! * [`brute_force_optimal`] is an exact oracle for tiny instances, used to
//!   certify solver results in tests.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputeGraph, NodeId, TopoOrder};
use crate::model::{Event, ModelError, RematProblem, ScheduleMode};
use crate::solver::IntervalSolution;

// ---------------------------------------------------------------------------
// Sequence simulation
// ---------------------------------------------------------------------------

/// Ways a compute sequence can fail to be a schedule.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SequenceError {
    #[error("position {position}: node {node} is out of range")]
    UnknownNode { position: usize, node: NodeId },
    #[error("node {node} is computed more than {cap} times")]
    CapExceeded { node: NodeId, cap: u32 },
    #[error("node {node} never appears in the sequence")]
    MissingNode { node: NodeId },
    #[error("position {position}: node {node} runs before its input {input}")]
    InputNotComputed { position: usize, node: NodeId, input: NodeId },
    #[error("position {position}: node {node} breaks the fixed compute order")]
    StagedOrderMismatch { position: usize, node: NodeId },
    #[error("position {position}: recompute of node {node} is not slot-ordered in its stage")]
    StagedSlotOrder { position: usize, node: NodeId },
    #[error("position {position}: recompute of node {node} falls after the final stage")]
    StagedTrailingRecompute { position: usize, node: NodeId },
}

/// Checks a sequence and computes minimal retention: occurrence `k` serves
/// every consumer whose most recent prior occurrence of that input is `k`,
/// and is retained through the last position it serves (its own position
/// when it serves nobody). Returns `retained[k]`, a 0-based position.
fn retention_pass(
    g: &ComputeGraph,
    seq: &[NodeId],
    caps: &[u32],
) -> Result<Vec<usize>, SequenceError> {
    let n = g.node_count();
    let mut counts = vec![0u32; n];
    let mut last_occurrence: Vec<Option<usize>> = vec![None; n];
    let mut retained = vec![0usize; seq.len()];
    for (k, &v) in seq.iter().enumerate() {
        if v >= n {
            return Err(SequenceError::UnknownNode { position: k, node: v });
        }
        counts[v] += 1;
        if counts[v] > caps[v] {
            return Err(SequenceError::CapExceeded { node: v, cap: caps[v] });
        }
        for &u in g.preds(v) {
            match last_occurrence[u] {
                Some(p) => retained[p] = k,
                None => {
                    return Err(SequenceError::InputNotComputed { position: k, node: v, input: u })
                }
            }
        }
        retained[k] = k;
        last_occurrence[v] = Some(k);
    }
    if let Some(v) = counts.iter().position(|&c| c == 0) {
        return Err(SequenceError::MissingNode { node: v });
    }
    Ok(retained)
}

/// Outcome of simulating a compute sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResult {
    pub peak_memory: u64,
    pub total_duration: u64,
    /// Per occurrence, in sequence order: node, compute event, and the last
    /// event its output is retained through. Events are 1-based positions.
    pub retention: Vec<(NodeId, Event, Event)>,
}

/// Executes `seq` with minimal retention and reports its memory and
/// duration. The sequence must compute every node at least once, respect
/// the per-node caps, and never run a node before all of its inputs.
pub fn simulate(g: &ComputeGraph, seq: &[NodeId], caps: &[u32]) -> Result<SimResult, SequenceError> {
    let retained = retention_pass(g, seq, caps)?;
    let horizon = seq.len();
    let mut diff = vec![0i128; horizon + 2];
    let mut retention = Vec::with_capacity(horizon);
    let mut total = 0u64;
    for (k, &v) in seq.iter().enumerate() {
        let (s, e) = (k + 1, retained[k] + 1);
        diff[s] += g.out_size(v) as i128;
        diff[e + 1] -= g.out_size(v) as i128;
        retention.push((v, s, e));
        total += g.duration(v);
    }
    let mut peak = 0i128;
    let mut level = 0i128;
    for &d in &diff[..=horizon] {
        level += d;
        peak = peak.max(level);
    }
    Ok(SimResult { peak_memory: peak as u64, total_duration: total, retention })
}

// ---------------------------------------------------------------------------
// Sequence encoding
// ---------------------------------------------------------------------------

/// Maps sequence positions to staged events. First computations must follow
/// the fixed order exactly, closing one stage each; recomputations occupy
/// the slot matching their node's position in the currently open stage, in
/// strictly increasing slot order.
pub fn staged_events(order: &TopoOrder, seq: &[NodeId]) -> Result<Vec<Event>, SequenceError> {
    let n = order.len();
    let mut events = Vec::with_capacity(seq.len());
    let mut seen = vec![false; n];
    let mut stage = 1usize;
    let mut last_slot = 0usize;
    for (k, &v) in seq.iter().enumerate() {
        if v >= n {
            return Err(SequenceError::UnknownNode { position: k, node: v });
        }
        let j = order.position(v);
        if !seen[v] {
            if j != stage {
                return Err(SequenceError::StagedOrderMismatch { position: k, node: v });
            }
            events.push(stage * (stage - 1) / 2 + j);
            seen[v] = true;
            stage += 1;
            last_slot = 0;
        } else {
            if stage > n {
                return Err(SequenceError::StagedTrailingRecompute { position: k, node: v });
            }
            if j <= last_slot || j >= stage {
                return Err(SequenceError::StagedSlotOrder { position: k, node: v });
            }
            events.push(stage * (stage - 1) / 2 + j);
            last_slot = j;
        }
    }
    Ok(events)
}

/// Encodes a compute sequence as a retention-interval assignment on the
/// problem's event line, with minimal retention ends. In unstaged mode
/// position `k` becomes event `k + 1`; in staged mode positions map to
/// stage slots.
pub fn sequence_solution(
    p: &RematProblem,
    seq: &[NodeId],
) -> Result<IntervalSolution, SequenceError> {
    let retained = retention_pass(&p.graph, seq, &p.remat_caps)?;
    let events: Vec<Event> = match &p.mode {
        ScheduleMode::Unstaged => (1..=seq.len()).collect(),
        ScheduleMode::Staged(order) => staged_events(order, seq)?,
    };
    let mut sol = IntervalSolution::new(&p.remat_caps);
    let mut copy_of = vec![0usize; p.graph.node_count()];
    for (k, &v) in seq.iter().enumerate() {
        let copy = copy_of[v];
        copy_of[v] += 1;
        sol.set(v, copy, events[k], events[retained[k]], true);
    }
    Ok(sol)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A constraint broken by an interval assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The mandatory first copy of a node is inactive.
    FirstInactive { node: NodeId },
    /// An active interval has `end < start` or a start before event 1.
    IntervalOrder { node: NodeId, copy: usize, start: Event, end: Event },
    /// Consecutive active copies of one node overlap.
    SameNodeOverlap { node: NodeId, copy: usize, end: Event, next_start: Event },
    /// Two active intervals start at the same event.
    StartCollision { event: Event, first: (NodeId, usize), second: (NodeId, usize) },
    /// An active consumer start is not covered by any held input copy.
    PrecedenceUnserved { edge: (NodeId, NodeId), copy: usize, start: Event },
    /// The memory load exceeds the budget at some event.
    MemoryExceeded { event: Event, load: u64, budget: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::FirstInactive { node } => {
                write!(f, "node {node}: first copy is inactive")
            }
            Violation::IntervalOrder { node, copy, start, end } => {
                write!(f, "node {node} copy {copy}: invalid interval [{start}, {end}]")
            }
            Violation::SameNodeOverlap { node, copy, end, next_start } => write!(
                f,
                "node {node}: copy {copy} starts at {next_start} before the previous copy ends at {end}"
            ),
            Violation::StartCollision { event, first, second } => write!(
                f,
                "event {event}: node {} copy {} and node {} copy {} start together",
                first.0, first.1, second.0, second.1
            ),
            Violation::PrecedenceUnserved { edge, copy, start } => write!(
                f,
                "edge {} -> {}: consumer copy {copy} at event {start} has no held input",
                edge.0, edge.1
            ),
            Violation::MemoryExceeded { event, load, budget } => {
                write!(f, "event {event}: load {load} exceeds budget {budget}")
            }
        }
    }
}

/// Checks an assignment against every constraint of the formulation and
/// returns all violations found (empty means valid). The checks are direct
/// restatements of the constraints on the assignment; none of the solver's
/// propagation machinery is involved.
pub fn validate(sol: &IntervalSolution, p: &RematProblem) -> Vec<Violation> {
    assert_eq!(sol.caps(), p.remat_caps.as_slice(), "solution shape must match the problem");
    let g = &p.graph;
    let n = g.node_count();
    let mut out = Vec::new();

    for v in 0..n {
        if !sol.is_active(v, 0) {
            out.push(Violation::FirstInactive { node: v });
        }
    }

    // Interval order per active copy, and ordering between consecutive
    // active copies of the same node.
    for v in 0..n {
        let mut prev_end: Option<Event> = None;
        for i in 0..sol.cap(v) {
            if !sol.is_active(v, i) {
                continue;
            }
            let (s, e) = (sol.start(v, i), sol.end(v, i));
            if s == 0 || s > e {
                out.push(Violation::IntervalOrder { node: v, copy: i, start: s, end: e });
            }
            if let Some(pe) = prev_end {
                if pe > s {
                    out.push(Violation::SameNodeOverlap { node: v, copy: i, end: pe, next_start: s });
                }
            }
            prev_end = Some(e);
        }
    }

    // Active starts are pairwise distinct.
    let mut first_at: HashMap<Event, (NodeId, usize)> = HashMap::new();
    for (s, v, i) in sol.active_by_start() {
        if let Some(&first) = first_at.get(&s) {
            out.push(Violation::StartCollision { event: s, first, second: (v, i) });
        } else {
            first_at.insert(s, (v, i));
        }
    }

    // Precedence: for every edge u -> v and active copy i of v, some active
    // copy of u is computed strictly earlier and held through v's start.
    for &(u, v) in g.edges() {
        for i in 0..sol.cap(v) {
            if !sol.is_active(v, i) {
                continue;
            }
            let t = sol.start(v, i);
            let served = (0..sol.cap(u))
                .any(|j| sol.is_active(u, j) && sol.start(u, j) < t && t <= sol.end(u, j));
            if !served {
                out.push(Violation::PrecedenceUnserved { edge: (u, v), copy: i, start: t });
            }
        }
    }

    // Memory: closed-interval accounting, reported at the first overloaded
    // event. Malformed intervals are skipped here; they are already
    // reported above.
    let horizon = sol.active_intervals().map(|(_, _, _, e)| e).max().unwrap_or(0);
    let mut diff = vec![0i128; horizon + 2];
    for (v, _, s, e) in sol.active_intervals() {
        if s == 0 || s > e {
            continue;
        }
        diff[s] += g.out_size(v) as i128;
        diff[e + 1] -= g.out_size(v) as i128;
    }
    let mut level = 0i128;
    for t in 1..=horizon {
        level += diff[t];
        if level > p.budget as i128 {
            out.push(Violation::MemoryExceeded { event: t, load: level as u64, budget: p.budget });
            break;
        }
    }

    out
}

pub fn is_valid(sol: &IntervalSolution, p: &RematProblem) -> bool {
    validate(sol, p).is_empty()
}

// ---------------------------------------------------------------------------
// Schedule decoding
// ---------------------------------------------------------------------------

/// One computation in an executable schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub node: NodeId,
    /// 0-based copy index of the retention interval behind this event.
    pub copy: usize,
    pub event: Event,
    /// Last event the output tensor is retained through.
    pub retained_until: Event,
}

/// A validated, executable schedule: computations sorted by event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub events: Vec<ScheduleEvent>,
    pub peak_memory: u64,
    pub total_duration: u64,
}

impl Schedule {
    /// The compute sequence: node ids in event order.
    pub fn sequence(&self) -> Vec<NodeId> {
        self.events.iter().map(|e| e.node).collect()
    }
}

/// Validates an assignment and decodes it into an executable schedule.
pub fn decode_schedule(
    sol: &IntervalSolution,
    p: &RematProblem,
) -> Result<Schedule, Vec<Violation>> {
    let violations = validate(sol, p);
    if !violations.is_empty() {
        return Err(violations);
    }
    let events = sol
        .active_by_start()
        .into_iter()
        .map(|(s, v, i)| ScheduleEvent { node: v, copy: i, event: s, retained_until: sol.end(v, i) })
        .collect();
    Ok(Schedule {
        events,
        peak_memory: sol.peak_memory(&p.graph),
        total_duration: sol.total_duration(&p.graph),
    })
}

/// Ways a list of schedule events can fail to address a problem's
/// intervals.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("schedule references node {node}, graph has {nodes} nodes")]
    UnknownNode { node: NodeId, nodes: usize },
    #[error("node {node}: copy {copy} is out of range (cap {cap})")]
    CopyOutOfRange { node: NodeId, copy: usize, cap: u32 },
    #[error("node {node}: copy {copy} appears twice")]
    DuplicateCopy { node: NodeId, copy: usize },
}

/// Rebuilds the interval assignment behind a list of schedule events, for
/// re-validating externally stored schedules. The result still has to pass
/// [`validate`].
pub fn schedule_solution(
    events: &[ScheduleEvent],
    p: &RematProblem,
) -> Result<IntervalSolution, ScheduleError> {
    let n = p.graph.node_count();
    let mut sol = IntervalSolution::new(&p.remat_caps);
    let mut seen = vec![false; sol.interval_count()];
    for ev in events {
        if ev.node >= n {
            return Err(ScheduleError::UnknownNode { node: ev.node, nodes: n });
        }
        if ev.copy >= sol.cap(ev.node) {
            return Err(ScheduleError::CopyOutOfRange {
                node: ev.node,
                copy: ev.copy,
                cap: p.remat_caps[ev.node],
            });
        }
        let idx = sol.index(ev.node, ev.copy);
        if seen[idx] {
            return Err(ScheduleError::DuplicateCopy { node: ev.node, copy: ev.copy });
        }
        seen[idx] = true;
        sol.set(ev.node, ev.copy, ev.event, ev.retained_until, true);
    }
    Ok(sol)
}

// ---------------------------------------------------------------------------
// Exact oracle
// ---------------------------------------------------------------------------

/// Largest total interval count the oracle accepts.
pub const ORACLE_CAP_LIMIT: usize = 14;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance has {0} interval copies, the oracle handles at most {ORACLE_CAP_LIMIT}")]
    TooLarge(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// An exact optimum certified by exhaustive search.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub duration: u64,
    /// Lexicographically smallest optimal compute sequence.
    pub sequence: Vec<NodeId>,
    pub solution: IntervalSolution,
}

/// Exhaustive exact solve for tiny instances: enumerates compute sequences
/// depth-first in node-id order, maintaining the exact minimal-retention
/// memory profile incrementally. Minimal retention gives the pointwise
/// smallest memory profile of any assignment executing the sequence, so
/// pruning on the budget is exact; appending can only raise the profile, so
/// a partial overload is final. Returns `None` when no schedule fits the
/// budget.
pub fn brute_force_optimal(p: &RematProblem) -> Result<Option<OracleResult>, OracleError> {
    p.validate()?;
    let total = p.total_cap();
    if total > ORACLE_CAP_LIMIT {
        return Err(OracleError::TooLarge(total));
    }

    struct Dfs<'g> {
        g: &'g ComputeGraph,
        caps: &'g [u32],
        budget: u64,
        order: Option<&'g TopoOrder>,
        seq: Vec<NodeId>,
        counts: Vec<u32>,
        /// 1-based event of the latest occurrence, 0 when none.
        last_occ: Vec<usize>,
        /// `retained[k]` is the 1-based event occurrence `k + 1` is held
        /// through.
        retained: Vec<usize>,
        /// Memory load at event `t` is `load[t - 1]`.
        load: Vec<u64>,
        missing: usize,
        rest_duration: u64,
        duration: u64,
        /// Open stage and last slot used in it (staged mode only).
        stage: usize,
        last_slot: usize,
        best: Option<(u64, Vec<NodeId>)>,
    }

    impl Dfs<'_> {
        fn admissible(&self, v: NodeId) -> bool {
            if self.counts[v] >= self.caps[v] {
                return false;
            }
            if self.g.preds(v).iter().any(|&u| self.last_occ[u] == 0) {
                return false;
            }
            if let Some(order) = self.order {
                let j = order.position(v);
                if self.counts[v] == 0 {
                    if j != self.stage {
                        return false;
                    }
                } else if self.stage > order.len() || j <= self.last_slot || j >= self.stage {
                    return false;
                }
            }
            true
        }

        fn explore(&mut self) {
            let n = self.g.node_count();
            for v in 0..n {
                if !self.admissible(v) {
                    continue;
                }
                let first = self.counts[v] == 0;
                let after = self.duration
                    + self.g.duration(v)
                    + (self.rest_duration - if first { self.g.duration(v) } else { 0 });
                if let Some((b, _)) = &self.best {
                    if after >= *b {
                        continue;
                    }
                }

                // Append v at event t; extend each serving input through t.
                let t = self.seq.len() + 1;
                self.load.push(self.g.out_size(v));
                let mut extended: Vec<(usize, usize)> = Vec::new();
                let mut overloaded = self.load[t - 1] > self.budget;
                for &u in self.g.preds(v) {
                    let p = self.last_occ[u];
                    let r = self.retained[p - 1];
                    for e in (r + 1)..=t {
                        self.load[e - 1] += self.g.out_size(u);
                        if self.load[e - 1] > self.budget {
                            overloaded = true;
                        }
                    }
                    extended.push((p, r));
                    self.retained[p - 1] = t;
                }

                if !overloaded {
                    let saved = (self.last_occ[v], self.stage, self.last_slot);
                    self.seq.push(v);
                    self.counts[v] += 1;
                    self.retained.push(t);
                    self.last_occ[v] = t;
                    self.duration += self.g.duration(v);
                    if first {
                        self.missing -= 1;
                        self.rest_duration -= self.g.duration(v);
                        self.stage += 1;
                        self.last_slot = 0;
                    } else {
                        self.last_slot = self.order.map_or(0, |o| o.position(v));
                    }

                    if self.missing == 0 {
                        let better = self.best.as_ref().map_or(true, |(b, _)| self.duration < *b);
                        if better {
                            self.best = Some((self.duration, self.seq.clone()));
                        }
                    } else {
                        self.explore();
                    }

                    self.duration -= self.g.duration(v);
                    if first {
                        self.missing += 1;
                        self.rest_duration += self.g.duration(v);
                    }
                    self.last_occ[v] = saved.0;
                    self.stage = saved.1;
                    self.last_slot = saved.2;
                    self.retained.pop();
                    self.counts[v] -= 1;
                    self.seq.pop();
                }

                // Undo the retention extensions and the own-output slot.
                for &(p, r) in extended.iter().rev() {
                    for e in (r + 1)..=t {
                        self.load[e - 1] -= self.g.out_size(self.seq_node_at(p));
                    }
                    self.retained[p - 1] = r;
                }
                self.load.pop();
            }
        }

        fn seq_node_at(&self, event: usize) -> NodeId {
            self.seq[event - 1]
        }
    }

    let g = &p.graph;
    let order = match &p.mode {
        ScheduleMode::Staged(o) => Some(o),
        ScheduleMode::Unstaged => None,
    };
    let mut dfs = Dfs {
        g,
        caps: &p.remat_caps,
        budget: p.budget,
        order,
        seq: Vec::with_capacity(total),
        counts: vec![0; g.node_count()],
        last_occ: vec![0; g.node_count()],
        retained: Vec::with_capacity(total),
        load: Vec::with_capacity(total),
        missing: g.node_count(),
        rest_duration: g.total_duration(),
        duration: 0,
        stage: 1,
        last_slot: 0,
        best: None,
    };
    dfs.explore();

    Ok(dfs.best.map(|(duration, sequence)| {
        let solution =
            sequence_solution(p, &sequence).expect("oracle sequences encode on the event line");
        OracleResult { duration, sequence, solution }
    }))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{chain, enumerate_small_dags};
    use crate::graph::random_topological_order;
    use crate::test_fixtures::fig_graph;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fig_problem(budget: u64) -> RematProblem {
        RematProblem::new(fig_graph(), budget)
    }

    fn staged_fig(budget: u64) -> RematProblem {
        let g = fig_graph();
        let order = random_topological_order(&g, 0);
        let mut p = RematProblem::new(g, budget);
        p.mode = ScheduleMode::Staged(order);
        p
    }

    // -- simulate ----------------------------------------------------------

    #[test]
    fn straight_line_run_peaks_at_three() {
        let g = fig_graph();
        let r = simulate(&g, &[0, 1, 2, 3], &[2; 4]).unwrap();
        assert_eq!(r.peak_memory, 3);
        assert_eq!(r.total_duration, 4);
        assert_eq!(r.retention, vec![(0, 1, 4), (1, 2, 3), (2, 3, 4), (3, 4, 4)]);
    }

    #[test]
    fn recompute_trades_duration_for_shorter_retention() {
        let g = fig_graph();
        let r = simulate(&g, &[0, 1, 2, 0, 3], &[2; 4]).unwrap();
        assert_eq!(r.peak_memory, 3);
        assert_eq!(r.total_duration, 5);
        assert_eq!(r.retention, vec![(0, 1, 2), (1, 2, 3), (2, 3, 5), (0, 4, 5), (3, 5, 5)]);
    }

    #[test]
    fn early_recompute_is_also_legal() {
        let g = fig_graph();
        let r = simulate(&g, &[0, 1, 0, 2, 3], &[2; 4]).unwrap();
        assert_eq!(r.peak_memory, 3);
        assert_eq!(r.total_duration, 5);
    }

    #[test]
    fn chain_run_peaks_at_two() {
        let g = chain(3);
        let r = simulate(&g, &[0, 1, 2], &[1; 3]).unwrap();
        assert_eq!(r.peak_memory, 2);
        assert_eq!(r.total_duration, 3);
    }

    #[test]
    fn simulate_rejects_bad_sequences() {
        let g = fig_graph();
        assert_eq!(
            simulate(&g, &[1, 0, 2, 3], &[2; 4]),
            Err(SequenceError::InputNotComputed { position: 0, node: 1, input: 0 })
        );
        assert_eq!(
            simulate(&g, &[0, 0, 0, 1, 2, 3], &[2; 4]),
            Err(SequenceError::CapExceeded { node: 0, cap: 2 })
        );
        assert_eq!(
            simulate(&g, &[0, 1, 2], &[2; 4]),
            Err(SequenceError::MissingNode { node: 3 })
        );
        assert_eq!(
            simulate(&g, &[0, 1, 2, 9], &[2; 4]),
            Err(SequenceError::UnknownNode { position: 3, node: 9 })
        );
    }

    // -- sequence encoding -------------------------------------------------

    #[test]
    fn unstaged_encoding_uses_positions_as_events() {
        let p = fig_problem(3);
        let sol = sequence_solution(&p, &[0, 1, 2, 0, 3]).unwrap();
        assert_eq!((sol.start(0, 0), sol.end(0, 0)), (1, 2));
        assert_eq!((sol.start(1, 0), sol.end(1, 0)), (2, 3));
        assert_eq!((sol.start(2, 0), sol.end(2, 0)), (3, 5));
        assert_eq!((sol.start(0, 1), sol.end(0, 1)), (4, 5));
        assert_eq!((sol.start(3, 0), sol.end(3, 0)), (5, 5));
        assert!(is_valid(&sol, &p));
        assert_eq!(sol.peak_memory(&p.graph), 3);
        assert_eq!(sol.total_duration(&p.graph), 5);
    }

    #[test]
    fn staged_encoding_places_recomputes_on_stage_slots() {
        let p = staged_fig(3);
        let sol = sequence_solution(&p, &[0, 1, 2, 0, 3]).unwrap();
        assert_eq!((sol.start(0, 0), sol.end(0, 0)), (1, 3));
        assert_eq!((sol.start(1, 0), sol.end(1, 0)), (3, 6));
        assert_eq!((sol.start(2, 0), sol.end(2, 0)), (6, 10));
        assert_eq!((sol.start(0, 1), sol.end(0, 1)), (7, 10));
        assert_eq!((sol.start(3, 0), sol.end(3, 0)), (10, 10));
        assert!(is_valid(&sol, &p));
        assert_eq!(sol.peak_memory(&p.graph), 3);
    }

    #[test]
    fn staged_encoding_rejects_out_of_order_sequences() {
        let p = staged_fig(3);
        // A recompute after the final stage has no slot left.
        assert!(matches!(
            sequence_solution(&p, &[0, 1, 2, 3, 0]),
            Err(SequenceError::StagedTrailingRecompute { position: 4, node: 0 })
        ));
        let g = chain(3);
        let order = random_topological_order(&g, 0);
        let mut p = RematProblem::new(g, 10);
        p.mode = ScheduleMode::Staged(order);
        assert!(matches!(
            sequence_solution(&p, &[0, 1, 1, 0, 2]),
            Err(SequenceError::StagedSlotOrder { position: 3, node: 0 })
        ));
        assert!(matches!(
            sequence_solution(&p, &[1, 0, 2]),
            Err(SequenceError::InputNotComputed { position: 0, node: 1, input: 0 })
        ));
    }

    // -- validate ----------------------------------------------------------

    #[test]
    fn encoded_sequences_validate_cleanly() {
        let p = fig_problem(3);
        let sol = sequence_solution(&p, &[0, 1, 2, 3]).unwrap();
        assert_eq!(validate(&sol, &p), vec![]);
    }

    #[test]
    fn each_mutation_trips_its_own_check() {
        let p = fig_problem(3);
        let good = sequence_solution(&p, &[0, 1, 2, 0, 3]).unwrap();
        assert!(is_valid(&good, &p));

        let mut sol = good.clone();
        sol.deactivate(1, 0);
        assert!(validate(&sol, &p).contains(&Violation::FirstInactive { node: 1 }));

        let mut sol = good.clone();
        sol.set(2, 0, 3, 2, true);
        assert!(validate(&sol, &p)
            .iter()
            .any(|v| matches!(v, Violation::IntervalOrder { node: 2, copy: 0, .. })));

        let mut sol = good.clone();
        sol.set(0, 1, 1, 5, true);
        assert!(validate(&sol, &p)
            .iter()
            .any(|v| matches!(v, Violation::SameNodeOverlap { node: 0, copy: 1, .. })));

        let mut sol = good.clone();
        sol.set(1, 0, 4, 5, true);
        let report = validate(&sol, &p);
        assert!(report
            .iter()
            .any(|v| matches!(v, Violation::StartCollision { event: 4, .. })));

        let mut sol = good.clone();
        sol.set(3, 0, 3, 3, true);
        assert!(validate(&sol, &p)
            .iter()
            .any(|v| matches!(v, Violation::PrecedenceUnserved { edge: (0, 3), .. })));

        let mut tight = p.clone();
        tight.budget = 2;
        assert!(validate(&good, &tight)
            .iter()
            .any(|v| matches!(v, Violation::MemoryExceeded { budget: 2, .. })));
    }

    #[test]
    fn touching_provider_interval_serves_the_consumer() {
        // start(u) + 1 <= start(v) <= end(u) admits end(u) == start(v).
        let g = chain(2);
        let p = RematProblem::new(g, 2).with_uniform_cap(1);
        let mut sol = IntervalSolution::new(&p.remat_caps);
        sol.set(0, 0, 1, 2, true);
        sol.set(1, 0, 2, 2, true);
        assert!(is_valid(&sol, &p));
        // One event earlier and the consumer start is uncovered.
        sol.set(1, 0, 1, 1, true);
        let report = validate(&sol, &p);
        assert!(report
            .iter()
            .any(|v| matches!(v, Violation::PrecedenceUnserved { edge: (0, 1), .. })));
    }

    // -- schedule decoding -------------------------------------------------

    #[test]
    fn decode_orders_events_and_reports_costs() {
        let p = staged_fig(3);
        let mut sol = IntervalSolution::new(&p.remat_caps);
        sol.set(0, 0, 1, 3, true);
        sol.set(1, 0, 3, 6, true);
        sol.set(2, 0, 6, 10, true);
        sol.set(0, 1, 7, 10, true);
        sol.set(3, 0, 10, 10, true);
        let schedule = decode_schedule(&sol, &p).unwrap();
        assert_eq!(schedule.sequence(), vec![0, 1, 2, 0, 3]);
        assert_eq!(schedule.peak_memory, 3);
        assert_eq!(schedule.total_duration, 5);
        assert_eq!(schedule.events[3].event, 7);
        assert_eq!(schedule.events[3].retained_until, 10);
    }

    #[test]
    fn decode_refuses_invalid_assignments() {
        let p = fig_problem(2);
        let sol = sequence_solution(&p, &[0, 1, 2, 3]).unwrap();
        let err = decode_schedule(&sol, &p).unwrap_err();
        assert!(err.iter().any(|v| matches!(v, Violation::MemoryExceeded { .. })));
    }

    #[test]
    fn schedule_solution_round_trips() {
        let p = fig_problem(3);
        let sol = sequence_solution(&p, &[0, 1, 2, 0, 3]).unwrap();
        let schedule = decode_schedule(&sol, &p).unwrap();
        let back = schedule_solution(&schedule.events, &p).unwrap();
        assert_eq!(back, sol);

        let mut events = schedule.events.clone();
        events[0].node = 9;
        assert!(matches!(
            schedule_solution(&events, &p),
            Err(ScheduleError::UnknownNode { node: 9, .. })
        ));
        let mut events = schedule.events.clone();
        events[3].copy = 2;
        assert!(matches!(
            schedule_solution(&events, &p),
            Err(ScheduleError::CopyOutOfRange { node: 0, copy: 2, cap: 2 })
        ));
        let mut events = schedule.events.clone();
        events[3].copy = 0;
        assert!(matches!(
            schedule_solution(&events, &p),
            Err(ScheduleError::DuplicateCopy { node: 0, copy: 0 })
        ));
    }

    // -- oracle ------------------------------------------------------------

    #[test]
    fn oracle_finds_the_no_recompute_optimum() {
        let p = fig_problem(3);
        let r = brute_force_optimal(&p).unwrap().unwrap();
        assert_eq!(r.duration, 4);
        assert_eq!(r.sequence, vec![0, 1, 2, 3]);
        assert!(is_valid(&r.solution, &p));
    }

    #[test]
    fn oracle_proves_infeasibility_below_the_floor() {
        // Node 3 needs its two inputs plus its own output resident: load 3.
        let p = fig_problem(2);
        assert!(brute_force_optimal(&p).unwrap().is_none());
    }

    #[test]
    fn oracle_pays_for_recomputation_when_it_wins() {
        // Heavier middle tensors: keeping node 0 resident across them blows
        // a budget of 4, recomputing node 0 fits it.
        let g = ComputeGraph::new(
            vec![1; 4],
            vec![1, 2, 2, 1],
            vec![(0, 1), (1, 2), (2, 3), (0, 3)],
        )
        .unwrap();
        let p = RematProblem::new(g, 4);
        let r = brute_force_optimal(&p).unwrap().unwrap();
        assert_eq!(r.duration, 5);
        assert_eq!(r.sequence, vec![0, 1, 2, 0, 3]);
        assert!(is_valid(&r.solution, &p));
    }

    #[test]
    fn oracle_respects_the_staged_order() {
        let p = staged_fig(3);
        let r = brute_force_optimal(&p).unwrap().unwrap();
        assert_eq!(r.duration, 4);
        assert!(is_valid(&r.solution, &p));
        assert!(brute_force_optimal(&staged_fig(2)).unwrap().is_none());
    }

    #[test]
    fn oracle_rejects_oversized_instances() {
        let g = chain(8);
        let p = RematProblem::new(g, 8);
        assert!(matches!(brute_force_optimal(&p), Err(OracleError::TooLarge(16))));
    }

    #[test]
    fn oracle_durations_shrink_as_the_budget_grows() {
        for g in enumerate_small_dags(3).unwrap() {
            let total = g.total_size().max(1);
            let mut prev: Option<Option<u64>> = None;
            for budget in 0..=total {
                let p = RematProblem::new(g.clone(), budget);
                let d = brute_force_optimal(&p).unwrap().map(|r| r.duration);
                if let Some(prev) = prev {
                    match (prev, d) {
                        (Some(a), Some(b)) => assert!(b <= a),
                        (Some(_), None) => panic!("feasible instance became infeasible"),
                        _ => {}
                    }
                }
                prev = Some(d);
            }
            // The full budget admits the no-recompute optimum.
            let p = RematProblem::new(g.clone(), total);
            let r = brute_force_optimal(&p).unwrap().unwrap();
            assert_eq!(r.duration, g.total_duration());
        }
    }

    #[test]
    fn oracle_matches_the_structural_floor() {
        // Below max_v(own + inputs) the instance is always infeasible.
        for g in enumerate_small_dags(3).unwrap() {
            let floor = (0..g.node_count())
                .map(|v| g.out_size(v) + g.preds(v).iter().map(|&u| g.out_size(u)).sum::<u64>())
                .max()
                .unwrap();
            if floor == 0 {
                continue;
            }
            let p = RematProblem::new(g.clone(), floor - 1);
            assert!(brute_force_optimal(&p).unwrap().is_none(), "graph {g:?}");
        }
    }

    // -- cross-checks ------------------------------------------------------

    fn random_valid_sequence(
        g: &ComputeGraph,
        caps: &[u32],
        rng: &mut ChaCha8Rng,
    ) -> Vec<NodeId> {
        let base = random_topological_order(g, rng.gen()).order().to_vec();
        let mut seq = base.clone();
        for v in 0..g.node_count() {
            for _ in 1..caps[v] {
                if rng.gen_bool(0.4) {
                    let first = seq.iter().position(|&x| x == v).unwrap();
                    let at = rng.gen_range(first + 1..=seq.len());
                    seq.insert(at, v);
                }
            }
        }
        seq
    }

    proptest! {
        #[test]
        fn prop_simulation_matches_interval_accounting(seed in 0u64..300) {
            // The simulator's peak and duration must agree with the
            // closed-interval accounting of the encoded assignment.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graphs = enumerate_small_dags(4).unwrap();
            let g = graphs[rng.gen_range(0..graphs.len())].clone();
            let caps = vec![3u32; g.node_count()];
            let seq = random_valid_sequence(&g, &caps, &mut rng);
            let sim = simulate(&g, &seq, &caps).unwrap();
            let mut p = RematProblem::new(g, u64::MAX >> 2).with_uniform_cap(3);
            p.budget = sim.peak_memory;
            let sol = sequence_solution(&p, &seq).unwrap();
            prop_assert_eq!(sol.peak_memory(&p.graph), sim.peak_memory);
            prop_assert_eq!(sol.total_duration(&p.graph), sim.total_duration);
            // At its own peak budget the encoding is fully valid.
            prop_assert_eq!(validate(&sol, &p), vec![]);
            // One unit below, the memory check must fire.
            if sim.peak_memory > 0 {
                p.budget = sim.peak_memory - 1;
                let overloaded = validate(&sol, &p)
                    .iter()
                    .any(|v| matches!(v, Violation::MemoryExceeded { .. }));
                prop_assert!(overloaded);
            }
        }

        #[test]
        fn prop_staged_encodings_stay_valid(seed in 0u64..200) {
            // Stage-slot encoding preserves validity and costs for
            // sequences that respect the fixed order.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let graphs = enumerate_small_dags(4).unwrap();
            let g = graphs[rng.gen_range(0..graphs.len())].clone();
            let order = random_topological_order(&g, rng.gen());
            let base = order.order().to_vec();
            // Insert one recompute as a stage prefix where possible.
            let mut seq = base.clone();
            if g.node_count() >= 2 {
                let stage = rng.gen_range(1..g.node_count());
                let v = base[rng.gen_range(0..stage)];
                seq.insert(stage, v);
            }
            let caps = vec![2u32; g.node_count()];
            let sim = simulate(&g, &seq, &caps).unwrap();
            let mut p = RematProblem::new(g, sim.peak_memory);
            p.mode = ScheduleMode::Staged(order);
            let sol = sequence_solution(&p, &seq).unwrap();
            prop_assert_eq!(sol.peak_memory(&p.graph), sim.peak_memory);
            prop_assert_eq!(sol.total_duration(&p.graph), sim.total_duration);
            prop_assert_eq!(validate(&sol, &p), vec![]);
        }
    }

    #[test]
    fn raising_a_cap_never_hurts_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for g in enumerate_small_dags(3).unwrap() {
            let n = g.node_count();
            let budget = rng.gen_range(0..=g.total_size().max(1));
            let base = RematProblem::new(g.clone(), budget).with_uniform_cap(1);
            let d1 = brute_force_optimal(&base).unwrap().map(|r| r.duration);
            let mut caps = vec![1u32; n];
            caps[rng.gen_range(0..n)] = 2;
            let mut richer = base.clone();
            richer.remat_caps = caps;
            let d2 = brute_force_optimal(&richer).unwrap().map(|r| r.duration);
            match (d1, d2) {
                (Some(a), Some(b)) => assert!(b <= a),
                (Some(_), None) => panic!("extra cap lost feasibility"),
                _ => {}
            }
        }
    }
}
