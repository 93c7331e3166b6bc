//! Retention-interval formulation of the rematerialization scheduling
//! problem.
//!
//! Execution is modeled on an integer event line. Each node `v` owns up to
//! `C_v` retention intervals; interval copy `i` of `v` is a triple
//! `(start, end, active)`. An active interval means: `v` is (re)computed at
//! its start event and its output tensor is held in memory through every
//! event of the closed range `[start, end]`. The first copy of every node is
//! always active. Constraints:
//!
//! * interval order: `start <= end` per active copy;
//! * same-node order: consecutive active copies of a node satisfy
//!   `end(i) <= start(i+1)`;
//! * memory: at every event, the sizes of covering active intervals sum to
//!   at most the budget;
//! * precedence: for every edge `u -> v` and active copy `i` of `v`, some
//!   active copy `j` of `u` satisfies `start(u,j) + 1 <= start(v,i) <=
//!   end(u,j)` (the input is computed strictly earlier and still held);
//! * start collisions: active starts are pairwise distinct.
//!
//! Precedence is also expressed as per-edge reservoir ledgers (see
//! [`ReservoirGroup`]): a consumer borrows one unit at its start event and
//! returns it one event later, while each provider copy deposits a unit for
//! the span its tensor is held. The running level staying non-negative is
//! equivalent to the precedence constraint.
//!
//! Two event domains are supported. The unstaged domain has one event per
//! interval copy. The staged domain fixes a topological order and gives
//! stage `j` exactly `j` event slots, so recomputations can only occupy the
//! slot matching their node's position; this shrinks the search space at the
//! cost of fixing the compute order.

use thiserror::Error;

use crate::graph::{ComputeGraph, NodeId, TopoOrder};
use crate::solver::IntervalSolution;

/// 1-based index into the event line.
pub type Event = usize;

/// Values this far up the u64 range are rejected at model build so that
/// interval sums can never overflow 64-bit arithmetic.
const SUM_LIMIT: u128 = 1 << 62;
const DOMAIN_LIMIT: usize = 1 << 26;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("remat cap for node {0} must be at least 1")]
    CapZero(NodeId),
    #[error("expected {expected} remat caps, got {got}")]
    CapsLengthMismatch { expected: usize, got: usize },
    #[error("staged order covers {got} nodes, graph has {expected}")]
    OrderLengthMismatch { expected: usize, got: usize },
    #[error("sum of {0} exceeds the supported integer range")]
    Overflow(&'static str),
    #[error("event domain of {0} events exceeds the supported size")]
    DomainTooLarge(usize),
}

// ---------------------------------------------------------------------------
// Problem statement
// ---------------------------------------------------------------------------

/// Which event domain the schedule lives on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Free compute order; one event per interval copy.
    Unstaged,
    /// Compute order fixed to the given topological order; triangular event
    /// domain with one slot per (stage, earlier node) pair.
    Staged(TopoOrder),
}

impl ScheduleMode {
    pub fn is_staged(&self) -> bool {
        matches!(self, ScheduleMode::Staged(_))
    }
}

/// A rematerialization scheduling problem: graph, memory budget, per-node
/// recompute caps, event-domain mode, and solve defaults.
#[derive(Debug, Clone)]
pub struct RematProblem {
    pub graph: ComputeGraph,
    /// Memory budget, in the same units as node output sizes.
    pub budget: u64,
    /// Per-node interval caps `C_v >= 1`. Caps count computations, so cap 1
    /// means "never rematerialize".
    pub remat_caps: Vec<u32>,
    pub mode: ScheduleMode,
    /// Solve time limit in seconds, used when a solver config is derived
    /// from the problem.
    pub time_limit: f64,
    pub seed: u64,
}

pub const DEFAULT_REMAT_CAP: u32 = 2;

impl RematProblem {
    pub fn new(graph: ComputeGraph, budget: u64) -> Self {
        let caps = vec![DEFAULT_REMAT_CAP; graph.node_count()];
        RematProblem {
            graph,
            budget,
            remat_caps: caps,
            mode: ScheduleMode::Unstaged,
            time_limit: 60.0,
            seed: 0,
        }
    }

    pub fn with_uniform_cap(mut self, cap: u32) -> Self {
        self.remat_caps = vec![cap; self.graph.node_count()];
        self
    }

    pub fn staged(mut self, order: TopoOrder) -> Self {
        self.mode = ScheduleMode::Staged(order);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.graph.node_count();
        if self.remat_caps.len() != n {
            return Err(ModelError::CapsLengthMismatch { expected: n, got: self.remat_caps.len() });
        }
        if let Some(v) = self.remat_caps.iter().position(|&c| c == 0) {
            return Err(ModelError::CapZero(v));
        }
        if let ScheduleMode::Staged(order) = &self.mode {
            if order.len() != n {
                return Err(ModelError::OrderLengthMismatch { expected: n, got: order.len() });
            }
        }
        let total_size: u128 = (0..n).map(|v| self.graph.out_size(v) as u128).sum();
        if total_size >= SUM_LIMIT {
            return Err(ModelError::Overflow("output sizes"));
        }
        let total_weighted: u128 = (0..n)
            .map(|v| self.graph.duration(v) as u128 * self.remat_caps[v] as u128)
            .sum();
        if total_weighted >= SUM_LIMIT {
            return Err(ModelError::Overflow("durations times caps"));
        }
        Ok(())
    }

    pub fn total_cap(&self) -> usize {
        self.remat_caps.iter().map(|&c| c as usize).sum()
    }
}

// ---------------------------------------------------------------------------
// Event domain
// ---------------------------------------------------------------------------

/// The integer event line a model instance is placed on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDomain {
    size: usize,
    staged: bool,
}

impl EventDomain {
    pub fn unstaged(total_cap: usize) -> Self {
        EventDomain { size: total_cap, staged: false }
    }

    pub fn staged(n: usize) -> Self {
        EventDomain { size: n * (n + 1) / 2, staged: true }
    }

    /// Number of events; the domain is `1..=size()`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_staged(&self) -> bool {
        self.staged
    }

    pub fn first_event(&self) -> Event {
        1
    }

    pub fn last_event(&self) -> Event {
        self.size
    }

    /// Staged domains only: the event of `slot` within `stage` (both
    /// 1-based, `slot <= stage`). Stage `j` holds events
    /// `j(j-1)/2 + 1 ..= j(j+1)/2`.
    pub fn staged_event(&self, stage: usize, slot: usize) -> Event {
        debug_assert!(self.staged && slot >= 1 && slot <= stage);
        stage * (stage - 1) / 2 + slot
    }

    /// Staged domains only: the event where the node in position `j` of the
    /// order performs its mandatory first computation (the last slot of
    /// stage `j`).
    pub fn first_compute_event(&self, j: usize) -> Event {
        self.staged_event(j, j)
    }
}

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

/// Allowed start placements for an interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainSpec {
    /// Contiguous event range `lo..=hi`.
    Range { lo: Event, hi: Event },
    /// Staged slot set: the events `staged_event(stage, slot)` for
    /// `stage_lo..=stage_hi`. Empty when `stage_lo > stage_hi`.
    Slots { slot: usize, stage_lo: usize, stage_hi: usize },
}

impl DomainSpec {
    pub fn events<'d>(&self, domain: &'d EventDomain) -> Box<dyn Iterator<Item = Event> + 'd> {
        match *self {
            DomainSpec::Range { lo, hi } => Box::new(lo..=hi),
            DomainSpec::Slots { slot, stage_lo, stage_hi } => {
                let d = domain.clone();
                Box::new((stage_lo..=stage_hi).map(move |stage| d.staged_event(stage, slot)))
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match *self {
            DomainSpec::Range { lo, hi } => lo > hi,
            DomainSpec::Slots { stage_lo, stage_hi, .. } => stage_lo > stage_hi,
        }
    }
}

/// One retention-interval variable triple.
#[derive(Debug, Clone)]
pub struct IntervalVar {
    pub node: NodeId,
    /// 0-based copy index; copy 0 is the mandatory computation.
    pub copy: usize,
    pub weight: u64,
    pub size: u64,
    pub start_domain: DomainSpec,
    pub end_domain: DomainSpec,
    /// Set when the formulation pins the start outright (staged copy 0).
    pub fixed_start: Option<Event>,
    /// Copy 0 is always active; other copies carry a free activity flag.
    pub always_active: bool,
}

/// What the solver minimizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Objective {
    /// Sum of node durations over active intervals.
    TotalDuration,
    /// Peak-memory envelope `max(peak, floor)`: the phase-1 objective, with
    /// the peak variable ranging over `0..=mvar_max`.
    PeakEnvelope { floor: u64, mvar_max: u64 },
}

/// Time reference of a reservoir ledger entry. Consumer entries take effect
/// at their nominal event; provider entries take effect one event later,
/// matching closed-interval retention (a tensor computed at `s` is usable
/// from `s + 1`, and one held through `e` is released after `e`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRef {
    ConsumerStart { node: NodeId, copy: usize },
    /// `start + 1` of the consumer copy.
    ConsumerRelease { node: NodeId, copy: usize },
    ProviderStart { node: NodeId, copy: usize },
    ProviderEnd { node: NodeId, copy: usize },
}

/// One entry of a reservoir ledger: `delta` applied at `time`, guarded by
/// the activity flag of the interval the time refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelEvent {
    pub time: TimeRef,
    pub delta: i32,
}

impl LevelEvent {
    /// The interval whose activity flag guards this entry.
    pub fn guard(&self) -> (NodeId, usize) {
        match self.time {
            TimeRef::ConsumerStart { node, copy }
            | TimeRef::ConsumerRelease { node, copy }
            | TimeRef::ProviderStart { node, copy }
            | TimeRef::ProviderEnd { node, copy } => (node, copy),
        }
    }

    /// Effective time under an assignment, or `None` when the guarding
    /// interval is inactive.
    pub fn effective_time(&self, sol: &IntervalSolution) -> Option<Event> {
        match self.time {
            TimeRef::ConsumerStart { node, copy } => {
                sol.is_active(node, copy).then(|| sol.start(node, copy))
            }
            TimeRef::ConsumerRelease { node, copy } => {
                sol.is_active(node, copy).then(|| sol.start(node, copy) + 1)
            }
            TimeRef::ProviderStart { node, copy } => {
                sol.is_active(node, copy).then(|| sol.start(node, copy) + 1)
            }
            TimeRef::ProviderEnd { node, copy } => {
                sol.is_active(node, copy).then(|| sol.end(node, copy) + 1)
            }
        }
    }
}

/// The reservoir ledgers of one edge: one ledger per consumer copy.
#[derive(Debug, Clone)]
pub struct ReservoirGroup {
    pub edge: (NodeId, NodeId),
    /// `per_copy[i]` is the ledger enforcing precedence for consumer copy
    /// `i`: consumer borrow/release entries first, then provider
    /// deposit/withdraw entries per provider copy.
    pub per_copy: Vec<Vec<LevelEvent>>,
}

/// A built model: variables, domains, objective, and constraint structure,
/// ready for the solver.
#[derive(Debug, Clone)]
pub struct ModelInstance<'a> {
    pub problem: &'a RematProblem,
    pub domain: EventDomain,
    pub intervals: Vec<IntervalVar>,
    /// Interval indices of node `v` are `node_intervals[v].clone()`.
    pub node_intervals: Vec<std::ops::Range<usize>>,
    pub objective: Objective,
    /// Memory capacity enforced as a hard constraint; `None` in phase-1
    /// instances where the peak is the objective instead.
    pub capacity: Option<u64>,
    pub reservoir: Vec<ReservoirGroup>,
}

/// Builds the model for `p` in its configured mode.
pub fn build_model(p: &RematProblem) -> Result<ModelInstance<'_>, ModelError> {
    match &p.mode {
        ScheduleMode::Unstaged => build_unstaged(p),
        ScheduleMode::Staged(_) => build_staged_model(p),
    }
}

fn build_unstaged(p: &RematProblem) -> Result<ModelInstance<'_>, ModelError> {
    p.validate()?;
    let domain = EventDomain::unstaged(p.total_cap());
    if domain.size() > DOMAIN_LIMIT {
        return Err(ModelError::DomainTooLarge(domain.size()));
    }
    let full = DomainSpec::Range { lo: domain.first_event(), hi: domain.last_event() };
    let mut intervals = Vec::with_capacity(p.total_cap());
    let mut node_intervals = Vec::with_capacity(p.graph.node_count());
    for v in 0..p.graph.node_count() {
        let begin = intervals.len();
        for copy in 0..p.remat_caps[v] as usize {
            intervals.push(IntervalVar {
                node: v,
                copy,
                weight: p.graph.duration(v),
                size: p.graph.out_size(v),
                start_domain: full.clone(),
                end_domain: full.clone(),
                fixed_start: None,
                always_active: copy == 0,
            });
        }
        node_intervals.push(begin..intervals.len());
    }
    Ok(ModelInstance {
        problem: p,
        domain,
        intervals,
        node_intervals,
        objective: Objective::TotalDuration,
        capacity: Some(p.budget),
        reservoir: build_reservoir(p),
    })
}

/// Builds the staged model: the compute order is fixed to the problem's
/// topological order, stage `j` contributes `j` events, the first copy of
/// the node in position `j` is pinned to the last slot of stage `j`, and
/// recompute copies of that node may only occupy slot `j` of later stages.
/// Distinct nodes can never collide on an event by construction; only
/// copies of one node share slot events and must stay pairwise distinct.
pub fn build_staged_model(p: &RematProblem) -> Result<ModelInstance<'_>, ModelError> {
    p.validate()?;
    let order = match &p.mode {
        ScheduleMode::Staged(order) => order,
        ScheduleMode::Unstaged => {
            return Err(ModelError::OrderLengthMismatch { expected: p.graph.node_count(), got: 0 })
        }
    };
    let n = p.graph.node_count();
    let domain = EventDomain::staged(n);
    if domain.size() > DOMAIN_LIMIT {
        return Err(ModelError::DomainTooLarge(domain.size()));
    }
    let mut intervals = Vec::with_capacity(p.total_cap());
    let mut node_intervals = Vec::with_capacity(n);
    for v in 0..n {
        let j = order.position(v);
        let begin = intervals.len();
        for copy in 0..p.remat_caps[v] as usize {
            let (start_domain, fixed_start) = if copy == 0 {
                let e = domain.first_compute_event(j);
                (DomainSpec::Slots { slot: j, stage_lo: j, stage_hi: j }, Some(e))
            } else {
                // Later copies of position-j nodes live in slot j of later
                // stages; the last node has no later stage and can never be
                // recomputed.
                (DomainSpec::Slots { slot: j, stage_lo: j + copy, stage_hi: n }, None)
            };
            intervals.push(IntervalVar {
                node: v,
                copy,
                weight: p.graph.duration(v),
                size: p.graph.out_size(v),
                start_domain,
                end_domain: DomainSpec::Range {
                    lo: domain.first_event(),
                    hi: domain.last_event(),
                },
                fixed_start,
                always_active: copy == 0,
            });
        }
        node_intervals.push(begin..intervals.len());
    }
    Ok(ModelInstance {
        problem: p,
        domain,
        intervals,
        node_intervals,
        objective: Objective::TotalDuration,
        capacity: Some(p.budget),
        reservoir: build_reservoir(p),
    })
}

fn build_reservoir(p: &RematProblem) -> Vec<ReservoirGroup> {
    p.graph
        .edges()
        .iter()
        .map(|&(u, v)| {
            let per_copy = (0..p.remat_caps[v] as usize)
                .map(|i| {
                    let mut events = vec![
                        LevelEvent { time: TimeRef::ConsumerStart { node: v, copy: i }, delta: -1 },
                        LevelEvent {
                            time: TimeRef::ConsumerRelease { node: v, copy: i },
                            delta: 1,
                        },
                    ];
                    for j in 0..p.remat_caps[u] as usize {
                        events.push(LevelEvent {
                            time: TimeRef::ProviderStart { node: u, copy: j },
                            delta: 1,
                        });
                        events.push(LevelEvent {
                            time: TimeRef::ProviderEnd { node: u, copy: j },
                            delta: -1,
                        });
                    }
                    events
                })
                .collect();
            ReservoirGroup { edge: (u, v), per_copy }
        })
        .collect()
}

impl<'a> ModelInstance<'a> {
    pub fn interval_count(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval_index(&self, node: NodeId, copy: usize) -> usize {
        self.node_intervals[node].start + copy
    }

    /// Number of per-edge reservoir groups.
    pub fn reservoir_group_count(&self) -> usize {
        self.reservoir.len()
    }

    /// Total number of reservoir ledgers (one per edge per consumer copy).
    pub fn reservoir_ledger_count(&self) -> usize {
        self.reservoir.iter().map(|g| g.per_copy.len()).sum()
    }

    /// The reservoir ledger of consumer copy `copy` on the `edge_index`-th
    /// edge of the graph.
    pub fn reservoir_events(&self, edge_index: usize, copy: usize) -> &[LevelEvent] {
        &self.reservoir[edge_index].per_copy[copy]
    }

    /// Derives the phase-1 instance: the memory capacity becomes a decision
    /// quantity and the objective becomes the envelope `max(peak, target)`,
    /// which is minimized first to find a memory-feasible warm start.
    pub fn to_phase1(&self, target: u64) -> ModelInstance<'a> {
        let mut m = self.clone();
        m.objective =
            Objective::PeakEnvelope { floor: target, mvar_max: m.problem.graph.total_size() };
        m.capacity = None;
        m
    }

    /// Human-readable listing of variables and constraint structure.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let g = &self.problem.graph;
        let _ = writeln!(
            out,
            "events: 1..={} ({})",
            self.domain.size(),
            if self.domain.is_staged() { "staged" } else { "unstaged" }
        );
        match &self.objective {
            Objective::TotalDuration => {
                let _ = writeln!(out, "objective: minimize total duration");
            }
            Objective::PeakEnvelope { floor, mvar_max } => {
                let _ = writeln!(
                    out,
                    "objective: minimize max(peak memory, {floor}), peak in 0..={mvar_max}"
                );
            }
        }
        match self.capacity {
            Some(m) => {
                let _ = writeln!(out, "memory: capacity {m}, closed-interval accounting");
            }
            None => {
                let _ = writeln!(out, "memory: tracked as objective (no hard capacity)");
            }
        }
        for iv in &self.intervals {
            let start = match (&iv.fixed_start, &iv.start_domain) {
                (Some(e), _) => format!("= {e}"),
                (None, DomainSpec::Range { lo, hi }) => format!("in {lo}..={hi}"),
                (None, DomainSpec::Slots { slot, stage_lo, stage_hi }) => {
                    format!("in slot {slot} of stages {stage_lo}..={stage_hi}")
                }
            };
            let end = match &iv.end_domain {
                DomainSpec::Range { lo, hi } => format!("{lo}..={hi}"),
                DomainSpec::Slots { slot, stage_lo, stage_hi } => {
                    format!("slot {slot} of stages {stage_lo}..={stage_hi}")
                }
            };
            let _ = writeln!(
                out,
                "interval {}#{}: start {start}, end in {end}, {}, w={}, m={}",
                g.name(iv.node),
                iv.copy + 1,
                if iv.always_active { "active" } else { "optional" },
                iv.weight,
                iv.size,
            );
        }
        let _ = writeln!(
            out,
            "same-node order: end(v,i) <= start(v,i+1) per consecutive active copies"
        );
        if !self.domain.is_staged() {
            let _ = writeln!(out, "alldifferent: active starts pairwise distinct");
        }
        for group in &self.reservoir {
            let _ = writeln!(
                out,
                "reservoir {} -> {}: {} ledgers of {} entries",
                g.name(group.edge.0),
                g.name(group.edge.1),
                group.per_copy.len(),
                group.per_copy.first().map_or(0, |l| l.len()),
            );
        }
        out
    }
}

/// Sweeps one reservoir ledger under a complete assignment and reports
/// whether the running level stays non-negative. Entries are grouped by
/// effective time; the level is checked after each group, so simultaneous
/// deposits cover simultaneous borrows.
pub fn reservoir_level_ok(events: &[LevelEvent], sol: &IntervalSolution) -> bool {
    let mut timeline: Vec<(Event, i64)> = events
        .iter()
        .filter_map(|ev| ev.effective_time(sol).map(|t| (t, ev.delta as i64)))
        .collect();
    timeline.sort_unstable_by_key(|&(t, _)| t);
    let mut level = 0i64;
    let mut i = 0;
    while i < timeline.len() {
        let t = timeline[i].0;
        while i < timeline.len() && timeline[i].0 == t {
            level += timeline[i].1;
            i += 1;
        }
        if level < 0 {
            return false;
        }
    }
    true
}
