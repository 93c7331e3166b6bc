//! Schedule search.
//!
//! Every instance first runs a warm-started large-neighborhood search over
//! execution sequences. Instances whose event line fits in 64 events then
//! run an exact branch-and-bound that either proves the incumbent optimal
//! or proves the budget infeasible; larger instances keep the best
//! incumbent found. Every incumbent is re-checked by the independent
//! validator before it is accepted.

mod bnb;
mod domain;
mod lns;
mod propagate;
mod solution;

pub use solution::{IntervalSolution, DUMMY_EVENT};

use std::fmt;
use std::io;
use std::thread;
use std::time::{Duration, Instant};

use crate::evaluator;
use crate::graph::ComputeGraph;
use crate::model::{build_model, ModelError, RematProblem};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Search limits beyond what the problem itself carries.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Wall-clock limit in seconds. The search also stops earlier when a
    /// round or stall limit triggers; given the same seed and limits, two
    /// runs explore identical states unless the clock cuts one short.
    pub time_limit: f64,
    /// Independent search workers on large instances, merged by best
    /// duration with ties to the lowest worker index. The exact search
    /// stays single-threaded regardless.
    pub worker_count: usize,
    pub seed: u64,
    /// Hard cap on improvement rounds; handy for fast deterministic tests.
    pub max_rounds: u64,
    /// Stop after this many consecutive non-improving rounds. `None` keeps
    /// searching until another limit triggers.
    pub stall_rounds: Option<u64>,
    /// Topological orders sampled for the free-order warm start.
    pub warm_orders: usize,
}

impl SolveConfig {
    pub fn new(time_limit: f64, seed: u64) -> Self {
        SolveConfig {
            time_limit,
            worker_count: 1,
            seed,
            max_rounds: u64::MAX,
            stall_rounds: Some(512),
            warm_orders: 8,
        }
    }

    /// Mirrors the limits recorded on the problem.
    pub fn from_problem(p: &RematProblem) -> Self {
        SolveConfig::new(p.time_limit, p.seed)
    }
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Best possible duration under the budget, proven.
    Optimal,
    /// A valid schedule was found; better ones may exist.
    Feasible,
    /// No schedule fits the budget, proven.
    Infeasible,
    /// Neither a schedule nor an infeasibility proof within the limits.
    Unknown,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One incumbent improvement, for anytime-behavior traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub elapsed_seconds: f64,
    pub objective: u64,
    /// Duration overhead versus computing every node exactly once.
    pub tdi_percent: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SolveTimings {
    /// Time spent driving the warm start's memory under the budget.
    pub phase1_seconds: f64,
    pub total_seconds: f64,
    pub time_to_best_seconds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Total duration of the best schedule found.
    pub objective: Option<u64>,
    pub peak_memory: Option<u64>,
    pub best: Option<IntervalSolution>,
    /// Smallest memory peak any explored sequence reached; on over-budget
    /// outcomes this shows how close the search came.
    pub closest_peak: Option<u64>,
    /// Duration no schedule can beat: the no-recompute total, raised to
    /// the optimum when the search completes.
    pub lower_bound: u64,
    pub incumbents: usize,
    /// Search tree nodes visited by the exact search, when it ran.
    pub nodes_explored: u64,
    pub search_rounds: u64,
    pub trace: Vec<TracePoint>,
    pub timings: SolveTimings,
}

/// Writes an incumbent trace as CSV with an
/// `elapsed_seconds,objective,total_duration_increase_percent` header.
pub fn write_trace_csv<W: io::Write>(mut out: W, trace: &[TracePoint]) -> io::Result<()> {
    writeln!(out, "elapsed_seconds,objective,total_duration_increase_percent")?;
    for point in trace {
        writeln!(
            out,
            "{:.6},{},{:.1}",
            point.elapsed_seconds, point.objective, point.tdi_percent
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared incumbent state
// ---------------------------------------------------------------------------

pub(crate) struct SearchContext<'a> {
    pub problem: &'a RematProblem,
    pub started: Instant,
    pub deadline: Instant,
    pub best_duration: Option<u64>,
    pub best_solution: Option<IntervalSolution>,
    pub trace: Vec<TracePoint>,
    pub incumbents: usize,
    pub time_to_best: Option<f64>,
}

impl<'a> SearchContext<'a> {
    pub(crate) fn new(problem: &'a RematProblem, started: Instant, deadline: Instant) -> Self {
        SearchContext {
            problem,
            started,
            deadline,
            best_duration: None,
            best_solution: None,
            trace: Vec::new(),
            incumbents: 0,
            time_to_best: None,
        }
    }

    /// Accepts a strictly improving schedule. Every incumbent passes the
    /// independent validator first; the search never reports a schedule it
    /// cannot justify.
    pub(crate) fn offer(&mut self, sol: IntervalSolution, duration: u64) {
        if self.best_duration.map_or(false, |b| duration >= b) {
            return;
        }
        let violations = evaluator::validate(&sol, self.problem);
        assert!(
            violations.is_empty(),
            "search produced an invalid schedule: {violations:?}"
        );
        debug_assert_eq!(sol.total_duration(&self.problem.graph), duration);
        let elapsed = self.started.elapsed().as_secs_f64();
        let base = self.problem.graph.total_duration();
        let tdi = if base == 0 {
            0.0
        } else {
            (duration - base) as f64 * 100.0 / base as f64
        };
        self.best_duration = Some(duration);
        self.best_solution = Some(sol);
        self.incumbents += 1;
        self.time_to_best = Some(elapsed);
        self.trace.push(TracePoint {
            elapsed_seconds: elapsed,
            objective: duration,
            tdi_percent: tdi,
        });
    }
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Smallest budget any schedule can satisfy: some event holds a node's
/// output together with all of its inputs.
pub fn structural_memory_floor(g: &ComputeGraph) -> u64 {
    (0..g.node_count())
        .map(|v| g.out_size(v) + g.preds(v).iter().map(|&u| g.out_size(u)).sum::<u64>())
        .max()
        .unwrap_or(0)
}

/// Solves with the limits recorded on the problem itself.
pub fn solve_problem(p: &RematProblem) -> Result<SolveReport, ModelError> {
    solve(p, &SolveConfig::from_problem(p))
}

pub fn solve(p: &RematProblem, cfg: &SolveConfig) -> Result<SolveReport, ModelError> {
    let m = build_model(p)?;
    let started = Instant::now();
    let deadline = started + Duration::from_secs_f64(cfg.time_limit.max(0.0));
    let base_duration = p.graph.total_duration();
    let exact = m.domain.size() <= domain::MAX_EVENTS;

    let mut report = SolveReport {
        status: SolveStatus::Unknown,
        objective: None,
        peak_memory: None,
        best: None,
        closest_peak: None,
        lower_bound: base_duration,
        incumbents: 0,
        nodes_explored: 0,
        search_rounds: 0,
        trace: Vec::new(),
        timings: SolveTimings::default(),
    };

    if p.budget < structural_memory_floor(&p.graph) {
        report.status = SolveStatus::Infeasible;
        report.timings.total_seconds = started.elapsed().as_secs_f64();
        return Ok(report);
    }

    let mut ctx = SearchContext::new(p, started, deadline);
    let params = lns::LnsParams {
        seed: cfg.seed,
        // The exact search takes over on small instances; the sequence
        // search only primes its incumbent there.
        max_rounds: if exact { cfg.max_rounds.min(256) } else { cfg.max_rounds },
        stall_rounds: cfg.stall_rounds,
        warm_orders: cfg.warm_orders,
    };

    if exact || cfg.worker_count <= 1 {
        let stats = lns::run_lns(p, &mut ctx, &params);
        report.search_rounds = stats.rounds;
        report.closest_peak = Some(stats.min_peak);
        report.timings.phase1_seconds = stats.phase1_seconds;
    } else {
        let workers: Vec<(SearchContext, lns::LnsStats)> = thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.worker_count)
                .map(|w| {
                    let wparams = lns::LnsParams {
                        seed: cfg.seed.wrapping_add(w as u64 * 0x9e37_79b9),
                        ..params.clone()
                    };
                    scope.spawn(move || {
                        let mut wctx = SearchContext::new(p, started, deadline);
                        let stats = lns::run_lns(p, &mut wctx, &wparams);
                        (wctx, stats)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("search worker panicked"))
                .collect()
        });
        for (wctx, stats) in workers {
            report.search_rounds += stats.rounds;
            report.closest_peak = Some(match report.closest_peak {
                Some(peak) => peak.min(stats.min_peak),
                None => stats.min_peak,
            });
            report.timings.phase1_seconds =
                report.timings.phase1_seconds.max(stats.phase1_seconds);
            let better = match (ctx.best_duration, wctx.best_duration) {
                (None, Some(_)) => true,
                (Some(mine), Some(theirs)) => theirs < mine,
                _ => false,
            };
            if better {
                ctx.best_duration = wctx.best_duration;
                ctx.best_solution = wctx.best_solution;
                ctx.trace = wctx.trace;
                ctx.incumbents = wctx.incumbents;
                ctx.time_to_best = wctx.time_to_best;
            }
        }
    }

    if exact {
        let result = bnb::run_bnb(&m, &mut ctx);
        report.nodes_explored = result.nodes;
        if result.complete {
            report.status = match ctx.best_duration {
                Some(_) => SolveStatus::Optimal,
                None => SolveStatus::Infeasible,
            };
        }
    }
    if report.status == SolveStatus::Unknown {
        report.status = match ctx.best_duration {
            Some(d) if d == base_duration => SolveStatus::Optimal,
            Some(_) => SolveStatus::Feasible,
            None => SolveStatus::Unknown,
        };
    }
    if report.status == SolveStatus::Optimal {
        report.lower_bound = ctx.best_duration.expect("optimal status implies an incumbent");
    }
    report.objective = ctx.best_duration;
    report.peak_memory = ctx.best_solution.as_ref().map(|s| s.peak_memory(&p.graph));
    report.best = ctx.best_solution;
    report.incumbents = ctx.incumbents;
    report.trace = ctx.trace;
    report.timings.time_to_best_seconds = ctx.time_to_best;
    report.timings.total_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---------------------------------------------------------------------------
