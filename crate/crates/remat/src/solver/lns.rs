//! Large-neighborhood search over execution sequences.
//!
//! A sequence lists node computations in order; memory follows from keeping
//! each computed tensor exactly until its last use before the node is
//! computed again. The search runs in two phases:
//!
//! 1. While the profile exceeds the budget, split retention spans that
//!    cross overloaded positions: recompute the span's node just before its
//!    next consumer, freeing the stretch in between. Splits sweep left to
//!    right from the first overloaded position and are accepted whenever
//!    they strictly lower the load there, so equal-load plateaus cannot
//!    stall them; the per-node recomputation caps bound the total number of
//!    insertions, which guarantees the phase terminates.
//! 2. Once feasible, shed recomputations that are no longer needed and
//!    explore window relaxations: drop the repeat computations inside a
//!    random window, repair feasibility with fresh splits, and keep the
//!    result when the total duration strictly improves.
//!
//! All moves keep the sequence representable in the problem's mode; in
//! staged mode recomputations are placed into a stage prefix at their
//! node's slot.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::evaluator::sequence_solution;
use crate::graph::{random_topological_order, ComputeGraph, NodeId, TopoOrder};
use crate::model::{RematProblem, ScheduleMode};

use super::SearchContext;

#[derive(Debug, Clone)]
pub(crate) struct LnsParams {
    pub seed: u64,
    /// Hard cap on improvement rounds after a feasible sequence exists.
    pub max_rounds: u64,
    /// Stop after this many consecutive rounds without improvement.
    pub stall_rounds: Option<u64>,
    /// Topological orders sampled for the free-order warm start.
    pub warm_orders: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LnsStats {
    pub rounds: u64,
    pub phase1_seconds: f64,
    /// Smallest memory peak any explored sequence reached.
    pub min_peak: u64,
}

/// How many consecutive failed split attempts end phase one.
const PHASE1_STALL: u64 = 64;
/// How many split candidates are evaluated per attempt.
const SPLIT_CANDIDATES: usize = 8;

pub(crate) fn run_lns(
    p: &RematProblem,
    ctx: &mut SearchContext,
    params: &LnsParams,
) -> LnsStats {
    let g = &p.graph;
    let n = g.node_count();
    let base_duration = g.total_duration();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut eval = SeqEval::new(n);

    // ---- warm start -------------------------------------------------------
    let mut seq: Vec<NodeId> = match &p.mode {
        ScheduleMode::Staged(order) => order.order().to_vec(),
        ScheduleMode::Unstaged => {
            let mut best: Option<(u64, Vec<NodeId>)> = None;
            for w in 0..params.warm_orders.max(1) {
                let order = random_topological_order(g, params.seed.wrapping_add(w as u64));
                let cand = order.order().to_vec();
                let peak = eval.eval(g, &cand, p.budget).peak;
                if best.as_ref().map_or(true, |(bp, _)| peak < *bp) {
                    best = Some((peak, cand));
                }
            }
            best.unwrap().1
        }
    };
    let mut counts = vec![0u32; n];
    for &v in &seq {
        counts[v] += 1;
    }
    let mut score = eval.eval(g, &seq, p.budget);

    // ---- phase one: drive the overload to zero ------------------------------
    let phase1_start = Instant::now();
    let mut rounds = 0u64;
    let mut min_peak = score.peak;
    if score.overload > 0 {
        let mut stall = 0u64;
        while score.overload > 0 && stall < PHASE1_STALL {
            rounds += 1;
            if rounds & 0x1f == 0 && Instant::now() >= ctx.deadline {
                break;
            }
            // Sweep from the first overloaded position; once that stalls
            // (possible in staged mode, where an insertion can land before
            // the focus and free nothing there), probe random overloaded
            // positions instead.
            let focus = if stall == 0 {
                None
            } else {
                eval.eval(g, &seq, p.budget);
                eval.random_overloaded(seq.len(), p.budget, &mut rng)
            };
            match try_split(p, g, &mut eval, &seq, &counts, focus) {
                Some((next, node, next_score)) => {
                    seq = next;
                    counts[node] += 1;
                    score = next_score;
                    min_peak = min_peak.min(score.peak);
                    stall = 0;
                }
                None => stall += 1,
            }
        }
        score = eval.eval(g, &seq, p.budget);
        min_peak = min_peak.min(score.peak);
    }
    let phase1_seconds = phase1_start.elapsed().as_secs_f64();
    if score.overload > 0 {
        return LnsStats { rounds, phase1_seconds, min_peak };
    }
    offer(ctx, p, &seq, score.duration);

    // ---- phase two: shed and re-place recomputations -----------------------
    if remove_pass(p, g, &mut eval, &mut seq, &mut counts, &mut score) {
        offer(ctx, p, &seq, score.duration);
    }
    let mut stall = 0u64;
    let mut scratch = Vec::new();
    while rounds < params.max_rounds && score.duration > base_duration {
        if let Some(limit) = params.stall_rounds {
            if stall >= limit {
                break;
            }
        }
        rounds += 1;
        if rounds & 0x1f == 0 && Instant::now() >= ctx.deadline {
            break;
        }
        let len = seq.len();
        let window = (len / 8).max(4).min(len);
        let at = if len > window {
            rng.gen_range(0..=len - window)
        } else {
            0
        };
        scratch.clear();
        let mut removed = 0u64;
        {
            let mut seen = vec![0u32; n];
            for (k, &v) in seq.iter().enumerate() {
                if k >= at && k < at + window && seen[v] > 0 {
                    removed += 1;
                } else {
                    scratch.push(v);
                }
                seen[v] += 1;
            }
        }
        if removed == 0 {
            stall += 1;
            continue;
        }
        let mut work = std::mem::take(&mut scratch);
        let mut wcounts = vec![0u32; n];
        for &v in &work {
            wcounts[v] += 1;
        }
        let mut wscore = eval.eval(g, &work, p.budget);
        if wscore.overload > 0 {
            for _ in 0..removed + 2 {
                match try_split(p, g, &mut eval, &work, &wcounts, None) {
                    Some((next, node, next_score)) => {
                        work = next;
                        wcounts[node] += 1;
                        wscore = next_score;
                        if wscore.overload == 0 {
                            break;
                        }
                    }
                    None => break,
                }
            }
        }
        if wscore.overload == 0 && wscore.duration < score.duration {
            seq = work;
            counts = wcounts;
            score = wscore;
            offer(ctx, p, &seq, score.duration);
            remove_pass(p, g, &mut eval, &mut seq, &mut counts, &mut score);
            offer(ctx, p, &seq, score.duration);
            stall = 0;
        } else {
            scratch = work;
            stall += 1;
        }
    }

    LnsStats { rounds, phase1_seconds, min_peak }
}

/// Hands a sequence to the shared context when it beats the incumbent.
fn offer(ctx: &mut SearchContext, p: &RematProblem, seq: &[NodeId], duration: u64) {
    if ctx.best_duration.map_or(true, |b| duration < b) {
        let sol = sequence_solution(p, seq).expect("search sequences stay representable");
        ctx.offer(sol, duration);
    }
}

// ---------------------------------------------------------------------------
// Sequence evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct SeqScore {
    peak: u64,
    duration: u64,
    /// Summed excess over the budget across all positions.
    overload: u64,
    /// First position whose load exceeds the budget, if any.
    first_over: Option<usize>,
}

/// Reusable buffers for scoring a sequence.
struct SeqEval {
    /// Per node: position of its latest occurrence so far, plus one.
    last: Vec<usize>,
    /// Per position: last position whose computation reads this tensor.
    retained: Vec<usize>,
    /// Per position: memory load while that computation runs.
    levels: Vec<i64>,
}

impl SeqEval {
    fn new(nodes: usize) -> SeqEval {
        SeqEval {
            last: vec![0; nodes],
            retained: Vec::new(),
            levels: Vec::new(),
        }
    }

    fn eval(&mut self, g: &ComputeGraph, seq: &[NodeId], budget: u64) -> SeqScore {
        let len = seq.len();
        self.last.iter_mut().for_each(|p| *p = 0);
        self.retained.clear();
        self.retained.resize(len, 0);
        let mut duration = 0u64;
        for (k, &v) in seq.iter().enumerate() {
            for &u in g.preds(v) {
                let at = self.last[u];
                debug_assert!(at > 0, "sequence computes a node before its input");
                self.retained[at - 1] = k;
            }
            self.retained[k] = k;
            self.last[v] = k + 1;
            duration += g.duration(v);
        }
        let mut diff = std::mem::take(&mut self.levels);
        diff.clear();
        diff.resize(len + 1, 0);
        for (k, &v) in seq.iter().enumerate() {
            diff[k] += g.out_size(v) as i64;
            diff[self.retained[k] + 1] -= g.out_size(v) as i64;
        }
        let cap = budget.min(i64::MAX as u64) as i64;
        let mut level = 0i64;
        let mut peak = 0i64;
        let mut overload = 0u64;
        let mut first_over = None;
        for k in 0..len {
            level += diff[k];
            diff[k] = level;
            peak = peak.max(level);
            if level > cap {
                overload += (level - cap) as u64;
                if first_over.is_none() {
                    first_over = Some(k);
                }
            }
        }
        diff.truncate(len);
        self.levels = diff;
        SeqScore {
            peak: peak as u64,
            duration,
            overload,
            first_over,
        }
    }

    /// A uniformly chosen over-budget position, drawn from the buffers the
    /// latest `eval` left behind.
    fn random_overloaded(&self, len: usize, budget: u64, rng: &mut ChaCha8Rng) -> Option<usize> {
        let cap = budget.min(i64::MAX as u64) as i64;
        let mut seen = 0u64;
        let mut choice = None;
        for k in 0..len {
            if self.levels[k] > cap {
                seen += 1;
                if rng.gen_range(0..seen) == 0 {
                    choice = Some(k);
                }
            }
        }
        choice
    }
}

// ---------------------------------------------------------------------------
// Moves
// ---------------------------------------------------------------------------

/// Splits one retention span that crosses `focus` (default: the first
/// overloaded position): recomputes its node right before the span's next
/// consumer, which frees the span across the focus. The catch is that the
/// new computation reads the node's inputs, so any input tensor whose
/// retention currently ends before the focus gets revived across it; the
/// net load change at the focus is the freed size minus those revivals,
/// and only strictly negative candidates are viable. Of the best few by
/// that measure, the evaluated insertion with the least remaining overload
/// wins. Returns the new sequence, the recomputed node, and the new score.
fn try_split(
    p: &RematProblem,
    g: &ComputeGraph,
    eval: &mut SeqEval,
    seq: &[NodeId],
    counts: &[u32],
    focus: Option<usize>,
) -> Option<(Vec<NodeId>, NodeId, SeqScore)> {
    let score = eval.eval(g, seq, p.budget);
    let t = focus.or(score.first_over)?;
    let focus_level = eval.levels[t];
    let retained = eval.retained.clone();
    let n = g.node_count();

    // Occurrence positions per node, ascending.
    let mut occs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &v) in seq.iter().enumerate() {
        occs[v].push(k);
    }

    // The copy of each node whose retention crosses the focus. Inputs of
    // the focus computation are pinned there and cannot be freed.
    let pinned = g.preds(seq[t]);
    let mut crossing: Vec<Option<usize>> = vec![None; n];
    let mut nodes: Vec<NodeId> = Vec::new();
    for pos in 0..t {
        let u = seq[pos];
        if retained[pos] > t && !pinned.contains(&u) && counts[u] < p.remat_caps[u] {
            crossing[u] = Some(pos);
            nodes.push(u);
        }
    }
    if nodes.is_empty() {
        return None;
    }

    // First read after the focus of each crossing copy, in one sweep.
    let mut consumer: Vec<Option<usize>> = vec![None; n];
    for (k, &v) in seq.iter().enumerate().skip(t + 1) {
        for &u in g.preds(v) {
            if crossing[u].is_some() && consumer[u].is_none() {
                consumer[u] = Some(k);
            }
        }
    }

    let mut cands: Vec<(i64, u64, usize)> = Vec::new();
    for &u in &nodes {
        let c = consumer[u].expect("a span retained past the focus has a later consumer");
        let mut delta = -(g.out_size(u) as i64);
        for &q in g.preds(u) {
            let before_c = occs[q].partition_point(|&o| o < c);
            if retained[occs[q][before_c - 1]] < t {
                delta += g.out_size(q) as i64;
            }
        }
        if delta < 0 {
            cands.push((delta, g.duration(u), crossing[u].unwrap()));
        }
    }
    // Largest net load reduction first; cheaper recomputation breaks ties.
    cands.sort_unstable();

    let mut best: Option<(Vec<NodeId>, NodeId, SeqScore)> = None;
    for &(_, _, pos) in cands.iter().take(SPLIT_CANDIDATES) {
        let u = seq[pos];
        let c = consumer[u].expect("viable candidates found their consumer");
        let Some(idx) = insertion_index(p, seq, u, pos, c) else {
            continue;
        };
        let mut cand = Vec::with_capacity(seq.len() + 1);
        cand.extend_from_slice(&seq[..idx]);
        cand.push(u);
        cand.extend_from_slice(&seq[idx..]);
        let cand_score = eval.eval(g, &cand, p.budget);
        // The insertion shifts positions at and after `idx` up by one.
        let aligned = if idx <= t { t + 1 } else { t };
        if eval.levels[aligned] < focus_level
            && best
                .as_ref()
                .map_or(true, |(_, _, bs)| cand_score.overload < bs.overload)
        {
            best = Some((cand, u, cand_score));
        }
    }
    best
}

/// Greedily drops repeat computations whose removal keeps the sequence
/// within budget, heaviest first. Returns whether anything was removed.
fn remove_pass(
    p: &RematProblem,
    g: &ComputeGraph,
    eval: &mut SeqEval,
    seq: &mut Vec<NodeId>,
    counts: &mut [u32],
    score: &mut SeqScore,
) -> bool {
    let mut changed = false;
    loop {
        let mut seen = vec![false; g.node_count()];
        let mut cands: Vec<(u64, usize)> = Vec::new();
        for (k, &v) in seq.iter().enumerate() {
            if seen[v] {
                cands.push((g.duration(v), k));
            } else {
                seen[v] = true;
            }
        }
        cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut committed = false;
        for (_, k) in cands {
            let node = seq[k];
            let mut cand = seq.clone();
            cand.remove(k);
            let cand_score = eval.eval(g, &cand, p.budget);
            if cand_score.overload == 0 {
                counts[node] -= 1;
                *seq = cand;
                *score = cand_score;
                committed = true;
                changed = true;
                break;
            }
        }
        if !committed {
            return changed;
        }
    }
}

// ---------------------------------------------------------------------------
// Mode-aware insertion
// ---------------------------------------------------------------------------

/// Stage structure of a staged sequence: `begin[s - 1]` is the position
/// where stage `s` starts, and each stage ends with a first occurrence.
struct StageView {
    stage_of: Vec<usize>,
    begin: Vec<usize>,
}

fn stage_view(order: &TopoOrder, seq: &[NodeId]) -> StageView {
    let mut stage_of = Vec::with_capacity(seq.len());
    let mut begin = vec![0];
    let mut seen = vec![false; order.len()];
    let mut stage = 1;
    for (k, &v) in seq.iter().enumerate() {
        stage_of.push(stage);
        if !seen[v] {
            seen[v] = true;
            stage += 1;
            begin.push(k + 1);
        }
    }
    StageView { stage_of, begin }
}

/// Position at which a recomputation of `u` can be inserted strictly after
/// `prev` (its previous occurrence) and no later than `before` (its next
/// consumer), keeping the sequence representable. Free-order sequences
/// insert directly before the consumer; staged sequences walk candidate
/// stages from the consumer's backwards and place `u` at its slot in the
/// stage prefix.
fn insertion_index(
    p: &RematProblem,
    seq: &[NodeId],
    u: NodeId,
    prev: usize,
    before: usize,
) -> Option<usize> {
    match &p.mode {
        ScheduleMode::Unstaged => Some(before),
        ScheduleMode::Staged(order) => {
            let view = stage_view(order, seq);
            let slot = order.position(u);
            let lo_stage = (view.stage_of[prev] + 1).max(slot + 1);
            let hi_stage = view.stage_of[before].min(order.len());
            for stage in (lo_stage..=hi_stage).rev() {
                let begin = view.begin[stage - 1];
                let close = view.begin[stage] - 1;
                let mut idx = begin;
                let mut duplicate = false;
                for k in begin..close {
                    let here = order.position(seq[k]);
                    if here == slot {
                        duplicate = true;
                        break;
                    }
                    if here < slot {
                        idx = k + 1;
                    }
                }
                if !duplicate && idx <= before && idx > prev {
                    return Some(idx);
                }
            }
            None
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::super::SearchContext;
    use super::*;
    use crate::evaluator::simulate;
    use crate::generator::{random_layered, LayeredSpec};
    use crate::graph::no_remat_peak_memory;
    use crate::test_fixtures::fig_graph;
    use std::time::Duration;

    fn context(p: &RematProblem) -> SearchContext<'_> {
        let started = Instant::now();
        SearchContext::new(p, started, started + Duration::from_secs(30))
    }

    fn params(seed: u64) -> LnsParams {
        LnsParams {
            seed,
            max_rounds: 400,
            stall_rounds: Some(100),
            warm_orders: 4,
        }
    }

    #[test]
    fn sequence_scores_match_the_simulator() {
        let g = fig_graph();
        let mut eval = SeqEval::new(4);
        for seq in [vec![0, 1, 2, 3], vec![0, 1, 2, 0, 3]] {
            let score = eval.eval(&g, &seq, u64::MAX);
            let sim = simulate(&g, &seq, &[4; 4]).unwrap();
            assert_eq!(score.peak, sim.peak_memory);
            assert_eq!(score.duration, sim.total_duration);
            assert_eq!(score.overload, 0);
        }
        let score = eval.eval(&g, &[0, 1, 2, 3], 2);
        assert_eq!(score.first_over, Some(2), "the load first tops 2 there");
        assert_eq!(score.overload, 2, "level 3 exceeds budget 2 at two events");
        assert_eq!(eval.levels, vec![1, 2, 3, 3]);
    }

    #[test]
    fn splits_the_known_retention_span() {
        let g = ComputeGraph::new(
            vec![1; 4],
            vec![1, 2, 2, 1],
            vec![(0, 1), (1, 2), (2, 3), (0, 3)],
        )
        .unwrap();
        let p = RematProblem::new(g, 4);
        let mut ctx = context(&p);
        let stats = run_lns(&p, &mut ctx, &params(3));
        assert!(stats.min_peak <= 4);
        assert_eq!(ctx.best_duration, Some(5));
    }

    #[test]
    fn staged_insertion_respects_stage_structure() {
        let g = fig_graph();
        let order = crate::graph::random_topological_order(&g, 0);
        let seq = order.order().to_vec();
        // Recompute node 0 before its consumer at position 3.
        let idx = insertion_index(
            &RematProblem::new(g.clone(), 3).staged(order.clone()),
            &seq,
            0,
            0,
            3,
        )
        .unwrap();
        assert!(idx > 0 && idx <= 3);
        let mut next = seq.clone();
        next.insert(idx, 0);
        assert!(crate::evaluator::staged_events(&order, &next).is_ok());
    }

    #[test]
    fn staged_search_stays_representable() {
        let spec = LayeredSpec {
            layers: 6,
            width_min: 2,
            width_max: 3,
            seed: 11,
            ..LayeredSpec::default()
        };
        let g = random_layered(&spec).unwrap();
        let order = crate::graph::random_topological_order(&g, 11);
        let peak = no_remat_peak_memory(&g, &order);
        let budget = (peak - 1).max(1);
        let p = RematProblem::new(g, budget).staged(order);
        let mut ctx = context(&p);
        run_lns(&p, &mut ctx, &params(11));
        if let Some(best) = &ctx.best_solution {
            assert!(best.peak_memory(&p.graph) <= p.budget);
        }
    }

    #[test]
    fn identical_seeds_give_identical_searches() {
        let spec = LayeredSpec {
            layers: 8,
            width_min: 2,
            width_max: 3,
            seed: 5,
            ..LayeredSpec::default()
        };
        let g = random_layered(&spec).unwrap();
        let order = crate::graph::random_topological_order(&g, 5);
        let peak = no_remat_peak_memory(&g, &order);
        let budget = (peak * 9 / 10).max(1);
        let p = RematProblem::new(g, budget);
        let mut first = context(&p);
        let mut second = context(&p);
        let a = run_lns(&p, &mut first, &params(9));
        let b = run_lns(&p, &mut second, &params(9));
        assert_eq!(first.best_duration, second.best_duration);
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.min_peak, b.min_peak);
    }
}
