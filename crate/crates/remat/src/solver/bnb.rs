//! Exact depth-first branch-and-bound over the interval variables.
//!
//! The search first decides activity flags (off before on, so cheap
//! schedules are reached early), then fixes start events smallest-domain
//! first. End events are never branched on: once every start is fixed, each
//! retained interval is extended exactly far enough to cover the last
//! consumer it serves, which is the pointwise smallest feasible choice of
//! ends. A completed search therefore proves optimality or infeasibility.

use std::time::Instant;

use crate::model::{Event, ModelInstance};

use super::domain::{Activity, Domain, MAX_EVENTS};
use super::propagate::{propagate, SearchState};
use super::solution::IntervalSolution;
use super::SearchContext;

pub(crate) struct BnbResult {
    /// Whether the search space was exhausted before the deadline.
    pub complete: bool,
    pub nodes: u64,
}

pub(crate) fn run_bnb<'p>(m: &ModelInstance<'p>, ctx: &mut SearchContext<'p>) -> BnbResult {
    debug_assert!(m.domain.size() <= MAX_EVENTS);
    let mut search = Bnb {
        m,
        ctx,
        nodes: 0,
        time_up: false,
        base_duration: 0,
    };
    search.base_duration = m.problem.graph.total_duration();
    if let Some(root) = SearchState::from_model(m) {
        // Staged event lines are already anchored by the fixed first
        // copies; free-order lines get compacted once activities are known.
        search.dfs(root, m.domain.is_staged());
    }
    BnbResult {
        complete: !search.time_up,
        nodes: search.nodes,
    }
}

struct Bnb<'m, 'c, 'p> {
    m: &'m ModelInstance<'p>,
    ctx: &'c mut SearchContext<'p>,
    nodes: u64,
    time_up: bool,
    base_duration: u64,
}

impl Bnb<'_, '_, '_> {
    fn dfs(&mut self, mut state: SearchState, compacted: bool) {
        if self.time_up {
            return;
        }
        self.nodes += 1;
        if self.nodes & 0x3ff == 0 && Instant::now() >= self.ctx.deadline {
            self.time_up = true;
            return;
        }
        if !propagate(&mut state, self.m) {
            return;
        }
        if let Some(best) = self.ctx.best_duration {
            if self.duration_bound(&state) >= best {
                return;
            }
        }
        if let Some(i) = state.active.iter().position(|&a| a == Activity::Open) {
            let mut off = state.clone();
            off.active[i] = Activity::No;
            self.dfs(off, compacted);
            if self.time_up {
                return;
            }
            state.active[i] = Activity::Yes;
            self.dfs(state, compacted);
            return;
        }
        if !compacted {
            // With activities settled, some optimal schedule uses only the
            // first K events: the memory load peaks at start events, and
            // remapping the K distinct starts onto 1..=K in order preserves
            // every covering set. Shrinking the event line here cuts the
            // branching space roughly in half.
            let k = state
                .active
                .iter()
                .filter(|&&a| a == Activity::Yes)
                .count();
            for i in 0..state.active.len() {
                if state.active[i] == Activity::Yes {
                    state.start[i].retain_le(k);
                    state.end[i].retain_le(k);
                }
            }
            self.dfs(state, true);
            return;
        }
        let mut pick: Option<(usize, u32)> = None;
        for i in 0..state.active.len() {
            if state.active[i] != Activity::Yes {
                continue;
            }
            let len = state.start[i].len();
            if len > 1 && pick.map_or(true, |(_, best)| len < best) {
                pick = Some((i, len));
            }
        }
        match pick {
            Some((i, _)) => {
                for e in state.start[i].iter() {
                    let mut child = state.clone();
                    child.start[i] = Domain::singleton(e);
                    self.dfs(child, true);
                    if self.time_up {
                        return;
                    }
                }
            }
            None => self.complete_leaf(&state),
        }
    }

    /// Total duration implied by the activity flags decided so far; open
    /// flags are optimistically counted as off.
    fn duration_bound(&self, state: &SearchState) -> u64 {
        let mut bound = self.base_duration;
        for (i, iv) in self.m.intervals.iter().enumerate() {
            if iv.copy > 0 && state.active[i] == Activity::Yes {
                bound += iv.weight;
            }
        }
        bound
    }

    /// All starts fixed: derive minimal ends, check memory, and offer the
    /// schedule as an incumbent.
    fn complete_leaf(&mut self, state: &SearchState) {
        let g = &self.m.problem.graph;
        let count = self.m.intervals.len();
        let mut starts: Vec<Option<Event>> = vec![None; count];
        for i in 0..count {
            if state.active[i] == Activity::Yes {
                starts[i] = Some(state.start[i].lo());
            }
        }
        let mut ends: Vec<Event> = (0..count).map(|i| starts[i].unwrap_or(1)).collect();
        for &(u, v) in g.edges() {
            for ci in self.m.node_intervals[v].clone() {
                let Some(t) = starts[ci] else { continue };
                let mut provider: Option<usize> = None;
                for uj in self.m.node_intervals[u].clone() {
                    if let Some(s) = starts[uj] {
                        if s < t && provider.map_or(true, |p| starts[p].unwrap() < s) {
                            provider = Some(uj);
                        }
                    }
                }
                let Some(uj) = provider else { return };
                ends[uj] = ends[uj].max(t);
            }
        }
        let mut sol = IntervalSolution::new(&self.m.problem.remat_caps);
        for (i, iv) in self.m.intervals.iter().enumerate() {
            if let Some(s) = starts[i] {
                sol.set(iv.node, iv.copy, s, ends[i], true);
            }
        }
        if sol.peak_memory(g) > self.m.capacity.unwrap_or(u64::MAX) {
            return;
        }
        let duration = sol.total_duration(g);
        self.ctx.offer(sol, duration);
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::super::SearchContext;
    use super::*;
    use crate::evaluator::brute_force_optimal;
    use crate::generator::chain;
    use crate::graph::random_topological_order;
    use crate::model::{build_model, RematProblem, ScheduleMode};
    use crate::test_fixtures::fig_graph;
    use std::time::Duration;

    fn search(p: &RematProblem) -> (Option<u64>, bool) {
        let m = build_model(p).unwrap();
        let started = Instant::now();
        let mut ctx = SearchContext::new(p, started, started + Duration::from_secs(60));
        let result = run_bnb(&m, &mut ctx);
        (ctx.best_duration, result.complete)
    }

    #[test]
    fn finds_the_known_optimum_without_rematerialization() {
        let p = RematProblem::new(fig_graph(), 3);
        let (best, complete) = search(&p);
        assert!(complete);
        assert_eq!(best, Some(4));
    }

    #[test]
    fn proves_infeasibility_below_the_memory_floor() {
        let p = RematProblem::new(fig_graph(), 2);
        let (best, complete) = search(&p);
        assert!(complete);
        assert_eq!(best, None);
    }

    #[test]
    fn rematerializes_when_sizes_make_it_worthwhile() {
        let g = crate::graph::ComputeGraph::new(
            vec![1; 4],
            vec![1, 2, 2, 1],
            vec![(0, 1), (1, 2), (2, 3), (0, 3)],
        )
        .unwrap();
        let p = RematProblem::new(g, 4);
        let (best, complete) = search(&p);
        assert!(complete);
        assert_eq!(best, Some(5));
    }

    #[test]
    fn staged_search_matches_the_staged_oracle() {
        let g = fig_graph();
        let order = random_topological_order(&g, 7);
        for budget in 2..=4 {
            let mut p = RematProblem::new(g.clone(), budget);
            p.mode = ScheduleMode::Staged(order.clone());
            let (best, complete) = search(&p);
            assert!(complete);
            let oracle = brute_force_optimal(&p).unwrap();
            assert_eq!(best, oracle.map(|o| o.duration), "budget {budget}");
        }
    }

    #[test]
    fn chain_needs_no_rematerialization_at_its_floor() {
        let g = chain(5);
        let p = RematProblem::new(g, 2);
        let (best, complete) = search(&p);
        assert!(complete);
        assert_eq!(best, Some(5));
    }

    #[test]
    fn agrees_with_the_oracle_on_small_graphs() {
        for (gi, g) in crate::generator::enumerate_small_dags(3)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            let floor = crate::solver::structural_memory_floor(&g);
            for budget in floor.saturating_sub(1)..=g.total_size() {
                let p = RematProblem::new(g.clone(), budget);
                let oracle = brute_force_optimal(&p).unwrap();
                let (best, complete) = search(&p);
                assert!(complete, "graph {gi} budget {budget}");
                assert_eq!(
                    best,
                    oracle.map(|o| o.duration),
                    "graph {gi} budget {budget}"
                );
            }
        }
    }
}
