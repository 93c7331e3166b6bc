//! Constraint propagation over bitset domains for the exact search.
//!
//! Each propagator removes start or end candidates that cannot appear in
//! any solution extending the current search node, or forces activity flags
//! that are implied. Detected dead ends report failure. The propagators
//! mirror the constraints of the formulation; the independent validator in
//! the evaluator module re-checks final schedules without any of this code.

use crate::model::ModelInstance;

use super::domain::{mask_ge, mask_le, Activity, Domain};

/// One search node: per-interval start and end candidate sets plus
/// three-valued activity flags, indexed like `ModelInstance::intervals`.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub start: Vec<Domain>,
    pub end: Vec<Domain>,
    pub active: Vec<Activity>,
}

impl SearchState {
    /// Root state from a model. Returns `None` when a mandatory interval
    /// has no placement at all.
    pub fn from_model(m: &ModelInstance) -> Option<SearchState> {
        let d = m.domain.size();
        let mut state = SearchState {
            start: Vec::with_capacity(m.intervals.len()),
            end: Vec::with_capacity(m.intervals.len()),
            active: Vec::with_capacity(m.intervals.len()),
        };
        for iv in &m.intervals {
            let mut bits = Domain::empty();
            for e in iv.start_domain.events(&m.domain) {
                bits.insert(e);
            }
            state.start.push(bits);
            state.end.push(Domain::range(1, d));
            if iv.always_active {
                if bits.is_empty() {
                    return None;
                }
                state.active.push(Activity::Yes);
            } else if bits.is_empty() {
                state.active.push(Activity::No);
            } else {
                state.active.push(Activity::Open);
            }
        }
        Some(state)
    }
}

/// Runs all propagators to a fixpoint. Returns `false` when the search node
/// is proven infeasible.
pub fn propagate(state: &mut SearchState, m: &ModelInstance) -> bool {
    let capacity = m.capacity.expect("the search requires a hard memory capacity");
    loop {
        let mut changed = false;
        if !basic(state, m, &mut changed) {
            return false;
        }
        if !chain(state, m, &mut changed) {
            return false;
        }
        if !distinct_starts(state, m, &mut changed) {
            return false;
        }
        if !reservoir(state, m, &mut changed) {
            return false;
        }
        if !cumulative(state, m, capacity, &mut changed) {
            return false;
        }
        if !changed {
            return true;
        }
    }
}

/// Turns interval `i` off, or fails when it must stay active.
fn drop_interval(state: &mut SearchState, m: &ModelInstance, i: usize, changed: &mut bool) -> bool {
    match state.active[i] {
        Activity::Yes => false,
        Activity::No => true,
        Activity::Open => {
            if m.intervals[i].always_active {
                false
            } else {
                state.active[i] = Activity::No;
                *changed = true;
                true
            }
        }
    }
}

/// Interval sanity (`start <= end`, nonempty domains) and the activity
/// prefix rule: copy `i + 1` of a node can only be active when copy `i`
/// is. Copies are interchangeable up to relabeling (later copies have equal
/// or narrower placement domains), so restricting search to active
/// prefixes loses no solutions.
fn basic(state: &mut SearchState, m: &ModelInstance, changed: &mut bool) -> bool {
    for i in 0..m.intervals.len() {
        if state.active[i] == Activity::No {
            continue;
        }
        if state.start[i].is_empty() || state.end[i].is_empty() {
            if !drop_interval(state, m, i, changed) {
                return false;
            }
            continue;
        }
        if state.end[i].retain_ge(state.start[i].lo()) {
            *changed = true;
        }
        if state.start[i].retain_le(state.end[i].hi()) {
            *changed = true;
        }
        if state.start[i].is_empty() || state.end[i].is_empty() {
            if !drop_interval(state, m, i, changed) {
                return false;
            }
        }
    }
    for r in &m.node_intervals {
        for i in r.start + 1..r.end {
            match (state.active[i - 1], state.active[i]) {
                (Activity::No, Activity::Yes) => return false,
                (Activity::No, Activity::Open) => {
                    state.active[i] = Activity::No;
                    *changed = true;
                }
                (Activity::Open, Activity::Yes) => {
                    state.active[i - 1] = Activity::Yes;
                    *changed = true;
                }
                _ => {}
            }
        }
    }
    true
}

/// Ordering between consecutive active copies of one node:
/// `end(i) <= start(i + 1)`.
fn chain(state: &mut SearchState, m: &ModelInstance, changed: &mut bool) -> bool {
    for r in &m.node_intervals {
        for b in r.start + 1..r.end {
            let a = b - 1;
            if state.active[a] != Activity::Yes || state.active[b] != Activity::Yes {
                continue;
            }
            if state.start[b].retain_ge(state.end[a].lo()) {
                *changed = true;
            }
            if state.start[b].is_empty() {
                return false;
            }
            if state.end[a].retain_le(state.start[b].hi()) {
                *changed = true;
            }
            if state.end[a].is_empty() {
                return false;
            }
        }
    }
    true
}

/// Active starts are pairwise distinct: eliminates values fixed by active
/// intervals from every other start domain and applies a pigeonhole count.
fn distinct_starts(state: &mut SearchState, m: &ModelInstance, changed: &mut bool) -> bool {
    let count = m.intervals.len();
    let mut fixed_bits = 0u64;
    for i in 0..count {
        if state.active[i] != Activity::Yes {
            continue;
        }
        if let Some(e) = state.start[i].as_singleton() {
            let bit = 1u64 << (e - 1);
            if fixed_bits & bit != 0 {
                return false;
            }
            fixed_bits |= bit;
        }
    }
    if fixed_bits != 0 {
        for i in 0..count {
            if state.active[i] == Activity::No {
                continue;
            }
            if state.active[i] == Activity::Yes && state.start[i].as_singleton().is_some() {
                continue;
            }
            if state.start[i].intersect(!fixed_bits) {
                *changed = true;
                if state.start[i].is_empty() && !drop_interval(state, m, i, changed) {
                    return false;
                }
            }
        }
    }
    let mut union_bits = 0u64;
    let mut active_count = 0u32;
    for i in 0..count {
        if state.active[i] == Activity::Yes {
            union_bits |= state.start[i].bits();
            active_count += 1;
        }
    }
    if union_bits.count_ones() < active_count {
        return false;
    }
    true
}

/// Precedence via provider windows: an active consumer copy of edge
/// `u -> v` can only start at events some copy of `u` could cover, i.e.
/// within `(min start(u, j), max end(u, j)]` for a not-disabled copy `j`.
/// A consumer fixed at `t` with a single candidate provider forces that
/// provider active, computed before `t`, and held through `t`.
fn reservoir(state: &mut SearchState, m: &ModelInstance, changed: &mut bool) -> bool {
    for group in &m.reservoir {
        let (u, v) = group.edge;
        let providers = m.node_intervals[u].clone();
        for copy in 0..group.per_copy.len() {
            let ci = m.interval_index(v, copy);
            if state.active[ci] == Activity::No {
                continue;
            }
            let mut union_bits = 0u64;
            for j in providers.clone() {
                if state.active[j] == Activity::No
                    || state.start[j].is_empty()
                    || state.end[j].is_empty()
                {
                    continue;
                }
                union_bits |= mask_ge(state.start[j].lo() + 1) & mask_le(state.end[j].hi());
            }
            if state.start[ci].intersect(union_bits) {
                *changed = true;
            }
            if state.start[ci].is_empty() {
                if !drop_interval(state, m, ci, changed) {
                    return false;
                }
                continue;
            }
            if state.active[ci] != Activity::Yes {
                continue;
            }
            let Some(t) = state.start[ci].as_singleton() else { continue };
            let mut sole = None;
            let mut viable = 0;
            for j in providers.clone() {
                if state.active[j] == Activity::No
                    || state.start[j].is_empty()
                    || state.end[j].is_empty()
                {
                    continue;
                }
                if state.start[j].lo() < t && state.end[j].hi() >= t {
                    viable += 1;
                    sole = Some(j);
                }
            }
            match (viable, sole) {
                (0, _) => return false,
                (1, Some(j)) => {
                    if state.active[j] == Activity::Open {
                        state.active[j] = Activity::Yes;
                        *changed = true;
                    }
                    if state.start[j].retain_le(t - 1) {
                        *changed = true;
                    }
                    if state.end[j].retain_ge(t) {
                        *changed = true;
                    }
                    if state.start[j].is_empty() || state.end[j].is_empty() {
                        return false;
                    }
                }
                _ => {}
            }
        }
    }
    true
}

/// Memory propagation: the compulsory parts of active intervals build a
/// load profile; overload fails, and placements that would overload an
/// event are pruned from start and end domains.
fn cumulative(
    state: &mut SearchState,
    m: &ModelInstance,
    capacity: u64,
    changed: &mut bool,
) -> bool {
    let d = m.domain.size();
    let mut profile = [0u64; 64];
    for (i, iv) in m.intervals.iter().enumerate() {
        if state.active[i] != Activity::Yes || iv.size == 0 {
            continue;
        }
        if state.start[i].is_empty() || state.end[i].is_empty() {
            return false;
        }
        let lst = state.start[i].hi();
        let ect = state.end[i].lo();
        for t in lst..=ect.min(d) {
            profile[t - 1] += iv.size;
        }
    }
    if profile[..d].iter().any(|&load| load > capacity) {
        return false;
    }
    for (i, iv) in m.intervals.iter().enumerate() {
        if state.active[i] == Activity::No || iv.size == 0 {
            continue;
        }
        let (own_lo, own_hi) = if state.active[i] == Activity::Yes {
            let lst = state.start[i].hi();
            let ect = state.end[i].lo();
            if lst <= ect {
                (lst, ect)
            } else {
                (1, 0)
            }
        } else {
            (1, 0)
        };
        for bound in [true, false] {
            let snapshot = if bound { state.start[i] } else { state.end[i] };
            for t in snapshot.iter() {
                let own = if t >= own_lo && t <= own_hi { iv.size } else { 0 };
                if profile[t - 1] - own + iv.size > capacity {
                    let dom = if bound { &mut state.start[i] } else { &mut state.end[i] };
                    dom.remove(t);
                    *changed = true;
                }
            }
        }
        if state.start[i].is_empty() || state.end[i].is_empty() {
            if !drop_interval(state, m, i, changed) {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::chain;
    use crate::graph::{random_topological_order, ComputeGraph};
    use crate::model::{build_model, RematProblem, ScheduleMode};
    use crate::test_fixtures::fig_graph;

    #[test]
    fn chain_of_two_is_solved_by_propagation_alone() {
        let g = chain(2);
        let p = RematProblem::new(g, 2).with_uniform_cap(1);
        let m = build_model(&p).unwrap();
        let mut state = SearchState::from_model(&m).unwrap();
        assert!(propagate(&mut state, &m));
        assert_eq!(state.start[0].as_singleton(), Some(1));
        assert_eq!(state.start[1].as_singleton(), Some(2));
        assert_eq!(state.end[0].as_singleton(), Some(2));
    }

    #[test]
    fn saturated_events_are_pruned_from_start_domains() {
        // Two unrelated nodes; node 0 occupies events 3..=4 compulsorily,
        // which saturates a budget of 2, so node 1 loses those start
        // events: {3, 4, 6} shrinks into {6}.
        let g = ComputeGraph::new(vec![1, 1], vec![2, 1], vec![]).unwrap();
        let mut p = RematProblem::new(g, 2);
        p.remat_caps = vec![3, 3];
        let m = build_model(&p).unwrap();
        let mut state = SearchState::from_model(&m).unwrap();
        let a = m.interval_index(0, 0);
        let b = m.interval_index(1, 0);
        state.start[a] = Domain::singleton(3);
        state.end[a] = Domain::range(4, 5);
        state.start[b] = events(&[3, 4, 6]);
        assert!(propagate(&mut state, &m));
        assert_eq!(state.start[b].iter().collect::<Vec<_>>(), vec![6]);
    }

    #[test]
    fn consumer_with_a_single_provider_forces_it() {
        let g = fig_graph();
        let p = RematProblem::new(g, 3).with_uniform_cap(1);
        let m = build_model(&p).unwrap();
        let mut state = SearchState::from_model(&m).unwrap();
        // Pin the final consumer; its providers must wrap around it.
        state.start[3] = Domain::singleton(4);
        assert!(propagate(&mut state, &m));
        // Node 2 must be computed before event 4 and held through it.
        assert!(state.start[2].hi() <= 3);
        assert!(state.end[2].lo() >= 4);
        assert!(state.end[0].lo() >= 4);
    }

    #[test]
    fn activity_prefix_rule_propagates_both_ways() {
        let g = ComputeGraph::new(vec![1], vec![1], vec![]).unwrap();
        let mut p = RematProblem::new(g, 5);
        p.remat_caps = vec![3];
        let m = build_model(&p).unwrap();
        let mut state = SearchState::from_model(&m).unwrap();
        state.active[2] = Activity::Yes;
        assert!(propagate(&mut state, &m));
        assert_eq!(state.active[1], Activity::Yes);

        let mut state = SearchState::from_model(&m).unwrap();
        state.active[1] = Activity::No;
        assert!(propagate(&mut state, &m));
        assert_eq!(state.active[2], Activity::No);
    }

    #[test]
    fn pigeonhole_on_start_events_fails_early() {
        let g = ComputeGraph::new(vec![1; 3], vec![1; 3], vec![]).unwrap();
        let p = RematProblem::new(g, 10).with_uniform_cap(1);
        let m = build_model(&p).unwrap();
        let mut state = SearchState::from_model(&m).unwrap();
        for i in 0..3 {
            state.start[i] = events(&[1, 2]);
        }
        assert!(!propagate(&mut state, &m));
    }

    #[test]
    fn staged_last_node_cannot_recompute() {
        let g = fig_graph();
        let order = random_topological_order(&g, 0);
        let mut p = RematProblem::new(g, 3);
        p.mode = ScheduleMode::Staged(order);
        let m = build_model(&p).unwrap();
        let state = SearchState::from_model(&m).unwrap();
        let last_recompute = m.interval_index(3, 1);
        assert_eq!(state.active[last_recompute], Activity::No);
        // Mandatory first copies start out active on their fixed events.
        let first = m.interval_index(2, 0);
        assert_eq!(state.active[first], Activity::Yes);
        assert_eq!(state.start[first].as_singleton(), Some(6));
    }

    fn events(list: &[usize]) -> Domain {
        let mut d = Domain::empty();
        for &e in list {
            d.insert(e);
        }
        d
    }
}
