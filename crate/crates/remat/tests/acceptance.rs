//! Acceptance suite: one test per release criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see the lines as they pass).
//!
//! 1. Exact agreement with the exhaustive oracle on every tiny instance.
//! 2. The known four-node example: optimum, infeasibility cutoff, decode.
//! 3. Soundness fuzzing: all emitted incumbents validate cleanly.
//! 4. Staged optima never beat free-order optima and revalidate unstaged.
//! 5. Scaling thresholds on layered graphs at a 90% budget.
//! 6. Model size accounting: interval and reservoir-group counts.
//! 7. Optimal objective is monotone in the memory budget.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use remat::evaluator::{brute_force_optimal, simulate, validate};
use remat::generator::{enumerate_small_dags, random_layered, LayeredSpec};
use remat::graph::{no_remat_peak_memory, random_topological_order, ComputeGraph, NodeId, TopoOrder};
use remat::model::{build_model, RematProblem};
use remat::solver::{solve, SolveConfig, SolveStatus};

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

fn report(criterion: usize, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("criterion {criterion}: PASS - {detail}"),
        Err(detail) => {
            println!("criterion {criterion}: FAIL - {detail}");
            panic!("criterion {criterion} failed: {detail}");
        }
    }
}

/// A config that leaves the exact search all the room it needs while
/// keeping the heuristic warm-up cheap on tiny instances.
fn exact_config(seed: u64) -> SolveConfig {
    let mut cfg = SolveConfig::new(30.0, seed);
    cfg.max_rounds = 64;
    cfg
}

/// Rebuilds a graph with seeded random durations and output sizes.
fn random_weights(g: &ComputeGraph, rng: &mut ChaCha8Rng) -> ComputeGraph {
    let n = g.node_count();
    let durations = (0..n).map(|_| rng.gen_range(1..=6)).collect();
    let sizes = (0..n).map(|_| rng.gen_range(1..=4)).collect();
    ComputeGraph::new(durations, sizes, g.edges().to_vec()).expect("reweighted graph stays valid")
}

fn fig_example() -> ComputeGraph {
    ComputeGraph::new(vec![1; 4], vec![1; 4], vec![(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap()
}

/// Every topological order of a small graph.
fn linear_extensions(g: &ComputeGraph) -> Vec<Vec<NodeId>> {
    fn rec(
        g: &ComputeGraph,
        indeg: &mut [usize],
        used: &mut [bool],
        cur: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        if cur.len() == g.node_count() {
            out.push(cur.clone());
            return;
        }
        for v in 0..g.node_count() {
            if used[v] || indeg[v] != 0 {
                continue;
            }
            used[v] = true;
            for &w in g.succs(v) {
                indeg[w] -= 1;
            }
            cur.push(v);
            rec(g, indeg, used, cur, out);
            cur.pop();
            for &w in g.succs(v) {
                indeg[w] += 1;
            }
            used[v] = false;
        }
    }
    let n = g.node_count();
    let mut indeg = vec![0usize; n];
    for &(_, v) in g.edges() {
        indeg[v] += 1;
    }
    let mut out = Vec::new();
    rec(g, &mut indeg, &mut vec![false; n], &mut Vec::new(), &mut out);
    out
}

/// The tiny-instance corpus shared by criteria 1 and 4: every connected
/// graph up to four nodes plus a seeded 200-graph sample of the five-node
/// enumeration, each in a unit-weight and a random-weight variant.
fn oracle_corpus(include_n5: bool) -> Vec<ComputeGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
    let mut corpus = Vec::new();
    let small = enumerate_small_dags(4).expect("enumeration up to four nodes");
    for g in &small {
        corpus.push(g.clone());
        corpus.push(random_weights(g, &mut rng));
    }
    if include_n5 {
        let five: Vec<ComputeGraph> = enumerate_small_dags(5)
            .expect("enumeration up to five nodes")
            .into_iter()
            .filter(|g| g.node_count() == 5)
            .collect();
        for k in 0..200 {
            let g = &five[rng.gen_range(0..five.len())];
            if k % 2 == 0 {
                corpus.push(g.clone());
            } else {
                corpus.push(random_weights(g, &mut rng));
            }
        }
    }
    corpus
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_oracle_equivalence() {
    report(1, check_oracle_equivalence());
}

fn check_oracle_equivalence() -> Result<String, String> {
    let started = Instant::now();
    let mut instances = 0u64;
    let mut points = 0u64;
    for (gi, g) in oracle_corpus(true).iter().enumerate() {
        instances += 1;
        for budget in 0..=g.total_size() {
            points += 1;
            let p = RematProblem::new(g.clone(), budget);
            let expected = brute_force_optimal(&p)
                .map_err(|e| format!("oracle rejected graph {gi}: {e}"))?
                .map(|r| r.duration);
            let r = solve(&p, &exact_config(0x5EED + gi as u64))
                .map_err(|e| format!("solver rejected graph {gi}: {e}"))?;
            let agree = match expected {
                Some(d) => r.status == SolveStatus::Optimal && r.objective == Some(d),
                None => r.status == SolveStatus::Infeasible,
            };
            if !agree {
                return Err(format!(
                    "graph {gi} (edges {:?}) at budget {budget}: oracle {expected:?}, solver {} {:?}",
                    g.edges(),
                    r.status,
                    r.objective
                ));
            }
        }
    }
    Ok(format!(
        "{points} budget points over {instances} tiny instances match the oracle exactly in {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

#[test]
fn criterion_2_worked_example() {
    report(2, check_worked_example());
}

fn check_worked_example() -> Result<String, String> {
    let g = fig_example();

    let at3 = solve(&RematProblem::new(g.clone(), 3), &exact_config(2)).map_err(|e| e.to_string())?;
    if at3.status != SolveStatus::Optimal || at3.objective != Some(4) {
        return Err(format!("budget 3: expected optimal duration 4, got {} {:?}", at3.status, at3.objective));
    }

    let at2 = solve(&RematProblem::new(g.clone(), 2), &exact_config(2)).map_err(|e| e.to_string())?;
    if at2.status != SolveStatus::Infeasible {
        return Err(format!("budget 2: expected infeasible, got {} {:?}", at2.status, at2.objective));
    }

    let sim = simulate(&g, &[0, 1, 2, 0, 3], &[2; 4]).map_err(|e| e.to_string())?;
    if sim.peak_memory != 3 {
        return Err(format!("recompute sequence peaked at {} instead of 3", sim.peak_memory));
    }

    Ok(format!(
        "optimal duration 4 at budget 3, infeasible at 2, recompute sequence peaks at {}",
        sim.peak_memory
    ))
}

#[test]
fn criterion_3_soundness_fuzzing() {
    report(3, check_soundness_fuzzing());
}

fn check_soundness_fuzzing() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut incumbents = 0usize;
    let mut feasible = 0u64;
    for i in 0..500u64 {
        let spec = LayeredSpec {
            layers: rng.gen_range(2..=12),
            width_min: 1,
            width_max: rng.gen_range(1..=5),
            p_local: rng.gen_range(0.4..=0.9),
            p_skip: rng.gen_range(0.0..=0.1),
            duration_range: (1, rng.gen_range(1..=9)),
            size_range: (1, rng.gen_range(1..=9)),
            seed: 0xF022 + i,
        };
        let g = random_layered(&spec).map_err(|e| format!("problem {i}: {e}"))?;
        if g.node_count() > 60 {
            return Err(format!("problem {i}: generated {} nodes", g.node_count()));
        }
        let order = random_topological_order(&g, i);
        let peak = no_remat_peak_memory(&g, &order);
        let budget = rng.gen_range(peak / 2..=peak + peak / 20 + 1);
        let mut p = RematProblem::new(g, budget);
        if i % 3 == 0 {
            p = p.staged(order);
        }
        let mut cfg = SolveConfig::new(0.3, i);
        cfg.stall_rounds = Some(64);
        // Every incumbent the search emits is checked by the independent
        // validator inside the solver; a violation aborts the run.
        let r = solve(&p, &cfg).map_err(|e| format!("problem {i}: {e}"))?;
        incumbents += r.incumbents;
        if let Some(best) = &r.best {
            feasible += 1;
            let violations = validate(best, &p);
            if !violations.is_empty() {
                return Err(format!("problem {i}: final schedule violates {violations:?}"));
            }
            if Some(best.peak_memory(&p.graph)) != r.peak_memory || r.peak_memory > Some(budget) {
                return Err(format!("problem {i}: peak accounting mismatch"));
            }
        }
    }
    Ok(format!(
        "500 random solves emitted {incumbents} incumbents ({feasible} solved), all validated clean"
    ))
}

#[test]
fn criterion_4_staged_consistency() {
    report(4, check_staged_consistency());
}

fn check_staged_consistency() -> Result<String, String> {
    let mut checks = 0u64;
    for (gi, g) in oracle_corpus(false).iter().enumerate() {
        let extensions = linear_extensions(g);
        for budget in 0..=g.total_size() {
            let free = RematProblem::new(g.clone(), budget);
            let unstaged_best = brute_force_optimal(&free)
                .map_err(|e| format!("oracle rejected graph {gi}: {e}"))?
                .map(|r| r.duration);
            for ext in &extensions {
                checks += 1;
                let order = TopoOrder::new(g, ext.clone()).expect("extension is topological");
                let staged = RematProblem::new(g.clone(), budget).staged(order);
                let r = solve(&staged, &exact_config(0x57A6 + gi as u64))
                    .map_err(|e| format!("staged solve failed on graph {gi}: {e}"))?;
                match r.status {
                    SolveStatus::Infeasible => {}
                    SolveStatus::Optimal => {
                        let d = r.objective.unwrap();
                        let floor = unstaged_best.ok_or_else(|| {
                            format!("graph {gi} budget {budget} order {ext:?}: staged feasible, free order not")
                        })?;
                        if d < floor {
                            return Err(format!(
                                "graph {gi} budget {budget} order {ext:?}: staged {d} beats free-order {floor}"
                            ));
                        }
                        let best = r.best.as_ref().expect("optimal solve carries its schedule");
                        let violations = validate(best, &free);
                        if !violations.is_empty() {
                            return Err(format!(
                                "graph {gi} budget {budget} order {ext:?}: staged schedule fails the free-order model: {violations:?}"
                            ));
                        }
                    }
                    other => {
                        return Err(format!(
                            "graph {gi} budget {budget} order {ext:?}: staged solve inconclusive ({other})"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!(
        "{checks} staged solves stayed at or above the free-order optimum and revalidated unstaged"
    ))
}

#[test]
fn criterion_5_scaling_thresholds() {
    report(5, check_scaling_thresholds());
}

fn check_scaling_thresholds() -> Result<String, String> {
    // Around 100 nodes: a feasible schedule within 5% extra duration, found
    // inside a minute.
    let spec = LayeredSpec { seed: 5, ..LayeredSpec::default() };
    let g = random_layered(&spec).map_err(|e| e.to_string())?;
    let (n, m) = (g.node_count(), g.edge_count());
    let order = random_topological_order(&g, 0);
    let budget = no_remat_peak_memory(&g, &order) * 9 / 10;
    let base = g.total_duration();
    let p = RematProblem::new(g, budget);
    let mut cfg = SolveConfig::new(55.0, 7);
    cfg.stall_rounds = Some(4000);
    let started = Instant::now();
    let r = solve(&p, &cfg).map_err(|e| e.to_string())?;
    let medium_elapsed = started.elapsed().as_secs_f64();
    if medium_elapsed > 60.0 {
        return Err(format!("medium instance took {medium_elapsed:.1}s"));
    }
    let obj = match (r.status, r.objective) {
        (SolveStatus::Optimal | SolveStatus::Feasible, Some(obj)) => obj,
        (status, _) => return Err(format!("medium instance ({n} nodes, {m} edges): {status}")),
    };
    let tdi = 100.0 * (obj as f64 - base as f64) / base as f64;
    if tdi > 5.0 {
        return Err(format!("medium instance duration increase {tdi:.2}% exceeds 5%"));
    }

    // Around 1000 nodes: any feasible schedule within an hour.
    let spec = LayeredSpec {
        layers: 300,
        width_min: 2,
        width_max: 5,
        p_local: 0.7,
        p_skip: 0.006,
        seed: 0,
        ..LayeredSpec::default()
    };
    let g = random_layered(&spec).map_err(|e| e.to_string())?;
    let (ln, lm) = (g.node_count(), g.edge_count());
    let order = random_topological_order(&g, 0);
    let budget = no_remat_peak_memory(&g, &order) * 9 / 10;
    let base = g.total_duration();
    let p = RematProblem::new(g, budget);
    let mut cfg = SolveConfig::new(1800.0, 7);
    cfg.stall_rounds = Some(1000);
    let started = Instant::now();
    let r = solve(&p, &cfg).map_err(|e| e.to_string())?;
    let large_elapsed = started.elapsed().as_secs_f64();
    if large_elapsed > 3600.0 {
        return Err(format!("large instance took {large_elapsed:.1}s"));
    }
    let large_obj = match (r.status, r.objective) {
        (SolveStatus::Optimal | SolveStatus::Feasible, Some(obj)) => obj,
        (status, _) => return Err(format!("large instance ({ln} nodes, {lm} edges): {status}")),
    };
    let large_tdi = 100.0 * (large_obj as f64 - base as f64) / base as f64;

    Ok(format!(
        "({n}, {m}) reached {tdi:.2}% extra duration in {medium_elapsed:.1}s; ({ln}, {lm}) feasible at {large_tdi:.2}% in {large_elapsed:.1}s"
    ))
}

#[test]
fn criterion_6_model_size_accounting() {
    report(6, check_model_size_accounting());
}

fn check_model_size_accounting() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    for i in 0..100u64 {
        let spec = LayeredSpec {
            layers: rng.gen_range(2..=20),
            width_min: 1,
            width_max: rng.gen_range(1..=6),
            p_local: rng.gen_range(0.4..=0.9),
            p_skip: rng.gen_range(0.0..=0.05),
            duration_range: (1, 9),
            size_range: (1, 9),
            seed: 0xC0DE + i,
        };
        let g = random_layered(&spec).map_err(|e| format!("graph {i}: {e}"))?;
        let mut p = RematProblem::new(g, u64::MAX / 4);
        if i % 2 == 0 {
            p = p.with_uniform_cap(1 + (i % 3) as u32);
        } else {
            p.remat_caps = (0..p.graph.node_count()).map(|v| 1 + (v % 3) as u32).collect();
        }
        let model = build_model(&p).map_err(|e| format!("graph {i}: {e}"))?;
        let expected_intervals: usize = p.remat_caps.iter().map(|&c| c as usize).sum();
        if model.interval_count() != expected_intervals {
            return Err(format!(
                "graph {i}: {} interval triples, expected {expected_intervals}",
                model.interval_count()
            ));
        }
        if model.reservoir_group_count() != p.graph.edge_count() {
            return Err(format!(
                "graph {i}: {} reservoir groups, expected one per edge ({})",
                model.reservoir_group_count(),
                p.graph.edge_count()
            ));
        }
        let expected_ledgers: usize =
            p.graph.edges().iter().map(|&(_, v)| p.remat_caps[v] as usize).sum();
        let bound = p.remat_caps.iter().max().copied().unwrap_or(0) as usize * p.graph.edge_count();
        if model.reservoir_ledger_count() != expected_ledgers || expected_ledgers > bound {
            return Err(format!(
                "graph {i}: {} reservoir ledgers, expected {expected_ledgers} (bound {bound})",
                model.reservoir_ledger_count()
            ));
        }
    }
    Ok("100 graphs: interval triples equal the summed caps, reservoir ledgers equal one per edge and consumer copy".into())
}

#[test]
fn criterion_7_budget_monotonicity() {
    report(7, check_budget_monotonicity());
}

fn check_budget_monotonicity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EEF);
    let pool = enumerate_small_dags(4).map_err(|e| e.to_string())?;
    for i in 0..50 {
        let g = random_weights(&pool[rng.gen_range(0..pool.len())], &mut rng);
        let mut prev: Option<Option<u64>> = None;
        for budget in 0..=g.total_size() {
            let p = RematProblem::new(g.clone(), budget);
            let now = brute_force_optimal(&p)
                .map_err(|e| format!("instance {i}: {e}"))?
                .map(|r| r.duration);
            if let Some(prev) = prev {
                let regressed = match (prev, now) {
                    (Some(a), Some(b)) => b > a,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if regressed {
                    return Err(format!(
                        "instance {i} (edges {:?}): optimum {prev:?} at budget {} vs {now:?} at {budget}",
                        g.edges(),
                        budget - 1
                    ));
                }
            }
            prev = Some(now);
        }
    }
    Ok("50 budget sweeps: the oracle optimum never increased with more memory".into())
}
