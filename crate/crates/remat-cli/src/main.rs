//! Command-line surface for the rematerialization optimizer: graph
//! generation, solving, schedule validation, and benchmark sweeps.
//!
//! Exit codes: 0 for a feasible or optimal solve (and for a clean
//! validation), 2 when the instance is infeasible or a schedule fails
//! validation, 3 when the solver ran out of time without a verdict, and 1
//! for usage or I/O errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use remat::evaluator::{decode_schedule, schedule_solution, validate, Schedule, Violation};
use remat::generator::{random_layered, LayeredSpec};
use remat::graph::{load_graph, no_remat_peak_memory, random_topological_order};
use remat::model::RematProblem;
use remat::solver::{solve, write_trace_csv, SolveConfig, SolveReport, SolveStatus};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INVALID: u8 = 2;
const EXIT_UNKNOWN: u8 = 3;

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "remat", version, about = "Rematerialization schedule optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random layered compute graph as JSON.
    Gen(GenArgs),
    /// Solve a graph under a memory budget and write run artifacts.
    Solve(SolveArgs),
    /// Re-validate a stored schedule against a graph and budget.
    Validate(ValidateArgs),
    /// Run a table of solves and write one CSV row per cell.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 40)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    width_min: usize,
    #[arg(long, default_value_t = 4)]
    width_max: usize,
    #[arg(long, default_value_t = 0.55)]
    p_local: f64,
    #[arg(long, default_value_t = 0.04)]
    p_skip: f64,
    #[arg(long, default_value_t = 1)]
    duration_min: u64,
    #[arg(long, default_value_t = 9)]
    duration_max: u64,
    #[arg(long, default_value_t = 1)]
    size_min: u64,
    #[arg(long, default_value_t = 9)]
    size_max: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the graph JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BudgetMode {
    /// Budget is a fraction of the no-rematerialization peak memory.
    Frac,
    /// Budget is an absolute number of memory units.
    Abs,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Computations may start at any free event.
    Unstaged,
    /// Computations are tied to a fixed topological order's stages.
    Staged,
}

#[derive(Args)]
struct ProblemArgs {
    /// Path to the graph JSON document.
    #[arg(long)]
    graph: PathBuf,
    /// Memory budget: a fraction in (0, 1] or an absolute integer,
    /// depending on --budget-mode.
    #[arg(long)]
    budget: f64,
    #[arg(long, value_enum, default_value_t = BudgetMode::Frac)]
    budget_mode: BudgetMode,
    /// Default per-node recomputation cap.
    #[arg(long, default_value_t = 2)]
    cap: u32,
    /// Per-node cap override as NODE=CAP; repeatable.
    #[arg(long = "cap-override", value_name = "NODE=CAP")]
    cap_overrides: Vec<String>,
    /// Seed fixing the topological order that resolves fractional budgets
    /// and anchors staged mode.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = Mode::Unstaged)]
    mode: Mode,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// Independent search workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory receiving report.json, schedule.json, and trace.csv.
    #[arg(long)]
    out: PathBuf,
    /// Alternative path for the progress-trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Path to a schedule JSON written by the solve command.
    #[arg(long)]
    schedule: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Path to a bench spec JSON document.
    #[arg(long)]
    spec: PathBuf,
    /// Output path for the CSV table.
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Shared problem resolution
// ---------------------------------------------------------------------------

/// The run parameters as resolved from the flags, recorded in the report so
/// a run can be reproduced exactly.
#[derive(Debug, Clone, Serialize)]
struct RunManifest {
    graph: String,
    nodes: usize,
    edges: usize,
    budget_mode: &'static str,
    budget_input: f64,
    /// The absolute budget the solver ran with.
    resolved_budget: u64,
    /// Topological order fixing the no-remat peak for fractional budgets
    /// and the stage structure in staged mode.
    baseline_order: Option<Vec<String>>,
    cap: u32,
    cap_overrides: BTreeMap<String, u32>,
    mode: &'static str,
    time_limit_seconds: f64,
    seed: u64,
    workers: usize,
}

struct ResolvedProblem {
    problem: RematProblem,
    manifest: RunManifest,
}

fn resolve_problem(args: &ProblemArgs, mode: Mode, time_limit: f64, workers: usize) -> Result<ResolvedProblem> {
    let bytes = fs::read(&args.graph)
        .with_context(|| format!("reading graph {}", args.graph.display()))?;
    let graph = load_graph(&bytes)
        .with_context(|| format!("parsing graph {}", args.graph.display()))?;

    let mut caps = vec![args.cap; graph.node_count()];
    let mut overrides = BTreeMap::new();
    for raw in &args.cap_overrides {
        let (name, cap) = raw
            .split_once('=')
            .with_context(|| format!("cap override '{raw}' is not NODE=CAP"))?;
        let cap: u32 = cap.parse().with_context(|| format!("cap override '{raw}'"))?;
        let node = graph
            .node_index(name)
            .with_context(|| format!("cap override names unknown node '{name}'"))?;
        caps[node] = cap;
        overrides.insert(name.to_string(), cap);
    }

    let order = random_topological_order(&graph, args.seed);
    let resolved_budget = match args.budget_mode {
        BudgetMode::Frac => {
            if !(args.budget > 0.0 && args.budget <= 1.0) {
                bail!("fractional budget must be in (0, 1], got {}", args.budget);
            }
            (no_remat_peak_memory(&graph, &order) as f64 * args.budget).round() as u64
        }
        BudgetMode::Abs => {
            if args.budget < 0.0 || args.budget.fract() != 0.0 {
                bail!("absolute budget must be a non-negative integer, got {}", args.budget);
            }
            args.budget as u64
        }
    };

    let record_order = args.budget_mode == BudgetMode::Frac || mode == Mode::Staged;
    let baseline_order = record_order
        .then(|| order.order().iter().map(|&v| graph.name(v).to_string()).collect());

    let manifest = RunManifest {
        graph: args.graph.display().to_string(),
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        budget_mode: match args.budget_mode {
            BudgetMode::Frac => "frac",
            BudgetMode::Abs => "abs",
        },
        budget_input: args.budget,
        resolved_budget,
        baseline_order,
        cap: args.cap,
        cap_overrides: overrides,
        mode: match mode {
            Mode::Unstaged => "unstaged",
            Mode::Staged => "staged",
        },
        time_limit_seconds: time_limit,
        seed: args.seed,
        workers,
    };

    let mut problem = RematProblem::new(graph, resolved_budget);
    problem.remat_caps = caps;
    if mode == Mode::Staged {
        problem = problem.staged(order);
    }
    Ok(ResolvedProblem { problem, manifest })
}

// ---------------------------------------------------------------------------
// Report document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct ReportTimings {
    phase1_seconds: f64,
    total_seconds: f64,
    time_to_best_seconds: Option<f64>,
}

/// The solve report written to disk. Everything outside `timings` is
/// deterministic for a fixed manifest with one worker.
#[derive(Debug, Clone, Serialize)]
struct ReportDoc {
    manifest: RunManifest,
    status: &'static str,
    objective: Option<u64>,
    /// Percent duration increase over computing every node once, rounded
    /// to one decimal.
    tdi_percent: Option<f64>,
    peak_memory: Option<u64>,
    lower_bound: u64,
    /// Smallest peak any explored sequence reached; shows how close an
    /// unsolved run came to the budget.
    closest_peak: Option<u64>,
    incumbents: usize,
    nodes_explored: u64,
    search_rounds: u64,
    timings: ReportTimings,
}

fn tdi_percent(objective: Option<u64>, base: u64) -> Option<f64> {
    objective.map(|o| {
        let raw = 100.0 * (o as f64 - base as f64) / base as f64;
        (raw * 10.0).round() / 10.0
    })
}

fn report_doc(manifest: RunManifest, report: &SolveReport, base: u64) -> ReportDoc {
    ReportDoc {
        manifest,
        status: report.status.as_str(),
        objective: report.objective,
        tdi_percent: tdi_percent(report.objective, base),
        peak_memory: report.peak_memory,
        lower_bound: report.lower_bound,
        closest_peak: report.closest_peak,
        incumbents: report.incumbents,
        nodes_explored: report.nodes_explored,
        search_rounds: report.search_rounds,
        timings: ReportTimings {
            phase1_seconds: report.timings.phase1_seconds,
            total_seconds: report.timings.total_seconds,
            time_to_best_seconds: report.timings.time_to_best_seconds,
        },
    }
}

fn status_exit(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::Optimal | SolveStatus::Feasible => ExitCode::SUCCESS,
        SolveStatus::Infeasible => ExitCode::from(EXIT_INFEASIBLE),
        SolveStatus::Unknown => ExitCode::from(EXIT_UNKNOWN),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_gen(args: &GenArgs) -> Result<ExitCode> {
    let spec = LayeredSpec {
        layers: args.layers,
        width_min: args.width_min,
        width_max: args.width_max,
        p_local: args.p_local,
        p_skip: args.p_skip,
        duration_range: (args.duration_min, args.duration_max),
        size_range: (args.size_min, args.size_max),
        seed: args.seed,
    };
    let graph = random_layered(&spec)?;
    fs::write(&args.out, graph.to_canonical_json())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "generated {} nodes, {} edges -> {}",
        graph.node_count(),
        graph.edge_count(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode> {
    let resolved = resolve_problem(&args.problem, args.mode, args.time_limit, args.workers)?;
    let problem = resolved.problem;

    let mut cfg = SolveConfig::new(args.time_limit, args.problem.seed);
    cfg.worker_count = args.workers.max(1);
    let report = solve(&problem, &cfg)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    let base = problem.graph.total_duration();
    let doc = report_doc(resolved.manifest, &report, base);
    let report_path = args.out.join("report.json");
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    fs::write(&report_path, json).with_context(|| format!("writing {}", report_path.display()))?;

    if let Some(best) = &report.best {
        let schedule = decode_schedule(best, &problem)
            .map_err(|v| anyhow::anyhow!("incumbent failed validation: {v:?}"))?;
        let schedule_path = args.out.join("schedule.json");
        let mut json = serde_json::to_string_pretty(&schedule)?;
        json.push('\n');
        fs::write(&schedule_path, json)
            .with_context(|| format!("writing {}", schedule_path.display()))?;
    }

    let trace_path = args.trace.clone().unwrap_or_else(|| args.out.join("trace.csv"));
    let mut trace = Vec::new();
    write_trace_csv(&mut trace, &report.trace)?;
    fs::write(&trace_path, trace).with_context(|| format!("writing {}", trace_path.display()))?;

    match (report.objective, doc.tdi_percent, report.peak_memory) {
        (Some(obj), Some(tdi), Some(peak)) => println!(
            "{}: duration {obj} (TDI {tdi:.1}%), peak {peak} <= budget {} -> {}",
            doc.status,
            problem.budget,
            args.out.display()
        ),
        _ => println!("{}: no schedule within budget {} -> {}", doc.status, problem.budget, args.out.display()),
    }
    Ok(status_exit(report.status))
}

/// Stable machine-readable tag for a violation, printed one per line.
fn violation_tag(v: &Violation) -> &'static str {
    match v {
        Violation::FirstInactive { .. } => "FIRST_INACTIVE",
        Violation::IntervalOrder { .. } => "INTERVAL_ORDER",
        Violation::SameNodeOverlap { .. } => "SAME_NODE_OVERLAP",
        Violation::StartCollision { .. } => "START_COLLISION",
        Violation::PrecedenceUnserved { .. } => "PRECEDENCE_UNSERVED",
        Violation::MemoryExceeded { .. } => "MEMORY_EXCEEDED",
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode> {
    let resolved = resolve_problem(&args.problem, Mode::Unstaged, 0.0, 1)?;
    let problem = resolved.problem;

    let bytes = fs::read(&args.schedule)
        .with_context(|| format!("reading schedule {}", args.schedule.display()))?;
    let schedule: Schedule = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing schedule {}", args.schedule.display()))?;

    let sol = match schedule_solution(&schedule.events, &problem) {
        Ok(sol) => sol,
        Err(e) => {
            println!("SHAPE_MISMATCH: {e}");
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    let violations = validate(&sol, &problem);
    if violations.is_empty() {
        println!(
            "valid: peak {} <= budget {}, duration {}",
            sol.peak_memory(&problem.graph),
            problem.budget,
            sol.total_duration(&problem.graph)
        );
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            println!("{}: {v}", violation_tag(v));
        }
        Ok(ExitCode::from(EXIT_INVALID))
    }
}

// ---------------------------------------------------------------------------
// Bench sweeps
// ---------------------------------------------------------------------------

fn default_time_limit() -> f64 {
    10.0
}

fn default_cap() -> u32 {
    2
}

fn default_workers() -> usize {
    1
}

/// A bench run: the cross product of graphs and budget fractions, solved
/// under one time limit.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchSpec {
    graphs: Vec<PathBuf>,
    budget_fractions: Vec<f64>,
    #[serde(default = "default_time_limit")]
    time_limit: f64,
    #[serde(default = "default_cap")]
    cap: u32,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_workers")]
    workers: usize,
}

struct BenchRow {
    graph: String,
    nodes: Option<usize>,
    edges: Option<usize>,
    budget: Option<u64>,
    status: &'static str,
    tdi_percent: Option<f64>,
    peak_memory: Option<u64>,
    time_to_best_seconds: Option<f64>,
}

impl BenchRow {
    fn to_csv(&self) -> String {
        fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|v| v.to_string()).unwrap_or_default()
        }
        let tdi = self.tdi_percent.map(|t| format!("{t:.1}")).unwrap_or_default();
        let best = self.time_to_best_seconds.map(|t| format!("{t:.3}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{tdi},{},{best}",
            self.graph,
            opt(&self.nodes),
            opt(&self.edges),
            opt(&self.budget),
            self.status,
            opt(&self.peak_memory),
        )
    }
}

fn bench_cell(path: &Path, fraction: f64, spec: &BenchSpec) -> BenchRow {
    let graph_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let unknown = |nodes: Option<usize>, edges: Option<usize>, budget: Option<u64>| BenchRow {
        graph: graph_name.clone(),
        nodes,
        edges,
        budget,
        status: "unknown",
        tdi_percent: None,
        peak_memory: None,
        time_to_best_seconds: None,
    };

    let Ok(bytes) = fs::read(path) else {
        return unknown(None, None, None);
    };
    let Ok(graph) = load_graph(&bytes) else {
        return unknown(None, None, None);
    };
    let order = random_topological_order(&graph, spec.seed);
    let budget = (no_remat_peak_memory(&graph, &order) as f64 * fraction).round() as u64;
    let (nodes, edges) = (graph.node_count(), graph.edge_count());
    let base = graph.total_duration();

    let mut problem = RematProblem::new(graph, budget);
    problem.remat_caps = vec![spec.cap; nodes];
    let mut cfg = SolveConfig::new(spec.time_limit, spec.seed);
    cfg.worker_count = spec.workers.max(1);
    let Ok(report) = solve(&problem, &cfg) else {
        return unknown(Some(nodes), Some(edges), Some(budget));
    };

    BenchRow {
        graph: graph_name,
        nodes: Some(nodes),
        edges: Some(edges),
        budget: Some(budget),
        status: report.status.as_str(),
        tdi_percent: tdi_percent(report.objective, base),
        peak_memory: report.peak_memory,
        time_to_best_seconds: report.timings.time_to_best_seconds,
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<ExitCode> {
    let bytes =
        fs::read(&args.spec).with_context(|| format!("reading spec {}", args.spec.display()))?;
    let spec: BenchSpec = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing spec {}", args.spec.display()))?;
    for &f in &spec.budget_fractions {
        if !(f > 0.0 && f <= 1.0) {
            bail!("budget fraction must be in (0, 1], got {f}");
        }
    }

    let mut rows = Vec::new();
    for path in &spec.graphs {
        for &fraction in &spec.budget_fractions {
            rows.push(bench_cell(path, fraction, &spec));
        }
    }
    rows.sort_by(|a, b| {
        a.graph.cmp(&b.graph).then_with(|| b.budget.cmp(&a.budget))
    });

    let mut csv = String::from(
        "graph,nodes,edges,budget,status,tdi_percent,peak_memory,time_to_best_seconds\n",
    );
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(&args.out, &csv).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
