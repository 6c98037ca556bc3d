//! Command-line front door: run the engine or the greedy baseline on
//! streams, audit traces, run the lower-bound adversary, and sweep
//! experiment grids into CSV.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kmedian_online::audit::{audit_trace, AuditReport};
use kmedian_online::engine::{Engine, EngineConfig, EngineError, Geometry, RunResult, SolverMode};
use kmedian_online::greedy::GreedyBaseline;
use kmedian_online::instances::{
    gen_beta_halving, gen_fig1, gen_label_conflict, gen_planted, run_lower_bound_adversary,
    AdversaryConfig, Instance, Labeler,
};
use kmedian_online::io::{coords_of, parse_matrix_csv, parse_stream, write_stream, StreamFile};
use kmedian_online::metric::{MetricKind, PointId, PointStore};
use kmedian_online::offline::{exact_kmedian, exact_subset_count, local_search_kmedian};
use kmedian_online::scalar::Real;
use kmedian_online::trace::{parse_trace, trace_to_string};

#[derive(Parser)]
#[command(
    name = "kmedian",
    about = "Budget-augmented online k-median clustering with irrevocable labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online engine (or the greedy baseline) over a stream.
    Run(RunArgs),
    /// Verify a trace against its stream: structural invariants, separation,
    /// and the cost bounds.
    Audit(AuditArgs),
    /// Drive the adaptive lower-bound adversary against a labeler.
    Adversary(AdversaryArgs),
    /// Run a grid of experiments from a JSONL spec into a CSV table.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    L1,
    L2,
    Matrix,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Auto,
    Exact,
    Approx,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Engine,
    Greedy,
}

#[derive(Args)]
struct RunArgs {
    /// Stream file (JSONL); omit when using --family.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generate the stream instead of reading it: fig1 | beta-halving |
    /// label-conflict | planted-random.
    #[arg(long)]
    family: Option<String>,
    /// fig1 parameter.
    #[arg(long, default_value_t = 1000)]
    alpha: usize,
    /// planted-random: cluster count (defaults to --k).
    #[arg(long)]
    clusters: Option<usize>,
    /// planted-random: per-coordinate jitter.
    #[arg(long, default_value_t = 1.0)]
    spread: Real,
    /// planted-random: stream length; beta-halving: duplicates per probe.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// planted-random: dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of clusters k (falls back to the stream header).
    #[arg(long)]
    k: Option<usize>,
    /// Budget: a number, "auto:exact" (exact optimum of the full stream) or
    /// "auto:approx5" (five times the local-search cost).
    #[arg(long)]
    budget: Option<String>,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    /// CSV sidecar with the full symmetric distance matrix (metric=matrix).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Skip the O(n^3) triangle-inequality validation of explicit matrices.
    #[arg(long)]
    no_validate: bool,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    solver: SolverArg,
    /// Write the JSONL trace here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the (generated or loaded) stream itself here, with its
    /// metadata header.
    #[arg(long)]
    stream_out: Option<PathBuf>,
    /// Audit the trace after the run and fail on any violation.
    #[arg(long)]
    audit: bool,
    /// Run the greedy baseline instead of the engine.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// Stream file the trace was produced from.
    #[arg(long)]
    input: PathBuf,
    /// Trace file (JSONL) to verify.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Exact optimum of the full stream: "auto" (solve it), "skip"
    /// (structural checks only) or a number.
    #[arg(long, default_value = "auto")]
    exact_opt: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct AdversaryArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    budget: Real,
    /// Punishment multiplier L (default 1000 * k).
    #[arg(long = "adversary-l")]
    l_mult: Option<Real>,
    #[arg(long, value_enum, default_value_t = TargetArg::Engine)]
    target: TargetArg,
    /// Run the whole k in 2..=6 table instead of a single k.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// JSONL spec: one row per experiment, e.g.
    /// {"family":"fig1","alpha":100} or
    /// {"family":"planted-random","clusters":3,"n":80,"spread":1.0,"dim":2,"seed":7}.
    #[arg(long)]
    spec: PathBuf,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Adversary(args) => cmd_adversary(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match code {
        Ok(c) => std::process::exit(c),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

struct LoadedStream {
    file: StreamFile,
    geometry: Geometry,
    coords: Option<Vec<Vec<Real>>>,
    store: PointStore<Real>,
}

fn load_stream(
    input: &PathBuf,
    metric: MetricArg,
    matrix: &Option<PathBuf>,
    no_validate: bool,
) -> Result<LoadedStream> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let file = parse_stream(&text)?;
    let kind = match (metric, file.meta.as_ref().and_then(|m| m.metric)) {
        (MetricArg::Matrix, _) => MetricKind::Matrix,
        (MetricArg::L1, _) => MetricKind::L1,
        (MetricArg::L2, Some(k)) => k, // header wins over the default
        (MetricArg::L2, None) => MetricKind::L2,
    };
    if kind == MetricKind::Matrix {
        let path = matrix
            .as_ref()
            .ok_or_else(|| anyhow!("--metric matrix requires --matrix <csv>"))?;
        let mtext = fs::read_to_string(path)?;
        let m = parse_matrix_csv(&mtext)?;
        if m.len() != file.points.len() {
            bail!(
                "matrix is {}x{} but the stream has {} points",
                m.len(),
                m.len(),
                file.points.len()
            );
        }
        let store = PointStore::from_matrix(m.clone())?;
        if !no_validate {
            if let Some(v) = store.validate_metric(store.len()) {
                bail!(
                    "matrix violates the triangle inequality: d({},{}) = {} > {} via {}",
                    v.a,
                    v.c,
                    v.direct,
                    v.via,
                    v.b
                );
            }
        }
        Ok(LoadedStream {
            file,
            geometry: Geometry::Matrix(m),
            coords: None,
            store,
        })
    } else {
        let coords = coords_of(&file)?;
        let dim = coords[0].len();
        let mut store = PointStore::new_euclidean(kind, dim);
        for c in &coords {
            store.push(c)?;
        }
        Ok(LoadedStream {
            file,
            geometry: Geometry::Euclidean { kind, dim },
            coords: Some(coords),
            store,
        })
    }
}

fn generated_instance(args: &RunArgs, family: &str) -> Result<Instance> {
    Ok(match family {
        "fig1" => gen_fig1(args.alpha),
        "beta-halving" => gen_beta_halving(args.n.clamp(1, 50)),
        "label-conflict" => gen_label_conflict(),
        "planted-random" => {
            let clusters = args.clusters.or(args.k).unwrap_or(3);
            gen_planted(clusters, args.spread, args.n, args.dim, args.seed)?
        }
        other => bail!("unknown family {other:?}"),
    })
}

/// Resolve the budget string; `auto:*` solves the full stream offline.
fn resolve_budget(spec: &str, store: &PointStore<Real>, k: usize) -> Result<(Real, &'static str)> {
    let ids: Vec<PointId> = (0..store.len() as u32).map(PointId).collect();
    match spec {
        "auto:exact" => {
            let (_, cl) = exact_kmedian(store, &ids, k, 10_000_000)
                .context("auto:exact budget needs an enumerable instance; use auto:approx5")?;
            Ok((cl.cost.max(1e-6), "auto:exact"))
        }
        "auto:approx5" | "auto:approxx5" => {
            let (_, cl) = local_search_kmedian(store, &ids, k, 1)?;
            Ok(((5.0 * cl.cost).max(1e-6), "auto:approx5"))
        }
        v => {
            let b: Real = v.parse().map_err(|_| anyhow!("bad budget {v:?}"))?;
            Ok((b, "explicit"))
        }
    }
}

fn pick_solver(arg: SolverArg, store: &PointStore<Real>, k: usize, cap: u64) -> SolverMode {
    match arg {
        SolverArg::Exact => SolverMode::Exact,
        SolverArg::Approx => SolverMode::Approx,
        SolverArg::Auto => {
            let locs = store.loc_count_in_prefix(store.len());
            if exact_subset_count(locs, k) <= cap as u128 {
                SolverMode::Exact
            } else {
                SolverMode::Approx
            }
        }
    }
}

fn run_engine_over(
    geometry: Geometry,
    cfg: EngineConfig,
    coords: Option<&[Vec<Real>]>,
) -> Result<RunResult> {
    let mut eng = Engine::new(cfg, geometry)?;
    let n = match &coords {
        Some(c) => c.len(),
        None => eng.store().len(),
    };
    for i in 0..n {
        let step = match coords {
            Some(c) => eng.step_coords(&c[i]),
            None => eng.step_next(),
        };
        match step {
            Ok(_) => {}
            Err(EngineError::BudgetViolation { .. }) => return Ok(eng.finish()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(eng.finish())
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let (loaded, instance): (LoadedStream, Option<Instance>) = match (&args.input, &args.family) {
        (Some(path), None) => (
            load_stream(path, args.metric, &args.matrix, args.no_validate)?,
            None,
        ),
        (None, Some(fam)) => {
            let inst = generated_instance(&args, fam)?;
            let file = inst.to_stream_file();
            let coords = Some(inst.points.clone());
            let store = inst.store();
            (
                LoadedStream {
                    file,
                    geometry: Geometry::Euclidean {
                        kind: inst.kind,
                        dim: inst.dim,
                    },
                    coords,
                    store,
                },
                Some(inst),
            )
        }
        (Some(_), Some(_)) => bail!("--input and --family are mutually exclusive"),
        (None, None) => bail!("either --input or --family is required"),
    };

    let meta = loaded.file.meta.as_ref();
    let k = args
        .k
        .or(instance.as_ref().map(|i| i.k))
        .or(meta.and_then(|m| m.k))
        .ok_or_else(|| anyhow!("--k required (no k in stream header)"))?;
    let (budget, budget_kind) = match &args.budget {
        Some(spec) => resolve_budget(spec, &loaded.store, k)?,
        None => {
            let b = instance
                .as_ref()
                .map(|i| i.budget)
                .or(meta.and_then(|m| m.b))
                .ok_or_else(|| anyhow!("--budget required (no b in stream header)"))?;
            (b, "header")
        }
    };

    if let Some(path) = &args.stream_out {
        fs::write(path, write_stream(&loaded.file))?;
    }

    if args.baseline {
        let mut g = GreedyBaseline::new(k, budget, loaded.geometry)?;
        let n = loaded
            .coords
            .as_ref()
            .map(|c| c.len())
            .unwrap_or(loaded.store.len());
        for i in 0..n {
            match &loaded.coords {
                Some(c) => g.step_coords(&c[i])?,
                None => g.step_next()?,
            };
        }
        if let Some(path) = &args.trace_out {
            fs::write(path, trace_to_string(g.events()))?;
        }
        println!(
            "{}",
            serde_json::json!({
                "algorithm": "greedy-baseline",
                "n": n, "k": k, "b": budget, "budget_kind": budget_kind,
                "labels_used": g.label_count(),
                "final_cost": g.cost(),
                "ratio": g.cost() / budget,
            })
        );
        return Ok(0);
    }

    let mut cfg = EngineConfig::new(k, budget);
    cfg.solver = pick_solver(args.solver, &loaded.store, k, cfg.exact_cap);
    let res = run_engine_over(loaded.geometry, cfg, loaded.coords.as_deref())?;

    if let Some(path) = &args.trace_out {
        fs::write(path, trace_to_string(&res.events))?;
    }

    let mut summary = serde_json::to_value(&res.summary)?;
    summary["budget_kind"] = serde_json::json!(budget_kind);
    println!("{summary}");

    if args.audit {
        let exact_opt = instance
            .as_ref()
            .and_then(|i| i.certified_opt)
            .or_else(|| meta.and_then(|m| m.opt_bound));
        let report = audit_trace(&loaded.store, &res.events, exact_opt)?;
        print_report_lines(&report);
        if !report.passed() {
            return Ok(2);
        }
    }

    if res.summary.violated {
        eprintln!("budget violation: budget B={budget} is likely below the optimal cost");
        return Ok(3);
    }
    Ok(0)
}

fn print_report_lines(report: &AuditReport) {
    for v in &report.verdicts {
        if v.arrival.is_none() && v.phase.is_none() {
            println!("audit {:<32} {:?} {}", v.section, v.status, v.detail);
        }
    }
    for v in report.failures() {
        println!(
            "audit FAILURE {} arrival={:?} phase={:?}: {}",
            v.section, v.arrival, v.phase, v.detail
        );
    }
}

fn cmd_audit(args: AuditArgs) -> Result<i32> {
    let loaded = load_stream(
        &args.input,
        if args.matrix.is_some() {
            MetricArg::Matrix
        } else {
            MetricArg::L2
        },
        &args.matrix,
        false,
    )?;
    let trace_text = fs::read_to_string(&args.trace)?;
    let events = parse_trace(&trace_text)?;
    let exact_opt = match args.exact_opt.as_str() {
        "skip" => None,
        "auto" => {
            let ids: Vec<PointId> = (0..loaded.store.len() as u32).map(PointId).collect();
            let k = loaded.file.meta.as_ref().and_then(|m| m.k).unwrap_or(2);
            match exact_kmedian(&loaded.store, &ids, k, 10_000_000) {
                Ok((_, cl)) => Some(cl.cost),
                Err(e) => {
                    eprintln!("exact optimum unavailable ({e}); premise-gated sections skipped");
                    None
                }
            }
        }
        v => Some(
            v.parse::<Real>()
                .map_err(|_| anyhow!("bad --exact-opt {v:?}"))?,
        ),
    };
    let report = audit_trace(&loaded.store, &events, exact_opt)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.report_out {
        Some(path) => fs::write(path, json)?,
        None => println!("{json}"),
    }
    print_report_lines(&report);
    Ok(if report.passed() { 0 } else { 2 })
}

fn adversary_row(
    k: usize,
    budget: Real,
    l_mult: Option<Real>,
    target: TargetArg,
) -> Result<serde_json::Value> {
    let mut cfg = AdversaryConfig::new(k, budget);
    if let Some(l) = l_mult {
        cfg.l_mult = l;
    }
    let outcome = match target {
        TargetArg::Engine => {
            struct EngineLabeler(Engine);
            impl Labeler for EngineLabeler {
                fn label_next(&mut self, coords: &[Real]) -> std::result::Result<usize, String> {
                    self.0
                        .step_coords(coords)
                        .map(|o| o.label)
                        .map_err(|e| e.to_string())
                }
            }
            let eng = Engine::new(
                EngineConfig::new(k, budget),
                Geometry::Euclidean {
                    kind: MetricKind::L2,
                    dim: k,
                },
            )?;
            let mut labeler = EngineLabeler(eng);
            run_lower_bound_adversary(&mut labeler, &cfg)?
        }
        TargetArg::Greedy => {
            let mut g = GreedyBaseline::new(
                k,
                budget,
                Geometry::Euclidean {
                    kind: MetricKind::L2,
                    dim: k,
                },
            )?;
            run_lower_bound_adversary(&mut g, &cfg)?
        }
    };
    Ok(serde_json::json!({
        "k": k,
        "b": budget,
        "target": match target { TargetArg::Engine => "engine", TargetArg::Greedy => "greedy" },
        "n": outcome.points.len(),
        "achieved_cost": outcome.achieved_cost,
        "ratio": outcome.achieved_cost / budget,
        "lower_bound_ratio": (k as Real - 1.0) / 2.0,
        "stream_exact_opt": outcome.exact_opt,
        "branch": format!("{:?}", outcome.branch),
    }))
}

fn cmd_adversary(args: AdversaryArgs) -> Result<i32> {
    let ks: Vec<usize> = if args.table {
        (2..=6).collect()
    } else {
        vec![args.k]
    };
    let mut all_ok = true;
    for k in ks {
        let row = adversary_row(k, args.budget, args.l_mult, args.target)?;
        let ok = row["ratio"].as_f64().unwrap() >= row["lower_bound_ratio"].as_f64().unwrap()
            && row["stream_exact_opt"].as_f64().unwrap() <= args.budget + 1e-9;
        all_ok &= ok;
        println!("{row}");
    }
    Ok(if all_ok { 0 } else { 2 })
}

const SWEEP_HEADER: &str = "family,alpha,clusters,spread,n,dim,seed,k,b,b_eff,labels_used,phases,add1,add2,add3,add4,ex1,ex2,ex3,ex4,ex5,final_cost,ratio,greedy_labels,greedy_cost";

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.spec)?;
    let mut rows = vec![SWEEP_HEADER.to_string()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let spec: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("spec line {}", lineno + 1))?;
        let family = spec["family"]
            .as_str()
            .ok_or_else(|| anyhow!("spec line {} has no family", lineno + 1))?;
        let seed = spec["seed"].as_u64().unwrap_or(0);
        let alpha = spec["alpha"].as_u64().map(|v| v as usize);
        let clusters = spec["clusters"].as_u64().map(|v| v as usize);
        let spread = spec["spread"].as_f64().unwrap_or(1.0);
        let n = spec["n"].as_u64().unwrap_or(100) as usize;
        let dim = spec["dim"].as_u64().unwrap_or(2) as usize;
        let inst = match family {
            "fig1" => gen_fig1(alpha.unwrap_or(100)),
            "beta-halving" => gen_beta_halving(spec["duplicates"].as_u64().unwrap_or(10) as usize),
            "label-conflict" => gen_label_conflict(),
            "planted-random" => gen_planted(clusters.unwrap_or(3), spread, n, dim, seed)?,
            other => bail!("spec line {}: unknown family {other:?}", lineno + 1),
        };
        let mut cfg = EngineConfig::new(inst.k, inst.budget);
        cfg.solver = pick_solver(SolverArg::Auto, &inst.store(), inst.k, cfg.exact_cap);
        let res = run_engine_over(
            Geometry::Euclidean {
                kind: inst.kind,
                dim: inst.dim,
            },
            cfg,
            Some(&inst.points),
        )?;
        let s = &res.summary;
        // The baseline columns are filled for the trap family it exists for.
        let (greedy_labels, greedy_cost) = if family == "fig1" {
            let mut g = GreedyBaseline::new(
                inst.k,
                inst.budget,
                Geometry::Euclidean {
                    kind: inst.kind,
                    dim: inst.dim,
                },
            )?;
            for p in &inst.points {
                g.step_coords(p)?;
            }
            (g.label_count().to_string(), format!("{}", g.cost()))
        } else {
            (String::new(), String::new())
        };
        rows.push(format!(
            "{family},{},{},{spread},{},{dim},{seed},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{greedy_labels},{greedy_cost}",
            alpha.map(|a| a.to_string()).unwrap_or_default(),
            clusters.map(|c| c.to_string()).unwrap_or_default(),
            inst.n(),
            s.k,
            s.b_user,
            s.b_eff,
            s.labels_used,
            s.phases,
            s.add_counts[0],
            s.add_counts[1],
            s.add_counts[2],
            s.add_counts[3],
            s.exchange_counts[0],
            s.exchange_counts[1],
            s.exchange_counts[2],
            s.exchange_counts[3],
            s.exchange_counts[4],
            s.final_cost,
            s.cost_over_b_eff,
        ));
    }
    let csv = rows.join("\n") + "\n";
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}
