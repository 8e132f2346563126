//! Command-line front end: experiment runs, condition checks and topology
//! inspection.

mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use fedsim::conditions::{self, ConditionReport};
use fedsim::engine::{Algorithm, Simulation};
use fedsim::metrics::Trajectory;
use fedsim::topology::{make_topology, TopologyKind};
use spec::{build_run, ExperimentSpec, LrSpec, ResolvedCell};

#[derive(Parser)]
#[command(name = "fedsim", about = "Local descent with periodic averaging: simulator and condition checkers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment spec (single run, seed ensemble or sweep).
    Run {
        /// Path to the experiment JSON.
        spec: PathBuf,
        /// Parallel worker count (default: env FEDSIM_WORKERS, then all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate one admissibility condition and print the report as JSON.
    Check(CheckArgs),
    /// Build a mixing matrix, print its spectral gap, optionally dump it.
    Topology {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        self_weight: Option<f64>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the dense matrix as CSV rows.
        #[arg(long)]
        dump: bool,
    },
}

#[derive(Args)]
struct CheckArgs {
    /// Which condition: lfgd | lfsgd-pl | lfsgd | nfsgd.
    #[arg(long)]
    theorem: String,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    e: Option<u64>,
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    p: Option<u64>,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Use the tighter condition-number form (lfgd) or additionally check
    /// the large-E technical inequalities (lfsgd-pl; needs --l and --c1).
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, workers } => match cmd_run(&spec, workers) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
        Command::Check(args) => match cmd_check(&args) {
            Ok(satisfied) => {
                if satisfied {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
        Command::Topology {
            kind,
            p,
            self_weight,
            radius,
            seed,
            dump,
        } => match cmd_topology(&kind, p, self_weight, radius, seed, dump) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}

fn require(arg: Option<f64>, name: &str) -> anyhow::Result<f64> {
    arg.ok_or_else(|| anyhow!("missing required constant --{name}"))
}

fn require_int(arg: Option<u64>, name: &str) -> anyhow::Result<u64> {
    arg.ok_or_else(|| anyhow!("missing required constant --{name}"))
}

fn cmd_check(args: &CheckArgs) -> anyhow::Result<bool> {
    let satisfied = match args.theorem.as_str() {
        "lfgd" => {
            let eta = require(args.eta, "eta")?;
            let e = require_int(args.e, "e")?;
            let l = require(args.l, "l")?;
            let mu = require(args.mu, "mu")?;
            let lambda = require(args.lambda, "lambda")?;
            let rep = if args.strict {
                conditions::check_lfgd_strict(eta, e, l, mu, lambda)?
            } else {
                conditions::check_lfgd(eta, e, l, mu, lambda)?
            };
            println!("{}", serde_json::to_string_pretty(&rep)?);
            rep.satisfied
        }
        "lfsgd-pl" => {
            let alpha = require(args.alpha, "alpha")?;
            let e = require_int(args.e, "e")?;
            let k = require_int(args.k, "k")?;
            let lambda = require(args.lambda, "lambda")?;
            let kappa = require(args.kappa, "kappa")?;
            let rep = conditions::check_lfsgd_pl(alpha, e, k, lambda, kappa)?;
            let mut satisfied = rep.satisfied;
            if args.strict {
                let l = require(args.l, "l")?;
                let c1 = require(args.c1, "c1")?;
                let strict_ok =
                    conditions::lfsgd_pl_strict_inequalities(alpha, e, k, l, l / kappa, c1);
                satisfied = satisfied && strict_ok;
                let mut value = serde_json::to_value(&rep)?;
                value["strict_satisfied"] = serde_json::Value::Bool(strict_ok);
                println!("{}", serde_json::to_string_pretty(&value)?);
            } else {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            }
            satisfied
        }
        "lfsgd" => {
            let eta = require(args.eta, "eta")?;
            let e = require_int(args.e, "e")?;
            let k = require_int(args.k, "k")?;
            let l = require(args.l, "l")?;
            let lambda = require(args.lambda, "lambda")?;
            let c1 = args.c1.unwrap_or(0.0);
            let rep = conditions::check_lfsgd_nonconvex(eta, e, k, l, lambda, c1)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            rep.satisfied
        }
        "nfsgd" => {
            let eta = require(args.eta, "eta")?;
            let e = require_int(args.e, "e")?;
            let p = require_int(args.p, "p")?;
            let l = require(args.l, "l")?;
            let lambda = require(args.lambda, "lambda")?;
            let zeta = require(args.zeta, "zeta")?;
            let c1 = args.c1.unwrap_or(0.0);
            let rep = conditions::check_nfsgd_full(eta, e, p, l, lambda, c1, zeta)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            rep.base.satisfied
        }
        other => {
            return Err(anyhow!(
                "unknown theorem '{other}' (expected lfgd | lfsgd-pl | lfsgd | nfsgd)"
            ))
        }
    };
    Ok(satisfied)
}

fn cmd_topology(
    kind: &str,
    p: usize,
    self_weight: Option<f64>,
    radius: Option<f64>,
    seed: u64,
    dump: bool,
) -> anyhow::Result<()> {
    let kind = match kind {
        "complete" => TopologyKind::Complete,
        "ring" => TopologyKind::Ring {
            self_weight: self_weight.ok_or_else(|| anyhow!("ring topology needs --self-weight"))?,
        },
        "random-geometric" | "random_geometric" => TopologyKind::RandomGeometric {
            radius: radius.ok_or_else(|| anyhow!("random-geometric topology needs --radius"))?,
            seed,
        },
        other => return Err(anyhow!("unknown topology kind '{other}'")),
    };
    let w = make_topology(&kind, p)?;
    let mut report = serde_json::to_value(&kind)?;
    report["p"] = serde_json::json!(p);
    report["zeta"] = serde_json::json!(w.zeta());
    println!("{report}");
    if dump {
        print!("{}", w.to_csv());
    }
    Ok(())
}

#[derive(Serialize)]
struct RunArtifact {
    config_hash: String,
    csv: String,
    summary: String,
    cached: bool,
    diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_measured: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_checked: Option<f64>,
    /// Set when the trajectory's measured diversity exceeded the lambda the
    /// condition report was evaluated with.
    lambda_exceeded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition: Option<ConditionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition_note: Option<String>,
    config: ResolvedCell,
}

#[derive(Serialize)]
struct Manifest {
    spec: ExperimentSpec,
    runs: Vec<RunArtifact>,
}

fn cmd_run(spec_path: &Path, workers: Option<usize>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read spec {}", spec_path.display()))?;
    let spec: ExperimentSpec = serde_json::from_str(&text).context("cannot parse spec JSON")?;
    spec.validate().map_err(|e| anyhow!(e))?;

    let workers = workers
        .or_else(|| {
            std::env::var("FEDSIM_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(num_cpus);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("cannot build worker pool")?;

    let out_dir = PathBuf::from(&spec.output_dir);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output dir {}", out_dir.display()))?;

    let cells = spec.cells().map_err(|e| anyhow!(e))?;
    let lambda_cfg = spec.lambda;
    let c1_cfg = spec.c1;

    let results: Vec<anyhow::Result<RunArtifact>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| execute_cell(cell, &out_dir, lambda_cfg, c1_cfg))
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }

    for run in &runs {
        let flag = if run.cached {
            "cache hit"
        } else if run.diverged {
            "diverged"
        } else {
            "ok"
        };
        println!("{}  {}  {}", run.config_hash, flag, run.csv);
    }

    let manifest = Manifest { spec, runs };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("cannot write {}", manifest_path.display()))?;
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn config_hash(cell: &ResolvedCell) -> anyhow::Result<String> {
    let canonical = serde_json::to_string(cell)?;
    let digest = Sha256::digest(canonical.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(hex[..16].to_string())
}

fn execute_cell(
    cell: &ResolvedCell,
    out_dir: &Path,
    lambda_cfg: Option<f64>,
    c1_cfg: f64,
) -> anyhow::Result<RunArtifact> {
    let hash = config_hash(cell)?;
    let csv_path = out_dir.join(format!("{hash}.csv"));
    let summary_path = out_dir.join(format!("{hash}.json"));

    let (problem, config, topology) = build_run(cell).map_err(|e| anyhow!(e))?;
    let cached = csv_path.exists() && summary_path.exists();

    // The simulation is deterministic, so on a cache hit it is re-executed
    // only to rebuild the manifest row; the content-addressed files are
    // never overwritten.
    let trajectory: Trajectory = Simulation::new(&problem, config)?.run()?;
    if !cached {
        std::fs::write(&csv_path, trajectory.to_csv())?;
        let summary = trajectory.summary(&hash);
        std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    }

    let lambda_measured = trajectory
        .records
        .iter()
        .filter_map(|r| r.diversity)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    let lambda_checked = lambda_cfg.or(lambda_measured).map(|v| v.max(1.0));
    let (condition, condition_note) = evaluate_condition(
        cell,
        &problem,
        topology.as_ref().map(|t| t.zeta()),
        lambda_checked,
        c1_cfg,
    );
    let lambda_exceeded = match (lambda_checked, lambda_measured) {
        (Some(checked), Some(measured)) => measured > checked,
        _ => false,
    };

    Ok(RunArtifact {
        config_hash: hash,
        csv: csv_path.display().to_string(),
        summary: summary_path.display().to_string(),
        cached,
        diverged: trajectory.diverged(),
        lambda_measured,
        lambda_checked,
        lambda_exceeded,
        condition,
        condition_note,
        config: cell.clone(),
    })
}

/// Evaluates the matching admissibility condition for one run, when the
/// needed constants are available.
fn evaluate_condition(
    cell: &ResolvedCell,
    problem: &fedsim::FederatedProblem,
    zeta: Option<f64>,
    lambda: Option<f64>,
    c1: f64,
) -> (Option<ConditionReport>, Option<String>) {
    let l = problem.smoothness();
    let e = cell.run.e as u64;
    let k = cell.run.k as u64;
    let lambda = match lambda {
        Some(v) => v,
        None => {
            return (
                None,
                Some(
                    "no diversity bound available (degenerate trajectory and no lambda in spec)"
                        .into(),
                ),
            )
        }
    };
    let result = match (cell.run.algorithm, &cell.run.lr) {
        (Algorithm::Lfgd, LrSpec::Constant { eta }) => match problem.pl_constant() {
            Some(mu) => conditions::check_lfgd(*eta, e, l, mu, lambda)
                .map(Some)
                .map_err(|err| err.to_string()),
            None => Err("problem has no PL constant; full-gradient condition skipped".into()),
        },
        (Algorithm::Lfsgd, LrSpec::PlDecay { alpha }) => match problem.pl_constant() {
            Some(mu) => conditions::check_lfsgd_pl(*alpha, e, k, lambda, (l / mu).max(1.0))
                .map(Some)
                .map_err(|err| err.to_string()),
            None => Err("problem has no PL constant; decaying-rate condition skipped".into()),
        },
        (Algorithm::Lfsgd, LrSpec::Constant { eta }) => {
            conditions::check_lfsgd_nonconvex(*eta, e, k, l, lambda, c1)
                .map(Some)
                .map_err(|err| err.to_string())
        }
        (Algorithm::Nfsgd, LrSpec::Constant { eta }) => match zeta {
            Some(z) => conditions::check_nfsgd(*eta, e, cell.problem.p as u64, l, lambda, c1, z)
                .map(Some)
                .map_err(|err| err.to_string()),
            None => Err("networked run without topology; condition skipped".into()),
        },
        (Algorithm::Lfgd, LrSpec::PlDecay { .. }) | (Algorithm::Nfsgd, LrSpec::PlDecay { .. }) => {
            Err("decaying rate applies only to the stochastic server variant".into())
        }
    };
    match result {
        Ok(rep) => (rep, None),
        Err(note) => (None, Some(note)),
    }
}
