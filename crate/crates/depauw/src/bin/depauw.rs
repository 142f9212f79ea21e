use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depauw::config::Levels;
use depauw::{ExperimentConfig, ExperimentKind, Runner};
use depauw_core::Dyadic;

/// Experiments on the Depauw field: exact flows, checkerboard transport,
/// mollified selection and stochasticity of the selected flow.
#[derive(Debug, Parser)]
#[command(name = "depauw", version)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: depauw-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stream-table cache directory (default: <out>/cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the exact and mollified fields and check their basic properties.
    Field(FieldArgs),
    /// Transport the checkerboard densities backward in time.
    Density(DensityArgs),
    /// Generate a backward path ensemble.
    Trace(TraceArgs),
    /// Compare ensembles across mollification radii.
    Converge(ConvergeArgs),
    /// Conditional endpoint laws of the exact flow.
    Stochasticity(StochasticityArgs),
    /// Exact trajectories from given points.
    Flow(FlowArgs),
    /// Run the experiment named in the config file.
    Run,
}

#[derive(Debug, Args)]
struct FieldArgs {
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    check_points: Option<u64>,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[arg(long)]
    depth: Option<u32>,
    /// Check the exact recursion and the pointwise properties.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    export_level: Option<u32>,
    #[arg(long)]
    heatmap_level: Option<u32>,
    /// Monte Carlo samples per test function for the weak residual (0: skip).
    #[arg(long)]
    residual_samples: Option<u64>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    depth: Option<u32>,
    /// Trace on the mollified field of this radius instead of the exact flow.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    t_end: Option<Dyadic>,
    #[arg(long)]
    substeps: Option<u32>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Compare RK4 with the exact flow on random points.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    oracle_points: Option<u64>,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    sup_paths: Option<u64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    t_end: Option<Dyadic>,
}

#[derive(Debug, Args)]
struct StochasticityArgs {
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    n: Option<u64>,
    /// Start and target cell levels, `m,n`.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<Levels>,
}

#[derive(Debug, Args)]
struct FlowArgs {
    /// Start point `x1,x2` (dyadic); repeatable.
    #[arg(long = "point", value_parser = parse_point)]
    points: Vec<[Dyadic; 2]>,
    #[arg(long)]
    t_start: Option<Dyadic>,
    #[arg(long)]
    t_end: Option<Dyadic>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    substeps: Option<u32>,
}

fn parse_levels(s: &str) -> Result<Levels, String> {
    let (a, b) = s.split_once(',').ok_or("expected m,n")?;
    let p = |x: &str| x.trim().parse::<u32>().map_err(|e| e.to_string());
    Ok(Levels { start: p(a)?, target: p(b)? })
}

fn parse_point(s: &str) -> Result<[Dyadic; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected x1,x2")?;
    let p = |x: &str| x.parse::<Dyadic>().map_err(|e| e.to_string());
    Ok([p(a)?, p(b)?])
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl Command {
    fn overrides(self) -> (Option<ExperimentKind>, ExperimentConfig) {
        let d = ExperimentConfig::default();
        match self {
            Command::Field(a) => (
                Some(ExperimentKind::Field),
                ExperimentConfig { depth: a.depth, eps: a.eps, resolution: a.resolution, check_points: a.check_points, ..d },
            ),
            Command::Density(a) => (
                Some(ExperimentKind::Density),
                ExperimentConfig {
                    depth: a.depth,
                    check: flag(a.check),
                    export_level: a.export_level,
                    heatmap_level: a.heatmap_level,
                    residual_samples: a.residual_samples,
                    ..d
                },
            ),
            Command::Trace(a) => (
                Some(ExperimentKind::Trace),
                ExperimentConfig {
                    n: a.n,
                    depth: a.depth,
                    eps: a.eps,
                    step: a.step,
                    t_end: a.t_end,
                    substeps: a.substeps,
                    record_every: a.record_every,
                    oracle: flag(a.oracle),
                    oracle_points: a.oracle_points,
                    ..d
                },
            ),
            Command::Converge(a) => (
                Some(ExperimentKind::Converge),
                ExperimentConfig { eps: a.eps, n: a.n, sup_paths: a.sup_paths, step: a.step, t_end: a.t_end, ..d },
            ),
            Command::Stochasticity(a) => (
                Some(ExperimentKind::Stochasticity),
                ExperimentConfig { depth: a.depth, n: a.n, levels: a.levels, ..d },
            ),
            Command::Flow(a) => (
                Some(ExperimentKind::Flow),
                ExperimentConfig {
                    points: (!a.points.is_empty()).then_some(a.points),
                    t_start: a.t_start,
                    t_end: a.t_end,
                    depth: a.depth,
                    substeps: a.substeps,
                    ..d
                },
            ),
            Command::Run => (None, d),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> depauw::Result<i32> {
    let file = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let is_run = matches!(cli.command, Command::Run);
    if is_run && cli.config.is_none() {
        return Err(depauw::Error::Usage("`run` needs --config".into()));
    }
    let (kind, mut flags) = cli.command.overrides();
    if let (Some(k), Some(f)) = (kind, file.experiment) {
        if k != f {
            return Err(depauw::Error::config(
                "experiment",
                format!("config names `{}` but the subcommand is `{}`", f.name(), k.name()),
            ));
        }
    }
    flags.experiment = kind;
    flags.seed = cli.seed;
    flags.out = cli.out;
    flags.cache = cli.cache;
    let merged = file.overlay(flags);
    let resolved = merged.resolve()?;
    let out = merged.out.clone().unwrap_or_else(|| PathBuf::from("depauw-out"));
    let cache = merged.cache.clone().unwrap_or_else(|| out.join("cache"));
    let runner = Runner::new(cli.workers)?;
    eprintln!("{}", serde_json::to_string(&resolved)?);
    let outcome = depauw::run(&resolved, &out, Some(&cache), &runner)?;
    for c in &outcome.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(outcome.exit_code())
}
