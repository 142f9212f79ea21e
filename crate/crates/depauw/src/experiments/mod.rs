//! The canonical experiments behind the `depauw` subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Params, ResolvedConfig};
use crate::error::Result;
use crate::io::{self, Stamp, TableCache};
use crate::runner::Runner;

pub mod converge;
pub mod density;
pub mod field;
pub mod flow;
pub mod stochasticity;
pub mod trace;

/// One pass/fail invariant with a human-readable measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Shared state of a single run.
#[derive(Debug)]
pub struct Context<'a> {
    pub config: &'a ResolvedConfig,
    pub stamp: Stamp,
    pub out: PathBuf,
    pub cache: Option<TableCache>,
    pub runner: &'a Runner,
    files: Vec<PathBuf>,
}

impl Context<'_> {
    /// Registers an output file name under the output directory.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn write_report<R: Serialize>(&mut self, name: &str, report: &R) -> Result<()> {
        let path = self.file(name);
        io::write_json(&path, &self.stamp, self.config, report)
    }
}

/// Runs the configured experiment, writing outputs under `out`. When a check
/// fails, `failure.json` lists the failing checks.
pub fn run(config: &ResolvedConfig, out: &Path, cache: Option<&Path>, runner: &Runner) -> Result<Outcome> {
    io::ensure_dir(out)?;
    let stamp = Stamp { config_hash: config.hash(), seed: config.seed };
    let mut ctx = Context {
        config,
        stamp: stamp.clone(),
        out: out.to_path_buf(),
        cache: cache.map(TableCache::new),
        runner,
        files: Vec::new(),
    };
    let checks = match &config.params {
        Params::Field(p) => field::run(&mut ctx, p)?,
        Params::Density(p) => density::run(&mut ctx, p)?,
        Params::Trace(p) => trace::run(&mut ctx, p)?,
        Params::Converge(p) => converge::run(&mut ctx, p)?,
        Params::Stochasticity(p) => stochasticity::run(&mut ctx, p)?,
        Params::Flow(p) => flow::run(&mut ctx, p)?,
    };
    let mut outcome = Outcome {
        experiment: config.experiment.name().to_string(),
        config_hash: stamp.config_hash,
        seed: stamp.seed,
        checks,
        files: Vec::new(),
    };
    let failure = out.join("failure.json");
    if outcome.passed() {
        if failure.exists() {
            std::fs::remove_file(&failure).map_err(|e| crate::Error::io(&failure, e))?;
        }
    } else {
        let failed: Vec<&Check> = outcome.checks.iter().filter(|c| !c.passed).collect();
        ctx.write_report("failure.json", &failed)?;
    }
    outcome.files = ctx.files;
    Ok(outcome)
}

/// `f64` for CSV cells: shortest representation that round-trips.
pub(crate) fn num(x: f64) -> String {
    format!("{x:?}")
}
