//! Command-line experiments, file formats and a deterministic parallel runner
//! on top of [`depauw_core`].
//!
//! Every experiment is a pure function of its resolved configuration and seed:
//! work is split into fixed-size chunks whose partial results are merged in
//! index order, so outputs do not depend on the number of worker threads.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, ResolvedConfig};
pub use error::{Error, Result};
pub use experiments::{run, Outcome};
pub use runner::Runner;
