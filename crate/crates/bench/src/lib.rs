//! Experiment runner on top of `sensibench-core`: TOML configs, run
//! directories, score reports, suites and a local multi-threaded live mode.

pub mod artifacts;
pub mod config;
pub mod live;
pub mod score;
pub mod suite;

use std::path::PathBuf;

pub use artifacts::{Manifest, RunData};
pub use config::{ExperimentConfig, Mode};
pub use score::{score_runs, ScoreFile};
pub use suite::{run_suite, SuiteReport};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("live agent failure: {0}")]
    LiveAgent(String),
    #[error("workload mismatch: baseline {baseline} vs altered {altered}")]
    WorkloadMismatch { baseline: String, altered: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    BadArtifact { path: PathBuf, msg: String },
    #[error(transparent)]
    Metrics(#[from] sensibench_core::metrics::MetricsError),
    #[error("simulation failed: {0}")]
    Run(#[from] sensibench_core::experiment::RunError),
}

impl BenchError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::LiveAgent(_) => 3,
            BenchError::WorkloadMismatch { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}

/// Runs `cfg` in its configured mode and writes the run directory.
pub fn run(cfg: &ExperimentConfig, out: &std::path::Path) -> Result<Manifest, BenchError> {
    let spec = cfg.spec()?;
    let window = cfg.window()?;
    let outcome = match cfg.run.mode {
        Mode::Sim => sensibench_core::experiment::run(&spec)?,
        Mode::LiveLocal => live::run(&spec)?,
    };
    artifacts::write_run(out, cfg, &spec, &outcome, window)
}
