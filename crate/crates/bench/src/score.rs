//! Scores a pair of persisted runs.

use std::path::Path;

use sensibench_core::metrics::{samples, score_with, IntegrationMode, ScoreOptions, ScoreWarning};
use serde::{Deserialize, Serialize};

use crate::artifacts::RunData;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub baseline_area: f64,
    pub altered_area: Option<f64>,
    /// `None` when infinite.
    pub score: Option<f64>,
    pub infinite: bool,
    pub mode: String,
    pub grid_step_s: Option<f64>,
    pub common_support: bool,
    pub warning: Option<ScoreWarning>,
    pub baseline: String,
    pub altered: String,
}

impl ScoreFile {
    /// Score as a number, with infinity for a halted run.
    pub fn value(&self) -> f64 {
        self.score.unwrap_or(f64::INFINITY)
    }
}

/// Scores `altered` against `baseline`. Both runs must have the same
/// workload hash.
pub fn score_runs(baseline: &RunData, altered: &RunData, opts: ScoreOptions) -> Result<ScoreFile, BenchError> {
    if baseline.manifest.workload_hash != altered.manifest.workload_hash {
        return Err(BenchError::WorkloadMismatch {
            baseline: baseline.manifest.workload_hash.clone(),
            altered: altered.manifest.workload_hash.clone(),
        });
    }
    let b = samples(&baseline.latencies())?;
    let a = samples(&altered.latencies())?;
    let r = score_with(&b, &a, altered.halted(), opts)?;
    Ok(ScoreFile {
        baseline_area: r.baseline_area,
        altered_area: r.altered_area,
        score: r.score.finite(),
        infinite: r.score.is_infinite(),
        mode: r.mode.name().to_string(),
        grid_step_s: r.mode.grid_step(),
        common_support: r.common_support,
        warning: r.warning,
        baseline: baseline.dir.display().to_string(),
        altered: altered.dir.display().to_string(),
    })
}

pub fn score_dirs(baseline: &Path, altered: &Path, opts: ScoreOptions) -> Result<ScoreFile, BenchError> {
    score_runs(&RunData::load(baseline)?, &RunData::load(altered)?, opts)
}

/// Options from CLI-style arguments; the grid step is in milliseconds.
pub fn options(mode: &str, grid_step_ms: Option<f64>, common_support: bool) -> Result<ScoreOptions, BenchError> {
    let mode = match mode {
        "exact" => IntegrationMode::Exact,
        "grid" => {
            let step = grid_step_ms.map_or(IntegrationMode::DEFAULT_GRID_STEP, |ms| ms / 1000.0);
            if !(step.is_finite() && step > 0.0) {
                return Err(BenchError::Config(format!("grid step {step} s must be positive")));
            }
            IntegrationMode::Grid { step }
        }
        other => return Err(BenchError::Config(format!("unknown score mode {other:?}"))),
    };
    Ok(ScoreOptions { mode, common_support })
}
