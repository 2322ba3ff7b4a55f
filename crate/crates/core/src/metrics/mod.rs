//! Latency-distribution analytics.
//!
//! The sensitivity of a system to a fault is the absolute difference between
//! the areas under the empirical CDFs of two latency distributions: one
//! measured without faults, one with. Each area (the *super-cumulative*) is
//! integrated over its own support `[min, max]`, so for a step eCDF it has
//! the closed form `max - mean`.

mod ecdf;
mod score;
mod throughput;

pub use ecdf::{Ecdf, IntegrationMode, SuperCumulative};
pub use score::{
    score_with, sensitivity_score, ScoreOptions, ScoreReport, ScoreWarning, SensitivityScore,
};
pub use throughput::{recovery_time, throughput_series, Recovery, ThroughputSeries};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("latency sample set is empty")]
    EmptySampleSet,
    #[error("latency sample {0} is negative or not finite")]
    InvalidSample(f64),
    #[error("throughput window must be positive")]
    NonPositiveWindow,
    #[error("grid step {0} must be positive and finite")]
    InvalidGridStep(f64),
    #[error("grid of {points} points exceeds the evaluation limit")]
    GridTooFine { points: u64 },
}

/// One committed transaction's latency, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LatencySample(f64);

impl LatencySample {
    pub fn new(seconds: f64) -> Result<Self, MetricsError> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(LatencySample(seconds))
        } else {
            Err(MetricsError::InvalidSample(seconds))
        }
    }

    pub fn from_micros(us: u64) -> Self {
        LatencySample(us as f64 / 1e6)
    }

    pub fn seconds(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for LatencySample {
    type Error = MetricsError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        LatencySample::new(v)
    }
}

impl From<LatencySample> for f64 {
    fn from(s: LatencySample) -> f64 {
        s.0
    }
}

/// Convenience for tests and callers holding plain seconds.
pub fn samples(values: &[f64]) -> Result<alloc::vec::Vec<LatencySample>, MetricsError> {
    values.iter().map(|&v| LatencySample::new(v)).collect()
}
