use serde::{Deserialize, Serialize};

use super::{Ecdf, IntegrationMode, LatencySample, MetricsError};

/// Distance between a baseline and an altered latency distribution.
///
/// `Infinite` marks an altered run that lost liveness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SensitivityScore {
    Finite(f64),
    Infinite,
}

impl SensitivityScore {
    pub fn is_infinite(&self) -> bool {
        matches!(self, SensitivityScore::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            SensitivityScore::Finite(v) => Some(v),
            SensitivityScore::Infinite => None,
        }
    }

    /// Finite value, or `f64::INFINITY`; handy for ordering.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub mode: IntegrationMode,
    /// Integrate both eCDFs over the union of their supports instead of
    /// each over its own, making the score sensitive to pure shifts.
    pub common_support: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreWarning {
    /// The altered run committed nothing yet was not flagged as halted.
    NoAlteredSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub baseline_area: f64,
    pub altered_area: Option<f64>,
    pub score: SensitivityScore,
    pub mode: IntegrationMode,
    pub common_support: bool,
    pub warning: Option<ScoreWarning>,
}

/// `|S1(b1) - S2(b2)|` with exact integration, or `Infinite` when the
/// altered run halted.
pub fn sensitivity_score(
    baseline: &[LatencySample],
    altered: &[LatencySample],
    altered_halted: bool,
) -> Result<SensitivityScore, MetricsError> {
    score_with(baseline, altered, altered_halted, ScoreOptions::default()).map(|r| r.score)
}

pub fn score_with(
    baseline: &[LatencySample],
    altered: &[LatencySample],
    altered_halted: bool,
    opts: ScoreOptions,
) -> Result<ScoreReport, MetricsError> {
    let base = Ecdf::new(baseline)?;
    let alt = if altered.is_empty() { None } else { Some(Ecdf::new(altered)?) };

    let (baseline_area, altered_area) = match (&alt, opts.common_support) {
        (Some(alt), true) => {
            let lo = base.min().min(alt.min());
            let hi = base.max().max(alt.max());
            (
                base.super_cumulative_over(lo, hi, opts.mode)?.area,
                Some(alt.super_cumulative_over(lo, hi, opts.mode)?.area),
            )
        }
        (Some(alt), false) => (
            base.super_cumulative(opts.mode)?.area,
            Some(alt.super_cumulative(opts.mode)?.area),
        ),
        (None, _) => (base.super_cumulative(opts.mode)?.area, None),
    };

    let (score, warning) = match altered_area {
        _ if altered_halted => (SensitivityScore::Infinite, None),
        None => (SensitivityScore::Infinite, Some(ScoreWarning::NoAlteredSamples)),
        Some(a) => {
            let d = baseline_area - a;
            (SensitivityScore::Finite(if d < 0.0 { -d } else { d }), None)
        }
    };

    Ok(ScoreReport {
        baseline_area,
        altered_area,
        score,
        mode: opts.mode,
        common_support: opts.common_support,
        warning,
    })
}
