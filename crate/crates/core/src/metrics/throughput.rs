use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::SimTime;

/// Commits per fixed window, indexed from the start of the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThroughputSeries {
    pub window: Duration,
    pub counts: Vec<u64>,
}

impl ThroughputSeries {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn window_start(&self, index: usize) -> SimTime {
        SimTime::from_micros(self.window.as_micros() as u64 * index as u64)
    }

    /// Commits per second in window `index`.
    pub fn rate(&self, index: usize) -> f64 {
        self.counts[index] as f64 / self.window.as_secs_f64()
    }
}

/// Buckets commit times into `[i*window, (i+1)*window)` windows covering at
/// least `[0, run_end)`.
pub fn throughput_series<I>(
    commit_times: I,
    window: Duration,
    run_end: SimTime,
) -> Result<ThroughputSeries, MetricsError>
where
    I: IntoIterator<Item = SimTime>,
{
    let w = window.as_micros() as u64;
    if w == 0 {
        return Err(MetricsError::NonPositiveWindow);
    }
    let mut counts = vec![0u64; run_end.as_micros().div_ceil(w) as usize];
    for t in commit_times {
        let i = (t.as_micros() / w) as usize;
        if i >= counts.len() {
            counts.resize(i + 1, 0);
        }
        counts[i] += 1;
    }
    Ok(ThroughputSeries { window, counts })
}

/// Outcome of [`recovery_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    After(Duration),
    Never,
}

impl Recovery {
    pub fn as_secs_f64(&self) -> f64 {
        match self {
            Recovery::After(d) => d.as_secs_f64(),
            Recovery::Never => f64::INFINITY,
        }
    }
}

/// Number of consecutive windows that must meet the threshold.
const SUSTAIN_WINDOWS: usize = 3;

/// Time from `fault_end` to the start of the first window (starting at or
/// after `fault_end`) that begins a run of three windows each carrying at
/// least `threshold_fraction * nominal_rate` commits per second.
pub fn recovery_time(
    series: &ThroughputSeries,
    fault_end: SimTime,
    nominal_rate: f64,
    threshold_fraction: f64,
) -> Recovery {
    let w = series.window.as_micros() as u64;
    if w == 0 {
        return Recovery::Never;
    }
    let target = threshold_fraction * nominal_rate;
    let first = fault_end.as_micros().div_ceil(w) as usize;
    let n = series.counts.len();
    (first..n.saturating_sub(SUSTAIN_WINDOWS - 1))
        .find(|&i| (i..i + SUSTAIN_WINDOWS).all(|j| series.rate(j) >= target))
        .map_or(Recovery::Never, |i| {
            Recovery::After(series.window_start(i).saturating_since(fault_end))
        })
}
