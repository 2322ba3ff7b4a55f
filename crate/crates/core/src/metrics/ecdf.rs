use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LatencySample, MetricsError};

/// Upper bound on grid evaluations in [`IntegrationMode::Grid`].
const MAX_GRID_POINTS: u64 = 200_000_000;

/// Empirical CDF over a non-empty sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[LatencySample]) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::EmptySampleSet);
        }
        let mut sorted: Vec<f64> = samples.iter().map(|s| s.seconds()).collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `F(x)`: the fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.sorted.partition_point(|&s| s <= x);
        count as f64 / self.sorted.len() as f64
    }

    /// Step corners `(x, F(x))`, one per distinct sample value.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let m = self.sorted.len() as f64;
        self.sorted.iter().enumerate().filter_map(move |(i, &x)| {
            let last_of_run = self.sorted.get(i + 1).map_or(true, |&next| next > x);
            last_of_run.then(|| (x, (i + 1) as f64 / m))
        })
    }

    pub fn super_cumulative(&self, mode: IntegrationMode) -> Result<SuperCumulative, MetricsError> {
        self.super_cumulative_over(self.min(), self.max(), mode)
    }

    /// Area under the eCDF over `[lo, hi]`. `lo` below the support adds
    /// nothing, `hi` above it adds `hi - max` (the CDF is 1 there).
    pub fn super_cumulative_over(
        &self,
        lo: f64,
        hi: f64,
        mode: IntegrationMode,
    ) -> Result<SuperCumulative, MetricsError> {
        let area = match mode {
            IntegrationMode::Exact => self.step_area() + (hi - self.max()).max(0.0),
            IntegrationMode::Grid { step } => {
                if !(step.is_finite() && step > 0.0) {
                    return Err(MetricsError::InvalidGridStep(step));
                }
                let span = hi - lo;
                let last = if span > 0.0 { (span / step) as u64 } else { 0 };
                if last >= MAX_GRID_POINTS {
                    return Err(MetricsError::GridTooFine { points: last + 1 });
                }
                // Grid points are computed, not accumulated, to keep the
                // rounding error independent of the point count.
                let sum: f64 = (0..=last).map(|j| self.eval(lo + j as f64 * step)).sum();
                step * sum
            }
        };
        Ok(SuperCumulative { area: area.max(0.0) })
    }

    /// Exact integral of the step function over `[min, max]`:
    /// sum over i of `(i/m) * (x_(i+1) - x_(i))`.
    fn step_area(&self) -> f64 {
        let m = self.sorted.len() as f64;
        self.sorted
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i + 1) as f64 / m * (w[1] - w[0]))
            .sum()
    }
}

/// How the area under an eCDF is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Closed-form integral of the step function; parameter free.
    Exact,
    /// `step * sum F(a + j*step)` for grid points in the support.
    Grid { step: f64 },
}

impl IntegrationMode {
    pub const DEFAULT_GRID_STEP: f64 = 1e-3;

    pub fn name(&self) -> &'static str {
        match self {
            IntegrationMode::Exact => "exact",
            IntegrationMode::Grid { .. } => "grid",
        }
    }

    pub fn grid_step(&self) -> Option<f64> {
        match *self {
            IntegrationMode::Exact => None,
            IntegrationMode::Grid { step } => Some(step),
        }
    }
}

impl Default for IntegrationMode {
    fn default() -> Self {
        IntegrationMode::Exact
    }
}

/// Area under an eCDF, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SuperCumulative {
    pub area: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::samples;

    fn ecdf(v: &[f64]) -> Ecdf {
        Ecdf::new(&samples(v).unwrap()).unwrap()
    }

    #[test]
    fn eval_matches_definition() {
        let e = ecdf(&[3.0, 1.0, 2.0]);
        assert_eq!(e.sorted(), &[1.0, 2.0, 3.0]);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(1.0), 1.0 / 3.0);
        assert_eq!(e.eval(2.0), 2.0 / 3.0);
        assert_eq!(e.eval(2.9), 2.0 / 3.0);
        assert_eq!(e.eval(3.0), 1.0);
    }

    #[test]
    fn point_mass() {
        let e = ecdf(&[5.0; 4]);
        assert_eq!((e.min(), e.max()), (5.0, 5.0));
        assert_eq!(e.eval(5.0), 1.0);
        assert_eq!(e.super_cumulative(IntegrationMode::Exact).unwrap().area, 0.0);
        assert_eq!(e.points().collect::<Vec<_>>(), vec![(5.0, 1.0)]);
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(Ecdf::new(&[]), Err(MetricsError::EmptySampleSet));
    }

    #[test]
    fn single_sample_has_zero_area() {
        let e = ecdf(&[0.7]);
        assert_eq!(e.super_cumulative(IntegrationMode::Exact).unwrap().area, 0.0);
        let g = e.super_cumulative(IntegrationMode::Grid { step: 1e-3 }).unwrap().area;
        assert!((g - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn exact_areas() {
        let a = ecdf(&[1.0, 2.0, 3.0]).super_cumulative(IntegrationMode::Exact).unwrap();
        assert!((a.area - 1.0).abs() < 1e-12);
        let b = ecdf(&[1.0, 1.0, 1.0, 10.0]).super_cumulative(IntegrationMode::Exact).unwrap();
        assert!((b.area - 6.75).abs() < 1e-12);
    }

    #[test]
    fn common_support_extends_with_ones() {
        let e = ecdf(&[1.0, 2.0, 3.0]);
        let wide = e.super_cumulative_over(0.0, 5.0, IntegrationMode::Exact).unwrap();
        assert!((wide.area - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_grid_steps() {
        let e = ecdf(&[1.0, 2.0]);
        for step in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                e.super_cumulative(IntegrationMode::Grid { step }),
                Err(MetricsError::InvalidGridStep(_))
            ));
        }
        assert!(matches!(
            ecdf(&[0.0, 1e6]).super_cumulative(IntegrationMode::Grid { step: 1e-6 }),
            Err(MetricsError::GridTooFine { .. })
        ));
    }

    #[test]
    fn points_collapse_ties() {
        let e = ecdf(&[1.0, 1.0, 2.0, 4.0]);
        let pts: Vec<_> = e.points().collect();
        assert_eq!(pts, vec![(1.0, 0.5), (2.0, 0.75), (4.0, 1.0)]);
    }
}
