use std::time::Duration;

use proptest::prelude::*;
use sensibench_core::metrics::{
    samples, score_with, sensitivity_score, throughput_series, Ecdf, IntegrationMode, ScoreOptions,
    SensitivityScore,
};
use sensibench_core::SimTime;

/// Area under the eCDF over `[min, max]`, by counting samples at the
/// midpoint of every gap between distinct values.
fn oracle_area(v: &[f64]) -> f64 {
    let mut xs = v.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let m = v.len() as f64;
    xs.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let below = v.iter().filter(|&&x| x <= mid).count() as f64;
            below / m * (w[1] - w[0])
        })
        .sum()
}

fn area(v: &[f64], mode: IntegrationMode) -> f64 {
    Ecdf::new(&samples(v).unwrap()).unwrap().super_cumulative(mode).unwrap().area
}

fn score(a: &[f64], b: &[f64]) -> SensitivityScore {
    sensitivity_score(&samples(a).unwrap(), &samples(b).unwrap(), false).unwrap()
}

fn latencies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..20.0, 1..200)
}

#[test]
fn worked_examples() {
    assert_eq!(score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), SensitivityScore::Finite(0.0));
    let s = score(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).finite().unwrap();
    assert!((s - 1.0).abs() < 1e-9);
    // Point masses at different latencies both have zero area.
    assert_eq!(score(&[1.0; 4], &[7.0; 4]), SensitivityScore::Finite(0.0));
    let opts = ScoreOptions { common_support: true, ..Default::default() };
    let r = score_with(&samples(&[1.0; 4]).unwrap(), &samples(&[7.0; 4]).unwrap(), false, opts).unwrap();
    assert!((r.score.finite().unwrap() - 6.0).abs() < 1e-9);
}

#[test]
fn halted_or_empty_altered_is_infinite() {
    let b = samples(&[1.0, 2.0]).unwrap();
    assert!(sensitivity_score(&b, &b, true).unwrap().is_infinite());
    let r = score_with(&b, &[], false, ScoreOptions::default()).unwrap();
    assert!(r.score.is_infinite());
    assert!(r.warning.is_some());
    assert!(sensitivity_score(&[], &b, false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exact_area_matches_oracle(v in latencies()) {
        let exact = area(&v, IntegrationMode::Exact);
        prop_assert!((exact - oracle_area(&v)).abs() < 1e-9);
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((exact - (max - mean)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn grid_converges(v in latencies(), step in prop::sample::select(vec![0.1, 0.01, 0.001])) {
        let exact = area(&v, IntegrationMode::Exact);
        let grid = area(&v, IntegrationMode::Grid { step });
        prop_assert!((grid - exact).abs() <= step + 1e-9, "grid {grid} exact {exact} step {step}");
    }

    #[test]
    fn ecdf_is_monotone_and_reaches_one(v in latencies(), probes in prop::collection::vec(-1.0f64..25.0, 2..20)) {
        let e = Ecdf::new(&samples(&v).unwrap()).unwrap();
        let mut p = probes;
        p.sort_by(f64::total_cmp);
        for w in p.windows(2) {
            prop_assert!(e.eval(w[0]) <= e.eval(w[1]));
        }
        prop_assert_eq!(e.eval(e.max()), 1.0);
    }

    #[test]
    fn score_symmetric_nonnegative(a in latencies(), b in latencies()) {
        let ab = score(&a, &b).finite().unwrap();
        let ba = score(&b, &a).finite().unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(score(&a, &a), SensitivityScore::Finite(0.0));
    }

    #[test]
    fn score_scales_with_units(a in latencies(), b in latencies(), c in 0.1f64..10.0) {
        let s = score(&a, &b).finite().unwrap();
        let ca: Vec<f64> = a.iter().map(|x| x * c).collect();
        let cb: Vec<f64> = b.iter().map(|x| x * c).collect();
        let cs = score(&ca, &cb).finite().unwrap();
        prop_assert!((cs - c * s).abs() < 1e-7 * (1.0 + c * s));
    }

    #[test]
    fn throughput_counts_every_commit(times in prop::collection::vec(0u64..60_000_000, 0..300), w_ms in 1u64..5000) {
        let ts: Vec<SimTime> = times.iter().map(|&t| SimTime::from_micros(t)).collect();
        let s = throughput_series(ts, Duration::from_millis(w_ms), SimTime::from_secs(30)).unwrap();
        prop_assert_eq!(s.total(), times.len() as u64);
    }
}
