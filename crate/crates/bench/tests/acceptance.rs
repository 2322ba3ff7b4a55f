//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensibench::score::score_dirs;
use sensibench::ExperimentConfig;
use sensibench_core::consensus::ProtocolKind::{self, Leaderled, Leaderless, Scheduled, Snow};
use sensibench_core::experiment::presets::{self, Preset};
use sensibench_core::experiment::{self, ExperimentSpec};
use sensibench_core::faults::{FaultEvent, FaultPlan};
use sensibench_core::metrics::{
    recovery_time, samples, sensitivity_score, Ecdf, IntegrationMode, ScoreOptions, SensitivityScore,
};
use sensibench_core::SimTime;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn desk(kind: ProtocolKind, preset: Preset, seed: u64) -> ExperimentSpec {
    let mut s = presets::desk(kind, preset);
    s.seed = seed;
    s
}

fn sim(spec: &ExperimentSpec) -> experiment::RunOutcome {
    experiment::run(spec).expect("preset runs")
}

/// Area under the eCDF by summing the CDF at every gap midpoint, counting
/// samples directly.
fn oracle_area(v: &[f64]) -> f64 {
    let mut xs = v.to_vec();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let m = v.len() as f64;
    xs.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            v.iter().filter(|&&x| x <= mid).count() as f64 / m * (w[1] - w[0])
        })
        .sum()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let score = |a: &[f64], b: &[f64]| sensitivity_score(&samples(a).unwrap(), &samples(b).unwrap(), false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sets: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let len = rng.random_range(1..300);
            let scale = rng.random_range(0.01..30.0);
            (0..len).map(|_| rng.random::<f64>() * scale).collect()
        })
        .collect();
    for d in sets.iter().take(100) {
        ensure(score(d, d) == SensitivityScore::Finite(0.0), || "score(D,D) != 0".into())?;
    }
    let s = score(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).finite().unwrap();
    ensure((s - 1.0).abs() <= 1e-9, || format!("score([1,2,3],[2,4,6]) = {s}"))?;
    let mut worst_exact = 0.0f64;
    let mut worst_grid = 0.0f64;
    for d in &sets {
        let e = Ecdf::new(&samples(d).unwrap()).unwrap();
        let exact = e.super_cumulative(IntegrationMode::Exact).unwrap().area;
        worst_exact = worst_exact.max((exact - oracle_area(d)).abs());
        for step in [0.1, 0.01] {
            let g = e.super_cumulative(IntegrationMode::Grid { step }).unwrap().area;
            worst_grid = worst_grid.max((g - exact).abs() / step);
        }
    }
    ensure(worst_exact <= 1e-9, || format!("exact vs oracle off by {worst_exact:e}"))?;
    ensure(worst_grid <= 1.0, || format!("grid error reached {worst_grid:.3} steps"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("max |exact-oracle| {worst_exact:.1e} over 1000 sets, grid within {worst_grid:.3} step, {secs:.2}s"))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let runs = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut total = 0;
    for kind in ProtocolKind::ALL {
        for seed in 0..runs {
            let mut spec = desk(kind, Preset::Baseline, seed);
            let f = rng.random_range(1..=3usize);
            let mut victims: Vec<u16> = (5..10).collect();
            let mut events = Vec::new();
            for _ in 0..f {
                let node = victims.remove(rng.random_range(0..victims.len()));
                let ms = rng.random_range(0..spec.run_length.as_millis() as u64);
                events.push(FaultEvent { at: Duration::from_millis(ms), ..FaultEvent::crash(0, [node]) });
            }
            events.sort_by_key(|e| e.at);
            spec.faults = FaultPlan::new(events, 10).unwrap();
            let out = sim(&spec);
            let v = out.check_safety();
            ensure(v.is_empty(), || format!("{} seed {seed}: {v:?}", kind.name()))?;
            let s = out.summary;
            ensure(s.committed == s.submitted, || format!("{} seed {seed}: {s:?}", kind.name()))?;
            total += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{total} runs ({runs} per protocol), no forks, all txs committed, {secs:.1}s"))
}

fn crash_score(kind: ProtocolKind, seed: u64) -> f64 {
    let b = sim(&desk(kind, Preset::Baseline, seed));
    let a = sim(&desk(kind, Preset::Crash, seed));
    sensitivity_score(&samples(&b.latencies()).unwrap(), &samples(&a.latencies()).unwrap(), a.halted())
        .unwrap()
        .as_f64()
}

fn criterion_3() -> Check {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10 {
        let (ll, led, sch) = (crash_score(Leaderless, seed), crash_score(Leaderled, seed), crash_score(Scheduled, seed));
        if ll < led && ll < sch {
            wins += 1;
        }
        rows.push(format!("{ll:.3}/{led:.3}/{sch:.3}"));
    }
    ensure(wins >= 9, || format!("ordering held in {wins}/10 seeds: {rows:?}"))?;
    Ok(format!("leaderless below leaderled and scheduled in {wins}/10 seeds (seed 0: {})", rows[0]))
}

fn criterion_4() -> Check {
    let (down, up) = (SimTime::from_secs(10), SimTime::from_secs(20));
    let mut slowest = 0.0f64;
    for kind in [Leaderled, Leaderless] {
        for seed in 0..5 {
            let out = sim(&desk(kind, Preset::Transient, seed));
            let leaked = out.node_txs_between(down, up);
            ensure(leaked == 0, || format!("{} seed {seed}: {leaked} txs committed while halted", kind.name()))?;
            let backlog: Vec<_> = out.records.iter().filter(|r| r.submit < up).collect();
            let done = backlog.iter().map(|r| r.commit_time).max().flatten();
            let all = backlog.iter().all(|r| r.commit_time.is_some());
            let drain = done.map_or(f64::INFINITY, |t| t.as_secs_f64() - up.as_secs_f64());
            ensure(all && drain <= 10.0, || format!("{} seed {seed}: backlog drained after {drain:.2}s", kind.name()))?;
            slowest = slowest.max(drain);
        }
    }
    Ok(format!("0 txs committed in [10s, 20s); backlog drained at most {slowest:.2}s after restart"))
}

fn run_cfg(cfg: &ExperimentConfig, dir: &Path) {
    sensibench::run(cfg, dir).expect("run succeeds");
}

fn criterion_5() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let mut base = ExperimentConfig::desk(Snow);
        base.run.seed = seed;
        let alt = base.with_preset(Preset::Transient);
        let (b, a) = (tmp.path().join(format!("b{seed}")), tmp.path().join(format!("a{seed}")));
        run_cfg(&base, &b);
        run_cfg(&alt, &a);
        let s = score_dirs(&b, &a, ScoreOptions::default()).unwrap();
        let after = sensibench::RunData::load(&a).unwrap().commit_times().into_iter().filter(|t| *t > SimTime::from_secs(10)).count();
        ensure(after == 0, || format!("seed {seed}: {after} commits after the fault"))?;
        ensure(s.infinite, || format!("seed {seed}: finite score {:?}", s.score))?;
        lines.push(seed);
    }
    let throttle = presets::snow_throttle();
    Ok(format!("score Infinite for seeds {lines:?} with throttle {} msg/s, queue {}", throttle.rate, throttle.queue_cap))
}

fn criterion_6() -> Check {
    let mut summary = Vec::new();
    for kind in ProtocolKind::ALL {
        let mut seen = Vec::new();
        for seed in 0..5 {
            let mut r = Vec::new();
            for poll in [1, 5, 10] {
                let mut spec = desk(kind, Preset::Partition, seed);
                spec.run_length = Duration::from_secs(45);
                spec.network.link.poll_interval = Duration::from_secs(poll);
                if kind == Snow {
                    // With the throttle the sampling protocol never recovers.
                    spec.network.throttle = None;
                }
                let out = sim(&spec);
                let series = out.throughput(Duration::from_secs(1)).unwrap();
                r.push(recovery_time(&series, SimTime::from_secs(20), spec.offered_rate(), 0.9).as_secs_f64());
            }
            ensure(r.iter().all(|x| x.is_finite()) && r.windows(2).all(|w| w[0] <= w[1]), || {
                format!("{} seed {seed}: recovery {r:?}", kind.name())
            })?;
            seen.push(r);
        }
        summary.push(format!("{} {:?}", kind.name(), seen[0]));
    }
    Ok(format!("recovery nondecreasing over poll 1/5/10s, 5 seeds; seed 0: {}", summary.join(", ")))
}

fn criterion_7() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    for kind in [Leaderled, Leaderless] {
        for seed in 0..3 {
            let out = sim(&desk(kind, Preset::Byzantine, seed));
            let s = out.summary;
            for (i, l) in out.ledgers.iter().enumerate() {
                let mut ids = BTreeSet::new();
                for tx in l.blocks().iter().flat_map(|b| b.txs.iter()) {
                    ensure(ids.insert(tx.id()), || format!("{} node {i}: {} twice", kind.name(), tx.id()))?;
                }
            }
            ensure(out.reference_ledger().tx_count() as u64 == s.committed, || format!("{s:?}"))?;
            ensure(s.dedup_hits == 3 * s.committed, || format!("{} seed {seed}: {s:?}", kind.name()))?;

            let mut base = ExperimentConfig::desk(kind);
            base.run.seed = seed;
            let (b, a) = (tmp.path().join("b"), tmp.path().join("a"));
            run_cfg(&base, &b);
            run_cfg(&base.with_preset(Preset::Byzantine), &a);
            let sc = score_dirs(&b, &a, ScoreOptions::default()).unwrap();
            ensure(!sc.infinite, || format!("{} seed {seed}: infinite byzantine score", kind.name()))?;
            if seed == 0 {
                detail.push(format!("{} dedup {} score {:.4}", kind.name(), s.dedup_hits, sc.value()));
            }
        }
    }
    Ok(format!("each tx once per ledger, dedup_hits = 3 x committed; {}", detail.join(", ")))
}

fn criterion_8() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let mut n = 0;
    for kind in ProtocolKind::ALL {
        for p in Preset::ALL {
            let mut cfg = ExperimentConfig::desk(kind).with_preset(p);
            cfg.run.seed = 17;
            let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
            run_cfg(&cfg, &a);
            run_cfg(&cfg, &b);
            for f in ["txs.csv", "throughput.csv"] {
                let same = std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
                ensure(same, || format!("{} {}: {f} differs", kind.name(), p.name()))?;
            }
            n += 1;
        }
    }
    Ok(format!("{n} protocol/preset pairs byte-identical across two runs"))
}

fn criterion_9() -> Check {
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for kind in [Leaderled, Leaderless] {
        for seed in 0..3 {
            let spec = desk(kind, Preset::Baseline, seed);
            let series = sim(&spec).throughput(Duration::from_secs(1)).unwrap();
            let end = spec.run_length.as_secs() as usize;
            for i in 5..end {
                let r = series.rate(i);
                lo = lo.min(r);
                hi = hi.max(r);
                ensure((45.0..=55.0).contains(&r), || format!("{} seed {seed}: window {i} at {r} tx/s", kind.name()))?;
            }
        }
    }
    Ok(format!("windowed throughput in [{lo}, {hi}] tx/s after 5s"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("metric identities and oracle", criterion_1),
        ("safety under random crashes", criterion_2),
        ("resilience ordering on crash", criterion_3),
        ("quorum blackout and drain", criterion_4),
        ("throttled sampling halts", criterion_5),
        ("recovery bound by poll interval", criterion_6),
        ("redundant-client dedup", criterion_7),
        ("determinism", criterion_8),
        ("nominal throughput", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {id} {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {id} {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
