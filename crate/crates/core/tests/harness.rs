use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensibench_core::consensus::ProtocolKind;
use sensibench_core::experiment::presets::{self, Preset};
use sensibench_core::experiment::{self, ExperimentSpec};
use sensibench_core::faults::{FaultEvent, FaultPlan};
use sensibench_core::metrics::recovery_time;
use sensibench_core::SimTime;

fn desk(kind: ProtocolKind, preset: Preset, seed: u64) -> ExperimentSpec {
    let mut spec = presets::desk(kind, preset);
    spec.seed = seed;
    spec
}

#[test]
fn baseline_commits_everything() {
    for kind in ProtocolKind::ALL {
        let out = experiment::run(&desk(kind, Preset::Baseline, 3)).unwrap();
        assert_eq!(out.summary.submitted, 1500, "{kind:?}");
        assert_eq!(out.summary.committed, 1500, "{kind:?}");
        assert!(out.check_safety().is_empty(), "{kind:?}");
        assert!(out.down_at_end.is_empty());
        let series = out.throughput(Duration::from_secs(1)).unwrap();
        assert_eq!(series.total(), 1500);
    }
}

#[test]
fn same_seed_same_run() {
    for kind in ProtocolKind::ALL {
        let mut spec = desk(kind, Preset::Transient, 11);
        spec.record_trace = true;
        let a = experiment::run(&spec).unwrap();
        let b = experiment::run(&spec).unwrap();
        assert_eq!(a.trace_digest, b.trace_digest, "{kind:?}");
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.records, b.records);
        assert!(a.trace.len() as u64 >= a.net.sent);
        spec.seed = 12;
        let c = experiment::run(&spec).unwrap();
        assert_ne!(a.trace_digest, c.trace_digest);
    }
}

#[test]
fn random_crashes_keep_ledgers_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for kind in ProtocolKind::ALL {
        for seed in 0..8 {
            let mut spec = desk(kind, Preset::Baseline, seed);
            spec.run_length = Duration::from_secs(15);
            let f = rng.random_range(1..=3u16);
            let mut events: Vec<_> = (0..f)
                .map(|i| {
                    let at = Duration::from_millis(rng.random_range(0..15_000));
                    (at, 5 + (seed as u16 + i) % 5)
                })
                .map(|(at, node)| {
                    let mut e = FaultEvent::crash(0, [node]);
                    e.at = at;
                    e
                })
                .collect();
            events.sort_by_key(|e| e.at);
            spec.faults = FaultPlan::new(events, 10).unwrap();
            let out = experiment::run(&spec).unwrap();
            assert_eq!(out.check_safety(), vec![], "{kind:?} seed {seed}");
            assert_eq!(out.summary.committed, out.summary.submitted, "{kind:?} seed {seed}");
        }
    }
}

#[test]
fn redundant_clients_execute_once() {
    for kind in [ProtocolKind::Leaderled, ProtocolKind::Leaderless] {
        let out = experiment::run(&desk(kind, Preset::Byzantine, 5)).unwrap();
        let s = out.summary;
        assert_eq!(s.committed, s.submitted);
        assert_eq!(s.dedup_hits, 3 * s.committed);
        assert_eq!(out.reference_ledger().tx_count() as u64, s.committed);
        assert!(out.check_safety().is_empty());
    }
}

#[test]
fn quorum_loss_blocks_commits_until_restart() {
    for kind in [ProtocolKind::Leaderled, ProtocolKind::Leaderless] {
        let out = experiment::run(&desk(kind, Preset::Transient, 2)).unwrap();
        assert_eq!(out.node_txs_between(SimTime::from_secs(10), SimTime::from_secs(20)), 0);
        let backlog_done = out
            .records
            .iter()
            .filter(|r| r.submit < SimTime::from_secs(20))
            .filter_map(|r| r.commit_time)
            .max()
            .unwrap();
        assert!(backlog_done < SimTime::from_secs(30), "{kind:?}: {backlog_done}");
        assert_eq!(out.summary.committed, 1500);
    }
}

#[test]
fn throttled_sampling_stalls_after_halt() {
    let out = experiment::run(&desk(ProtocolKind::Snow, Preset::Transient, 0)).unwrap();
    assert!(out.halted());
    assert!(out.summary.dropped > 0);
    let stats = out.throttle[0].unwrap();
    assert!(stats.dropped > 0);

    let mut spec = desk(ProtocolKind::Snow, Preset::Transient, 0);
    spec.network.throttle = None;
    let out = experiment::run(&spec).unwrap();
    assert_eq!(out.summary.committed, 1500);
}

#[test]
fn recovery_follows_poll_interval() {
    let mut last = 0.0;
    for p in [1, 5, 10] {
        let mut spec = desk(ProtocolKind::Leaderless, Preset::Partition, 0);
        spec.run_length = Duration::from_secs(45);
        spec.network.link.poll_interval = Duration::from_secs(p);
        let out = experiment::run(&spec).unwrap();
        let series = out.throughput(Duration::from_secs(1)).unwrap();
        let r = recovery_time(&series, SimTime::from_secs(20), 50.0, 0.9).as_secs_f64();
        assert!(r.is_finite() && r >= last, "poll {p}: {r} after {last}");
        last = r;
    }
}

#[test]
fn full_scale_presets_are_valid() {
    for kind in ProtocolKind::ALL {
        for p in Preset::ALL {
            for outage in [100, 133] {
                let spec = presets::full(kind, p, Duration::from_secs(outage));
                spec.validate().unwrap();
                assert_eq!(spec.offered_rate(), 200.0);
                for e in spec.faults.events() {
                    assert!(e.targets.iter().all(|n| n.0 >= 5), "faults stay off client-facing nodes");
                }
            }
        }
    }
}
