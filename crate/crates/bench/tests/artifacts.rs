use std::fs;
use std::time::Duration;

use sensibench::artifacts::{self, RunData};
use sensibench::{score_runs, ExperimentConfig};
use sensibench_core::consensus::ProtocolKind;
use sensibench_core::experiment::{self, presets::Preset};
use sensibench_core::metrics::{samples, score_with, ScoreOptions};

fn write(cfg: &ExperimentConfig, dir: &std::path::Path) -> experiment::RunOutcome {
    let spec = cfg.spec().unwrap();
    let out = experiment::run(&spec).unwrap();
    artifacts::write_run(dir, cfg, &spec, &out, Duration::from_secs(1)).unwrap();
    out
}

#[test]
fn scores_from_files_match_in_process() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ProtocolKind::Scheduled, ProtocolKind::Snow] {
        let base_cfg = ExperimentConfig::desk(kind);
        let alt_cfg = base_cfg.with_preset(Preset::Transient);
        let b = write(&base_cfg, &dir.path().join("b"));
        let a = write(&alt_cfg, &dir.path().join("a"));
        let in_process = score_with(
            &samples(&b.latencies()).unwrap(),
            &samples(&a.latencies()).unwrap(),
            a.halted(),
            ScoreOptions::default(),
        )
        .unwrap();
        let base = RunData::load(&dir.path().join("b")).unwrap();
        let alt = RunData::load(&dir.path().join("a")).unwrap();
        assert_eq!(base.latencies(), b.latencies());
        assert_eq!(alt.halted(), a.halted());
        let from_files = score_runs(&base, &alt, ScoreOptions::default()).unwrap();
        assert_eq!(from_files.score, in_process.score.finite());
        assert_eq!(from_files.infinite, in_process.score.is_infinite());
        assert_eq!(from_files.baseline_area, in_process.baseline_area);
    }
}

#[test]
fn trace_is_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::desk(ProtocolKind::Leaderled).with_preset(Preset::Partition);
    cfg.run.length = 12.0;
    cfg.faults.at = 4.0;
    cfg.faults.outage = 4.0;
    cfg.run.trace = true;
    write(&cfg, dir.path());
    let text = fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    let mut kinds = std::collections::BTreeSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["t", "kind", "src", "dst", "seq"] {
            assert!(v.get(k).is_some(), "{line}");
        }
        kinds.insert(v["kind"].as_str().unwrap().to_string());
    }
    for k in ["send", "deliver", "rule_drop", "rule_install", "timer"] {
        assert!(kinds.contains(k), "{k} missing from {kinds:?}");
    }
}

#[test]
fn byzantine_scores_against_plain_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let base_cfg = ExperimentConfig::desk(ProtocolKind::Leaderled);
    write(&base_cfg, &dir.path().join("b"));
    let out = write(&base_cfg.with_preset(Preset::Byzantine), &dir.path().join("z"));
    assert_eq!(out.summary.dedup_hits, 3 * out.summary.committed);
    let base = RunData::load(&dir.path().join("b")).unwrap();
    let byz = RunData::load(&dir.path().join("z")).unwrap();
    let s = score_runs(&base, &byz, ScoreOptions::default()).unwrap();
    assert!(!s.infinite);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("z/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 4);
    assert_eq!(summary["dedup_hits"], 3 * out.summary.committed);
}
