//! Every protocol against every fault preset, scored against its own
//! fault-free baseline.

use std::fs;
use std::path::{Path, PathBuf};

use sensibench_core::consensus::ProtocolKind;
use sensibench_core::experiment::presets::Preset;
use sensibench_core::metrics::ScoreOptions;
use serde::{Deserialize, Serialize};

use crate::artifacts::RunData;
use crate::config::ExperimentConfig;
use crate::score::score_runs;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub protocol: ProtocolKind,
    pub preset: String,
    pub seed: u64,
    pub score: Option<f64>,
    pub infinite: bool,
    pub baseline_dir: PathBuf,
    pub altered_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub presets: Vec<String>,
    pub seeds: Vec<u64>,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    /// Median score over seeds for one cell; infinite counts as larger
    /// than any finite value.
    pub fn median(&self, protocol: ProtocolKind, preset: &str) -> Option<f64> {
        let mut v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.protocol == protocol && e.preset == preset)
            .map(|e| e.score.unwrap_or(f64::INFINITY))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }

    pub fn protocols(&self) -> Vec<ProtocolKind> {
        let mut p: Vec<_> = self.entries.iter().map(|e| e.protocol).collect();
        p.dedup();
        p
    }

    /// `protocol,<preset>...` with one median per cell; `inf` marks a halt.
    pub fn radar_csv(&self) -> String {
        let mut out = format!("protocol,{}\n", self.presets.join(","));
        for p in self.protocols() {
            out.push_str(p.name());
            for preset in &self.presets {
                match self.median(p, preset) {
                    Some(v) if v.is_infinite() => out.push_str(",inf"),
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("protocol,preset,seed,score,infinite,baseline_dir,altered_dir\n");
        for e in &self.entries {
            let score = e.score.map_or_else(String::new, |s| s.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.protocol.name(),
                e.preset,
                e.seed,
                score,
                e.infinite,
                e.baseline_dir.display(),
                e.altered_dir.display()
            ));
        }
        out
    }
}

fn run_dir(out: &Path, kind: ProtocolKind, seed: u64, preset: &str) -> PathBuf {
    out.join(kind.name()).join(format!("seed-{seed}")).join(preset)
}

/// Runs the suite described by `cfg.suite`, writing one run directory per
/// experiment plus `scores.csv`, `radar.csv` and `suite.json` under `out`.
pub fn run_suite(cfg: &ExperimentConfig, out: &Path) -> Result<SuiteReport, BenchError> {
    let presets: Vec<Preset> = cfg
        .suite
        .presets
        .iter()
        .map(|name| match Preset::parse(name) {
            Some(Preset::Baseline) | None => Err(BenchError::Config(format!("suite preset {name:?} is not a fault preset"))),
            Some(p) => Ok(p),
        })
        .collect::<Result<_, _>>()?;
    if cfg.suite.seeds.is_empty() || cfg.suite.protocols.is_empty() {
        return Err(BenchError::Config("suite needs at least one protocol and one seed".into()));
    }
    // Validate every cell before spending time on runs.
    for &kind in &cfg.suite.protocols {
        let mut c = cfg.clone();
        c.protocol.kind = kind;
        for &p in &presets {
            c.with_preset(p).spec()?;
        }
    }

    let mut entries = Vec::new();
    for &kind in &cfg.suite.protocols {
        for &seed in &cfg.suite.seeds {
            let mut base_cfg = cfg.with_preset(Preset::Baseline);
            base_cfg.protocol.kind = kind;
            base_cfg.run.seed = seed;
            let base_dir = run_dir(out, kind, seed, Preset::Baseline.name());
            crate::run(&base_cfg, &base_dir)?;
            let baseline = RunData::load(&base_dir)?;
            for &p in &presets {
                let alt_cfg = base_cfg.with_preset(p);
                let alt_dir = run_dir(out, kind, seed, p.name());
                crate::run(&alt_cfg, &alt_dir)?;
                let s = score_runs(&baseline, &RunData::load(&alt_dir)?, ScoreOptions::default())?;
                entries.push(SuiteEntry {
                    protocol: kind,
                    preset: p.name().to_string(),
                    seed,
                    score: s.score,
                    infinite: s.infinite,
                    baseline_dir: base_dir.clone(),
                    altered_dir: alt_dir,
                });
            }
        }
    }
    let report = SuiteReport { presets: cfg.suite.presets.clone(), seeds: cfg.suite.seeds.clone(), entries };
    let write = |name: &str, bytes: &[u8]| {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(BenchError::io(path))
    };
    write("scores.csv", report.scores_csv().as_bytes())?;
    write("radar.csv", report.radar_csv().as_bytes())?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    write("suite.json", &json)?;
    Ok(report)
}
