//! Run directories: everything needed to score a run without re-running it.
//!
//! | file | content |
//! |---|---|
//! | `manifest.json` | identity, hashes and timing of the run |
//! | `config.toml` | the config as resolved |
//! | `txs.csv` | one row per submitted transaction |
//! | `latency.csv` | committed transactions only |
//! | `ecdf.csv`, `throughput.csv` | plot data |
//! | `summary.json` | workload counters |
//! | `ledgers/node-NN.csv` | final ledger of every node |
//! | `trace.ndjson` | network events, when tracing is on |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sensibench_core::consensus::ProtocolKind;
use sensibench_core::experiment::{self, ExperimentSpec, RunOutcome};
use sensibench_core::metrics::{samples, throughput_series, Ecdf, ThroughputSeries};
use sensibench_core::workload::{TxStatus, WorkloadSummary};
use sensibench_core::SimTime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub protocol: ProtocolKind,
    pub preset: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    pub n: usize,
    pub t: usize,
    pub config_hash: String,
    /// Hash of what clients submit and when; runs are comparable only when
    /// it matches.
    pub workload_hash: String,
    pub offered_tps: f64,
    pub run_length_s: f64,
    pub drain_s: f64,
    pub end_s: f64,
    pub first_fault_s: Option<f64>,
    pub fault_end_s: Option<f64>,
    pub window_s: f64,
    pub halted: bool,
    pub mismatched: u64,
    pub throttle_dropped: u64,
    pub trace_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRow {
    pub tx_id: String,
    pub account: u64,
    pub nonce: u64,
    pub submit_s: String,
    pub commit_s: String,
    pub status: String,
    /// Nodes whose confirmation arrived, `;`-separated.
    pub confirmers: String,
}

#[derive(Serialize)]
struct LatencyRow<'a> {
    tx_id: &'a str,
    submit_s: &'a str,
    commit_s: &'a str,
    latency_s: String,
}

#[derive(Serialize)]
struct LedgerRow {
    height: u64,
    block_hash: String,
    tx_count: usize,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: f64,
    kind: &'a str,
    src: Option<u16>,
    dst: Option<u16>,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub submitted: u64,
    pub committed: u64,
    pub dropped: u64,
    pub dedup_hits: u64,
}

impl From<WorkloadSummary> for Summary {
    fn from(s: WorkloadSummary) -> Self {
        Summary { submitted: s.submitted, committed: s.committed, dropped: s.dropped, dedup_hits: s.dedup_hits }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over the submission schedule inputs. Attachment and confirmation
/// policy are excluded so a redundant-client run compares against a
/// single-client baseline.
pub fn workload_hash(spec: &ExperimentSpec) -> String {
    let clients: Vec<_> = spec.clients.iter().map(|c| (c.id, c.rate, c.account_base, c.accounts)).collect();
    let doc = serde_json::json!({ "run_length_s": spec.run_length.as_secs_f64(), "clients": clients });
    sha256_hex(doc.to_string().as_bytes())
}

pub fn config_hash(spec: &ExperimentSpec) -> String {
    sha256_hex(&serde_json::to_vec(spec).expect("spec serializes"))
}

fn secs_text(d: Duration) -> String {
    (SimTime::ZERO + d).to_string()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    fs::write(path, bytes).map_err(BenchError::io(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, BenchError> {
    let f = fs::File::create(path).map_err(BenchError::io(path))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |e| BenchError::BadArtifact { path: path.to_path_buf(), msg: e.to_string() }
}

fn json_pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

pub fn tx_rows(outcome: &RunOutcome) -> Vec<TxRow> {
    outcome
        .records
        .iter()
        .map(|r| TxRow {
            tx_id: r.id().to_string(),
            account: r.tx.account,
            nonce: r.tx.nonce,
            submit_s: r.submit.to_string(),
            commit_s: match (r.status, r.commit_time) {
                (TxStatus::Committed, Some(c)) => c.to_string(),
                _ => String::new(),
            },
            status: r.status.name().to_string(),
            confirmers: r.confirmations.keys().map(|n| n.0.to_string()).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

/// Committed rows as `(submit, commit)` pairs.
fn committed(rows: &[TxRow]) -> impl Iterator<Item = (&TxRow, SimTime, SimTime)> + '_ {
    rows.iter().filter(|r| r.status == TxStatus::Committed.name()).filter_map(|r| {
        let s = r.submit_s.parse().ok()?;
        let c = r.commit_s.parse().ok()?;
        Some((r, s, c))
    })
}

pub fn write_ecdf(path: &Path, latencies: &[f64]) -> Result<(), BenchError> {
    let mut out = String::from("x,f_hat\n");
    if !latencies.is_empty() {
        let e = Ecdf::new(&samples(latencies)?)?;
        for (x, f) in e.points() {
            out.push_str(&format!("{x},{f}\n"));
        }
    }
    write_file(path, out.as_bytes())
}

pub fn write_throughput(path: &Path, series: &ThroughputSeries) -> Result<(), BenchError> {
    let mut out = String::from("window_start_s,commits,tps\n");
    for (i, c) in series.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", series.window_start(i), c, series.rate(i)));
    }
    write_file(path, out.as_bytes())
}

/// Writes the run directory for `outcome`, replacing files of the same name.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    spec: &ExperimentSpec,
    outcome: &RunOutcome,
    window: Duration,
) -> Result<Manifest, BenchError> {
    fs::create_dir_all(dir.join("ledgers")).map_err(BenchError::io(dir))?;

    let rows = tx_rows(outcome);
    let path = dir.join("txs.csv");
    let mut w = csv_writer(&path)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(BenchError::io(&path))?;

    let path = dir.join("latency.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["tx_id", "submit_s", "commit_s", "latency_s"]).map_err(csv_err(&path))?;
    for (r, s, c) in committed(&rows) {
        let row = LatencyRow {
            tx_id: &r.tx_id,
            submit_s: &r.submit_s,
            commit_s: &r.commit_s,
            latency_s: secs_text(c.saturating_since(s)),
        };
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(BenchError::io(&path))?;

    write_ecdf(&dir.join("ecdf.csv"), &outcome.latencies())?;
    write_throughput(&dir.join("throughput.csv"), &outcome.throughput(window)?)?;
    write_file(&dir.join("summary.json"), &json_pretty(&Summary::from(outcome.summary)))?;

    for (i, ledger) in outcome.ledgers.iter().enumerate() {
        let path = dir.join("ledgers").join(format!("node-{i:02}.csv"));
        let mut w = csv_writer(&path)?;
        // Header even for empty ledgers.
        w.write_record(["height", "block_hash", "tx_count"]).map_err(csv_err(&path))?;
        for b in ledger.blocks() {
            let row = LedgerRow { height: b.height, block_hash: b.hash.to_string(), tx_count: b.txs.len() };
            w.serialize(row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(BenchError::io(&path))?;
    }

    if spec.record_trace {
        let path = dir.join("trace.ndjson");
        let f = fs::File::create(&path).map_err(BenchError::io(&path))?;
        let mut f = std::io::BufWriter::new(f);
        for ev in &outcome.trace {
            let line = TraceLine {
                t: ev.t.as_secs_f64(),
                kind: ev.kind.name(),
                src: ev.src.map(|n| n.0),
                dst: ev.dst.map(|n| n.0),
                seq: ev.seq,
            };
            serde_json::to_writer(&mut f, &line).expect("trace line serializes");
            f.write_all(b"\n").map_err(BenchError::io(&path))?;
        }
        f.flush().map_err(BenchError::io(&path))?;
    }

    let mut resolved = cfg.clone();
    resolved.run.seed = spec.seed;
    write_file(&dir.join("config.toml"), resolved.to_toml().as_bytes())?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        protocol: spec.protocol.kind,
        preset: cfg.faults.preset.clone(),
        mode: cfg.run.mode,
        seed: spec.seed,
        n: spec.n(),
        t: spec.protocol.t(),
        config_hash: config_hash(spec),
        workload_hash: workload_hash(spec),
        offered_tps: spec.offered_rate(),
        run_length_s: spec.run_length.as_secs_f64(),
        drain_s: spec.drain.as_secs_f64(),
        end_s: outcome.end.as_secs_f64(),
        first_fault_s: spec.faults.first_fault().map(|d| d.as_secs_f64()),
        fault_end_s: spec.faults.fault_end().map(|d| d.as_secs_f64()),
        window_s: window.as_secs_f64(),
        halted: outcome.halted(),
        mismatched: outcome.summary.mismatched,
        throttle_dropped: outcome.throttle.iter().flatten().map(|s| s.dropped).sum(),
        trace_digest: format!("{:016x}", outcome.trace_digest),
    };
    write_file(&dir.join("manifest.json"), &json_pretty(&manifest))?;
    Ok(manifest)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub rows: Vec<TxRow>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(BenchError::io(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| BenchError::BadArtifact { path: path.clone(), msg: e.to_string() })?;
        let path = dir.join("txs.csv");
        let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
        let rows = r.deserialize().collect::<Result<Vec<TxRow>, _>>().map_err(csv_err(&path))?;
        for row in &rows {
            if row.submit_s.parse::<SimTime>().is_err()
                || (!row.commit_s.is_empty() && row.commit_s.parse::<SimTime>().is_err())
            {
                return Err(BenchError::BadArtifact { path, msg: format!("bad time in row {}", row.tx_id) });
            }
        }
        Ok(RunData { dir: dir.to_path_buf(), manifest, rows })
    }

    /// Latencies of committed transactions, in file order.
    pub fn latencies(&self) -> Vec<f64> {
        committed(&self.rows).map(|(_, s, c)| c.saturating_since(s).as_secs_f64()).collect()
    }

    pub fn commit_times(&self) -> Vec<SimTime> {
        committed(&self.rows).map(|(_, _, c)| c).collect()
    }

    pub fn first_fault(&self) -> Option<SimTime> {
        self.manifest.first_fault_s.map(SimTime::from_secs_f64)
    }

    pub fn halted(&self) -> bool {
        experiment::halted(self.first_fault(), self.commit_times().into_iter())
    }

    pub fn window(&self) -> Duration {
        Duration::from_secs_f64(self.manifest.window_s)
    }

    pub fn throughput(&self) -> Result<ThroughputSeries, BenchError> {
        let end = SimTime::from_secs_f64(self.manifest.end_s);
        Ok(throughput_series(self.commit_times(), self.window(), end)?)
    }

    /// Rewrites `ecdf.csv` and `throughput.csv` from `txs.csv`.
    pub fn write_plot_data(&self) -> Result<(), BenchError> {
        write_ecdf(&self.dir.join("ecdf.csv"), &self.latencies())?;
        write_throughput(&self.dir.join("throughput.csv"), &self.throughput()?)
    }
}
