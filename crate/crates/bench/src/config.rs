//! TOML experiment configuration.
//!
//! ```toml
//! [protocol]
//! kind = "leaderled"      # leaderled | leaderless | scheduled | snow
//! n = 10
//!
//! [network]
//! base_delay = 0.01       # seconds
//! poll_interval = 5.0
//!
//! [clients]
//! count = 5
//! rate = 10.0             # per client, tx/s
//!
//! [faults]
//! preset = "crash"        # or explicit [[faults.events]]
//!
//! [run]
//! length = 30.0
//! seed = 7
//! ```

use std::path::Path;
use std::time::Duration;

use sensibench_core::consensus::{LinkParams, ProtocolKind, ProtocolParams};
use sensibench_core::experiment::presets::{self, Preset};
use sensibench_core::experiment::{ExperimentSpec, NetworkSpec};
use sensibench_core::faults::{FaultEvent, FaultPlan};
use sensibench_core::simnet::ThrottleConfig;
use sensibench_core::workload::{ClientConfig, ConfirmPolicy};
use sensibench_core::NodeId;
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sim,
    LiveLocal,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sim => "sim",
            Mode::LiveLocal => "live-local",
        }
    }
}

fn secs(d: &Duration) -> f64 {
    d.as_secs_f64()
}

fn dur(s: f64, field: &str) -> Result<Duration, BenchError> {
    Duration::try_from_secs_f64(s).map_err(|_| BenchError::Config(format!("{field}: {s} is not a valid duration")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub base_delay: f64,
    pub jitter: f64,
    pub heartbeat: f64,
    pub idle_timeout: f64,
    pub poll_interval: f64,
    /// Inbound quota per node. Absent means the preset default for the
    /// protocol; `rate = 0` disables it.
    pub throttle: Option<ThrottleConfig>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let link = LinkParams::default();
        let net = NetworkSpec::default();
        NetworkSection {
            base_delay: secs(&net.base_delay),
            jitter: secs(&net.jitter),
            heartbeat: secs(&link.heartbeat),
            idle_timeout: secs(&link.idle_timeout),
            poll_interval: secs(&link.poll_interval),
            throttle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsSection {
    pub policy: ConfirmPolicy,
    /// Generated clients: `count` clients on nodes `0..count`.
    pub count: u32,
    pub rate: f64,
    pub accounts: u64,
    /// Nodes per client; the byzantine preset forces t+1.
    pub redundancy: Option<usize>,
    /// Explicit clients; when non-empty the generated ones are not used.
    pub list: Vec<ClientConfig>,
}

impl Default for ClientsSection {
    fn default() -> Self {
        ClientsSection {
            policy: ConfirmPolicy::AllK,
            count: presets::CLIENTS,
            rate: 10.0,
            accounts: 10,
            redundancy: None,
            list: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultsSection {
    pub preset: Option<String>,
    /// Preset fault time, seconds.
    pub at: f64,
    /// Preset outage length for transient and partition, seconds.
    pub outage: f64,
    pub events: Vec<FaultEvent>,
}

impl Default for FaultsSection {
    fn default() -> Self {
        FaultsSection { preset: None, at: 10.0, outage: 10.0, events: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub length: f64,
    pub drain: f64,
    pub seed: u64,
    pub mode: Mode,
    pub trace: bool,
    /// Throughput window, seconds.
    pub window: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { length: 30.0, drain: 10.0, seed: 0, mode: Mode::Sim, trace: false, window: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub protocols: Vec<ProtocolKind>,
    pub presets: Vec<String>,
    pub seeds: Vec<u64>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        SuiteSection {
            protocols: ProtocolKind::ALL.to_vec(),
            presets: ["crash", "transient", "partition", "byzantine"].map(String::from).to_vec(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolParams,
    pub network: NetworkSection,
    pub clients: ClientsSection,
    pub faults: FaultsSection,
    pub run: RunSection,
    pub suite: SuiteSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(&self) -> Result<Option<Preset>, BenchError> {
        match &self.faults.preset {
            None => Ok(None),
            Some(name) => Preset::parse(name)
                .map(Some)
                .ok_or_else(|| BenchError::Config(format!("unknown preset {name:?}"))),
        }
    }

    /// Copy of this config running `preset` instead of its own faults.
    pub fn with_preset(&self, preset: Preset) -> Self {
        let mut c = self.clone();
        c.faults.preset = Some(preset.name().to_string());
        c.faults.events.clear();
        c.clients.redundancy = None;
        c
    }

    /// Resolves the config into a validated simulation spec.
    pub fn spec(&self) -> Result<ExperimentSpec, BenchError> {
        let preset = self.preset()?;
        let protocol = self.protocol.clone();
        let t = protocol.t();
        let n = protocol.n;

        let clients = if self.clients.list.is_empty() {
            let c = &self.clients;
            let k = match (preset, c.redundancy) {
                (Some(Preset::Byzantine), _) => t + 1,
                (_, Some(k)) => k,
                (_, None) => 1,
            };
            if c.count == 0 || k == 0 || k > n {
                return Err(BenchError::Config(format!("clients: count={} redundancy={k} for n={n}", c.count)));
            }
            (0..c.count)
                .map(|id| ClientConfig {
                    id,
                    rate: c.rate,
                    attach: (0..k).map(|j| NodeId(((id as usize + j) % c.count.min(n as u32) as usize) as u16)).collect(),
                    account_base: id as u64 * 1000,
                    accounts: c.accounts,
                })
                .collect()
        } else {
            self.clients.list.clone()
        };

        let faults = match (preset, self.faults.events.is_empty()) {
            (Some(_), false) => {
                return Err(BenchError::Config("faults: give either a preset or events, not both".into()))
            }
            (Some(p), true) => {
                if n != presets::NODES {
                    return Err(BenchError::Config(format!("fault presets need n = {}", presets::NODES)));
                }
                presets::plan(p, dur(self.faults.at, "faults.at")?, dur(self.faults.outage, "faults.outage")?)
            }
            (None, _) => FaultPlan::new(self.faults.events.clone(), n).map_err(|e| BenchError::Config(e.to_string()))?,
        };

        let net = &self.network;
        let throttle = match net.throttle {
            Some(t) if t.rate <= 0.0 => None,
            Some(t) => Some(t),
            None => presets::network(protocol.kind).throttle,
        };
        let spec = ExperimentSpec {
            network: NetworkSpec {
                base_delay: dur(net.base_delay, "network.base_delay")?,
                jitter: dur(net.jitter, "network.jitter")?,
                throttle,
                link: LinkParams {
                    heartbeat: dur(net.heartbeat, "network.heartbeat")?,
                    idle_timeout: dur(net.idle_timeout, "network.idle_timeout")?,
                    poll_interval: dur(net.poll_interval, "network.poll_interval")?,
                },
            },
            protocol,
            clients,
            policy: self.clients.policy,
            faults,
            run_length: dur(self.run.length, "run.length")?,
            drain: dur(self.run.drain, "run.drain")?,
            seed: self.run.seed,
            record_trace: self.run.trace,
        };
        spec.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if spec.network.link.poll_interval.is_zero() || spec.network.link.heartbeat.is_zero() {
            return Err(BenchError::Config("network: heartbeat and poll_interval must be positive".into()));
        }
        Ok(spec)
    }

    pub fn window(&self) -> Result<Duration, BenchError> {
        let w = dur(self.run.window, "run.window")?;
        if w.is_zero() {
            return Err(BenchError::Config("run.window must be positive".into()));
        }
        Ok(w)
    }

    /// The default ten-node setup for one protocol, with sampling
    /// parameters sized for it.
    pub fn desk(kind: ProtocolKind) -> Self {
        ExperimentConfig { protocol: presets::protocol(kind), ..Default::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_desk_baseline_for_leaderled() {
        let c = ExperimentConfig::parse("").unwrap();
        let mut spec = c.spec().unwrap();
        let desk = presets::desk(ProtocolKind::Leaderled, Preset::Baseline);
        // The sampling parameters are unused by leaderled and keep their
        // generic defaults here.
        spec.protocol.snow = desk.protocol.snow;
        assert_eq!(spec, desk);
    }

    #[test]
    fn presets_match_core() {
        for kind in ProtocolKind::ALL {
            for p in Preset::ALL {
                let spec = ExperimentConfig::desk(kind).with_preset(p).spec().unwrap();
                assert_eq!(spec, presets::desk(kind, p), "{kind:?} {p:?}");
            }
        }
    }

    #[test]
    fn explicit_events() {
        let c = ExperimentConfig::parse(
            r#"
            [protocol]
            kind = "scheduled"
            [[faults.events]]
            at = 4.5
            action = "partition"
            groups = [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9]]
            [[faults.events]]
            at = 9
            action = "heal"
            "#,
        )
        .unwrap();
        let spec = c.spec().unwrap();
        assert_eq!(spec.faults.events().len(), 2);
        assert_eq!(spec.faults.first_fault(), Some(Duration::from_millis(4500)));
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "[protocol]\nkind = \"paxos\"",
            "[protocol]\nn = 10\nt = 4",
            "[run]\nlength = -1.0",
            "[run]\nlenght = 3.0",
            "[faults]\npreset = \"meteor\"",
            "[[faults.events]]\nat = 1\naction = \"restart\"\ntargets = [3]",
            "[clients]\ncount = 0",
            "[faults]\npreset = \"crash\"\nat = 40.0",
        ] {
            let r = ExperimentConfig::parse(doc).and_then(|c| c.spec());
            assert!(matches!(r, Err(BenchError::Config(_))), "{doc}: {r:?}");
        }
    }

    #[test]
    fn throttle_override() {
        let mut c = ExperimentConfig::desk(ProtocolKind::Snow);
        assert!(c.spec().unwrap().network.throttle.is_some());
        c.network.throttle = Some(ThrottleConfig { rate: 0.0, burst: 1, queue_cap: 1 });
        assert!(c.spec().unwrap().network.throttle.is_none());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::desk(ProtocolKind::Snow).with_preset(Preset::Transient);
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
