//! Standard scenarios on a ten-node network: five client-facing nodes
//! (0..5) and five others (5..10) that faults usually target.

use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use super::{ExperimentSpec, NetworkSpec};
use crate::consensus::{ProtocolKind, ProtocolParams, SnowParams};
use crate::faults::{group, FaultEvent, FaultPlan};
use crate::simnet::ThrottleConfig;
use crate::workload::{ClientConfig, ConfirmPolicy};
use crate::NodeId;

pub const NODES: usize = 10;
pub const CLIENTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Preset {
    Baseline,
    /// t nodes crash for good.
    Crash,
    /// t+1 nodes crash and come back.
    Transient,
    /// Six nodes split from four, then heal.
    Partition,
    /// Every tx goes to t+1 nodes and needs all of them to agree.
    Byzantine,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::Baseline, Preset::Crash, Preset::Transient, Preset::Partition, Preset::Byzantine];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::Crash => "crash",
            Preset::Transient => "transient",
            Preset::Partition => "partition",
            Preset::Byzantine => "byzantine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Inbound quota that drives the sampling protocol into overload after a
/// long halt while leaving fault-free runs untouched.
pub fn snow_throttle() -> ThrottleConfig {
    ThrottleConfig { rate: 1000.0, burst: 200, queue_cap: 20_000 }
}

/// Protocol parameters for a ten-node preset. Sampling uses k = n-1 so a
/// poll can still reach alpha with t peers down.
pub fn protocol(kind: ProtocolKind) -> ProtocolParams {
    ProtocolParams { snow: SnowParams { k: 9, alpha: 6, beta: 8 }, ..ProtocolParams::new(kind, NODES) }
}

/// Network used by every preset; sampling runs get [`snow_throttle`].
pub fn network(kind: ProtocolKind) -> NetworkSpec {
    NetworkSpec { throttle: (kind == ProtocolKind::Snow).then(snow_throttle), ..NetworkSpec::default() }
}

/// Five clients, one per client-facing node, `rate_each` tx/s apiece.
pub fn clients(rate_each: f64, redundancy: usize) -> Vec<ClientConfig> {
    (0..CLIENTS)
        .map(|c| ClientConfig {
            id: c,
            rate: rate_each,
            attach: (0..redundancy).map(|j| NodeId(((c as usize + j) % CLIENTS as usize) as u16)).collect(),
            account_base: c as u64 * 1000,
            accounts: 10,
        })
        .collect()
}

/// Fault events for `preset` starting at `at`; transient faults last
/// `outage`. Baseline and byzantine runs have no fault events.
pub fn plan(preset: Preset, at: Duration, outage: Duration) -> FaultPlan {
    let timed = |mut e: FaultEvent, t: Duration| {
        e.at = t;
        e
    };
    let back = at + outage;
    let events = match preset {
        Preset::Baseline | Preset::Byzantine => vec![],
        Preset::Crash => vec![timed(FaultEvent::crash(0, [7, 8, 9]), at)],
        Preset::Transient => {
            vec![timed(FaultEvent::crash(0, 6..10), at), timed(FaultEvent::restart(0, 6..10), back)]
        }
        Preset::Partition => vec![
            timed(FaultEvent::partition(0, vec![group(0..6), group(6..10)]), at),
            timed(FaultEvent::heal(0), back),
        ],
    };
    FaultPlan::new(events, NODES).expect("preset plan is valid")
}

/// Client attachment for `preset`: t+1 nodes per client for byzantine,
/// one otherwise.
pub fn redundancy(preset: Preset, t: usize) -> usize {
    if preset == Preset::Byzantine {
        t + 1
    } else {
        1
    }
}

/// Laptop-scale run: 50 tx/s for 30 s, faults from 10 s to 20 s.
pub fn desk(kind: ProtocolKind, preset: Preset) -> ExperimentSpec {
    let protocol = protocol(kind);
    let k = redundancy(preset, protocol.t());
    ExperimentSpec {
        protocol,
        network: network(kind),
        clients: clients(10.0, k),
        policy: ConfirmPolicy::AllK,
        faults: plan(preset, Duration::from_secs(10), Duration::from_secs(10)),
        run_length: Duration::from_secs(30),
        drain: Duration::from_secs(10),
        seed: 0,
        record_trace: false,
    }
}

/// Full-size run: 200 tx/s, faults at 133 s. `outage` is how long a
/// transient crash or partition lasts.
pub fn full(kind: ProtocolKind, preset: Preset, outage: Duration) -> ExperimentSpec {
    let mut spec = desk(kind, preset);
    let k = redundancy(preset, spec.protocol.t());
    spec.clients = clients(40.0, k);
    spec.run_length = Duration::from_secs(400);
    spec.drain = Duration::from_secs(30);
    spec.faults = plan(preset, Duration::from_secs(133), outage);
    spec
}
