use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::NodeId;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Send,
    RuleDrop,
    Deliver,
    Discard,
    ThrottleQueue,
    ThrottleDrop,
    Timer,
    Harness,
    Crash,
    Restart,
    RuleInstall,
    RuleRemove,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Send => "send",
            TraceKind::RuleDrop => "rule_drop",
            TraceKind::Deliver => "deliver",
            TraceKind::Discard => "discard",
            TraceKind::ThrottleQueue => "throttle_queue",
            TraceKind::ThrottleDrop => "throttle_drop",
            TraceKind::Timer => "timer",
            TraceKind::Harness => "harness",
            TraceKind::Crash => "crash",
            TraceKind::Restart => "restart",
            TraceKind::RuleInstall => "rule_install",
            TraceKind::RuleRemove => "rule_remove",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub kind: TraceKind,
    pub src: Option<NodeId>,
    pub dst: Option<NodeId>,
    pub seq: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Running FNV-1a digest of every event, plus the events themselves when
/// recording is on.
#[derive(Debug, Clone)]
pub struct Trace {
    digest: u64,
    count: u64,
    events: Option<Vec<TraceEvent>>,
}

impl Trace {
    pub fn new(record: bool) -> Self {
        Trace { digest: FNV_OFFSET, count: 0, events: record.then(Vec::new) }
    }

    fn mix(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.digest ^= *b as u64;
            self.digest = self.digest.wrapping_mul(FNV_PRIME);
        }
    }

    pub(crate) fn push(&mut self, ev: TraceEvent) {
        self.count += 1;
        self.mix(&ev.t.as_micros().to_le_bytes());
        self.mix(&[ev.kind as u8]);
        for id in [ev.src, ev.dst] {
            self.mix(&id.map_or(u16::MAX, |n| n.0).to_le_bytes());
        }
        self.mix(&ev.seq.to_le_bytes());
        if let Some(events) = &mut self.events {
            events.push(ev);
        }
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn events(&self) -> &[TraceEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<TraceEvent> {
        self.events.as_mut().map(core::mem::take).unwrap_or_default()
    }
}
