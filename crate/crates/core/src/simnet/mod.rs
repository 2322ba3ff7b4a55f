//! Deterministic discrete-event message fabric.
//!
//! A [`SimNet`] owns the clock and a single event queue ordered by
//! `(time, sequence)`. It knows nothing about protocols: callers pull
//! [`NetEvent`]s with [`SimNet::next_event`] (or drive [`SimNet::run_until`])
//! and react by sending messages, arming timers or injecting faults.
//!
//! Guarantees, for a fixed seed and call sequence:
//! * the full event order is reproducible;
//! * messages on one `(src, dst)` link arrive in send order;
//! * nothing is delivered to, or sent from, a crashed node;
//! * drop rules apply to messages sent after installation, never to ones
//!   already in flight.

mod rules;
mod throttle;
mod trace;

pub use rules::{DropRule, RuleHandle};
pub use throttle::{Admission, ThrottleConfig, ThrottleStats, Throttler};
pub use trace::{Trace, TraceEvent, TraceKind};

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::SimTime;
use rules::RuleSet;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u16)
    }
}

/// Uniform one-way delay in `[base, base + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModel {
    pub base: Duration,
    pub jitter: Duration,
    pub seed: u64,
}

impl DelayModel {
    /// LAN-like default: 10 ms base, 10 ms jitter.
    pub fn lan(seed: u64) -> Self {
        DelayModel { base: Duration::from_millis(10), jitter: Duration::from_millis(10), seed }
    }

    pub fn max_delay(&self) -> Duration {
        self.base + self.jitter
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} is crashed")]
    NodeCrashed(NodeId),
    #[error("invalid transition for node {node}: {reason}")]
    InvalidTransition { node: NodeId, reason: &'static str },
    #[error("no drop rule with handle {0:?}")]
    UnknownHandle(RuleHandle),
}

/// What the caller sees when the clock advances.
#[derive(Debug, Clone, PartialEq)]
pub enum NetEvent<M, T> {
    Message { src: NodeId, dst: NodeId, msg: M },
    Timer { node: NodeId, key: T },
    Harness(u64),
}

#[derive(Debug)]
enum Pending<M, T> {
    Arrive { src: NodeId, dst: NodeId, msg: M, epoch: u32, id: u64 },
    Release { node: NodeId, epoch: u32 },
    Timer { node: NodeId, epoch: u32, key: T },
    Harness(u64),
}

struct Entry<M, T> {
    at: SimTime,
    seq: u64,
    pending: Pending<M, T>,
}

impl<M, T> PartialEq for Entry<M, T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<M, T> Eq for Entry<M, T> {}

impl<M, T> PartialOrd for Entry<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for Entry<M, T> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub rule_dropped: u64,
    pub discarded: u64,
    pub delivered: u64,
}

pub struct SimNet<M, T> {
    now: SimTime,
    seq: u64,
    msg_seq: u64,
    queue: BinaryHeap<Entry<M, T>>,
    n: usize,
    alive: Vec<bool>,
    epoch: Vec<u32>,
    rules: RuleSet,
    delay: DelayModel,
    rng: ChaCha8Rng,
    link_ready: Vec<SimTime>,
    throttlers: Vec<Option<Throttler<(NodeId, M)>>>,
    release_armed: Vec<bool>,
    trace: Trace,
    stats: NetStats,
}

impl<M: Clone, T> SimNet<M, T> {
    pub fn new(n: usize, delay: DelayModel, throttle: Option<ThrottleConfig>, record_trace: bool) -> Self {
        SimNet {
            now: SimTime::ZERO,
            seq: 0,
            msg_seq: 0,
            queue: BinaryHeap::new(),
            n,
            alive: vec![true; n],
            epoch: vec![0; n],
            rules: RuleSet::new(n),
            rng: ChaCha8Rng::seed_from_u64(delay.seed),
            delay,
            link_ready: vec![SimTime::ZERO; n * n],
            throttlers: (0..n).map(|_| throttle.map(|c| Throttler::new(c, SimTime::ZERO))).collect(),
            release_armed: vec![false; n],
            trace: Trace::new(record_trace),
            stats: NetStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.alive.get(id.index()).copied().unwrap_or(false)
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn throttle_stats(&self, id: NodeId) -> Option<ThrottleStats> {
        self.throttlers.get(id.index())?.as_ref().map(|t| t.stats())
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn check(&self, id: NodeId) -> Result<(), NetError> {
        if id.index() < self.n {
            Ok(())
        } else {
            Err(NetError::UnknownNode(id))
        }
    }

    fn push(&mut self, at: SimTime, pending: Pending<M, T>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Entry { at, seq, pending });
    }

    fn record(&mut self, kind: TraceKind, src: Option<NodeId>, dst: Option<NodeId>, seq: u64) {
        self.trace.push(TraceEvent { t: self.now, kind, src, dst, seq });
    }

    fn sample_delay(&mut self) -> Duration {
        let jitter = self.delay.jitter.as_micros() as u64;
        let extra = if jitter == 0 { 0 } else { self.rng.random_range(0..=jitter) };
        self.delay.base + Duration::from_micros(extra)
    }

    /// Sends `msg`; it is discarded if a drop rule matches, otherwise it
    /// arrives after a sampled delay, no earlier than the previous message on
    /// the same link.
    pub fn send(&mut self, src: NodeId, dst: NodeId, msg: M) -> Result<(), NetError> {
        self.check(src)?;
        self.check(dst)?;
        if !self.alive[src.index()] {
            return Err(NetError::NodeCrashed(src));
        }
        let id = self.msg_seq;
        self.msg_seq += 1;
        self.stats.sent += 1;
        if self.rules.blocks(src, dst) {
            self.stats.rule_dropped += 1;
            self.record(TraceKind::RuleDrop, Some(src), Some(dst), id);
            return Ok(());
        }
        self.record(TraceKind::Send, Some(src), Some(dst), id);
        let link = src.index() * self.n + dst.index();
        let at = (self.now + self.sample_delay()).max(self.link_ready[link]);
        self.link_ready[link] = at;
        let epoch = self.epoch[dst.index()];
        self.push(at, Pending::Arrive { src, dst, msg, epoch, id });
        Ok(())
    }

    /// Arms a timer for `node`; it is silently cancelled if the node crashes.
    pub fn set_timer(&mut self, node: NodeId, after: Duration, key: T) -> Result<(), NetError> {
        self.check(node)?;
        let epoch = self.epoch[node.index()];
        self.push(self.now + after, Pending::Timer { node, epoch, key });
        Ok(())
    }

    /// Schedules an opaque harness event at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, at: SimTime, token: u64) {
        self.push(at.max(self.now), Pending::Harness(token));
    }

    pub fn install_drop_rule(&mut self, rule: DropRule) -> RuleHandle {
        let h = self.rules.install(rule);
        self.record(TraceKind::RuleInstall, None, None, h.0);
        h
    }

    pub fn remove_drop_rule(&mut self, h: RuleHandle) -> Result<(), NetError> {
        self.rules.remove(h).ok_or(NetError::UnknownHandle(h))?;
        self.record(TraceKind::RuleRemove, None, None, h.0);
        Ok(())
    }

    pub fn active_rules(&self) -> usize {
        self.rules.len()
    }

    /// Marks `id` crashed: pending timers and in-flight or queued inbound
    /// messages for it are discarded.
    pub fn crash_node(&mut self, id: NodeId) -> Result<(), NetError> {
        self.check(id)?;
        if !self.alive[id.index()] {
            return Err(NetError::InvalidTransition { node: id, reason: "crash of a crashed node" });
        }
        self.alive[id.index()] = false;
        self.epoch[id.index()] += 1;
        if let Some(t) = &mut self.throttlers[id.index()] {
            t.clear();
        }
        self.record(TraceKind::Crash, None, Some(id), self.epoch[id.index()] as u64);
        Ok(())
    }

    pub fn restart_node(&mut self, id: NodeId) -> Result<(), NetError> {
        self.check(id)?;
        if self.alive[id.index()] {
            return Err(NetError::InvalidTransition { node: id, reason: "restart of a live node" });
        }
        self.alive[id.index()] = true;
        self.epoch[id.index()] += 1;
        self.release_armed[id.index()] = false;
        self.record(TraceKind::Restart, None, Some(id), self.epoch[id.index()] as u64);
        Ok(())
    }

    /// Advances to the next caller-visible event with timestamp `<= until`.
    /// Returns `None` (with the clock at `until`) when there is none.
    pub fn next_event(&mut self, until: SimTime) -> Option<NetEvent<M, T>> {
        while let Some(top) = self.queue.peek() {
            if top.at > until {
                break;
            }
            let Entry { at, pending, .. } = self.queue.pop().expect("peeked");
            self.now = self.now.max(at);
            match pending {
                Pending::Harness(token) => {
                    self.record(TraceKind::Harness, None, None, token);
                    return Some(NetEvent::Harness(token));
                }
                Pending::Timer { node, epoch, key } => {
                    if self.epoch[node.index()] != epoch {
                        continue;
                    }
                    self.record(TraceKind::Timer, None, Some(node), 0);
                    return Some(NetEvent::Timer { node, key });
                }
                Pending::Arrive { src, dst, msg, epoch, id } => {
                    if self.epoch[dst.index()] != epoch {
                        self.stats.discarded += 1;
                        self.record(TraceKind::Discard, Some(src), Some(dst), id);
                        continue;
                    }
                    let now = self.now;
                    let Some(throttler) = &mut self.throttlers[dst.index()] else {
                        return Some(self.deliver(src, dst, msg, id));
                    };
                    match throttler.offer(now, (src, msg)) {
                        (Admission::Admitted, Some((src, msg))) => {
                            return Some(self.deliver(src, dst, msg, id));
                        }
                        (Admission::Queued, _) => {
                            self.record(TraceKind::ThrottleQueue, Some(src), Some(dst), id);
                            self.arm_release(dst);
                        }
                        _ => self.record(TraceKind::ThrottleDrop, Some(src), Some(dst), id),
                    }
                }
                Pending::Release { node, epoch } => {
                    if self.epoch[node.index()] != epoch {
                        continue;
                    }
                    self.release_armed[node.index()] = false;
                    let now = self.now;
                    let released = self.throttlers[node.index()].as_mut().and_then(|t| t.release(now));
                    self.arm_release(node);
                    if let Some((src, msg)) = released {
                        return Some(self.deliver(src, node, msg, 0));
                    }
                }
            }
        }
        self.now = self.now.max(until);
        None
    }

    fn arm_release(&mut self, node: NodeId) {
        if self.release_armed[node.index()] {
            return;
        }
        let next = self.throttlers[node.index()].as_ref().and_then(|t| t.next_release());
        if let Some(at) = next {
            self.release_armed[node.index()] = true;
            let epoch = self.epoch[node.index()];
            self.push(at.max(self.now), Pending::Release { node, epoch });
        }
    }

    fn deliver(&mut self, src: NodeId, dst: NodeId, msg: M, id: u64) -> NetEvent<M, T> {
        self.stats.delivered += 1;
        self.record(TraceKind::Deliver, Some(src), Some(dst), id);
        NetEvent::Message { src, dst, msg }
    }

    /// Processes every event up to `t`, handing each to `handler`, and
    /// returns the trace events recorded meanwhile (empty unless recording).
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> &[TraceEvent]
    where
        F: FnMut(&mut Self, NetEvent<M, T>),
    {
        let start = self.trace.events().len();
        while let Some(ev) = self.next_event(t) {
            handler(self, ev);
        }
        &self.trace.events()[start..]
    }
}
