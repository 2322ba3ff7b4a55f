//! One simulated run: replicas on a [`SimNet`], open-loop clients, and a
//! fault plan applied at exact simulated times.

pub mod presets;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::consensus::{
    Durable, Envelope, Ledger, LinkParams, Outbox, ParamsError, ProtocolParams, Replica, TimerKey, TxId,
};
use crate::faults::{self, FaultError, FaultPlan, FaultTarget, Group};
use crate::metrics::{throughput_series, MetricsError, ThroughputSeries};
use crate::simnet::{DelayModel, NetError, NetEvent, NetStats, RuleHandle, SimNet, ThrottleConfig, ThrottleStats, TraceEvent};
use crate::workload::{self, ClientConfig, Confirmation, ConfirmPolicy, TxRecord, WorkloadError, WorkloadSummary};
use crate::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(with = "crate::consensus::secs")]
    pub base_delay: Duration,
    #[serde(with = "crate::consensus::secs")]
    pub jitter: Duration,
    pub throttle: Option<ThrottleConfig>,
    pub link: LinkParams,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            base_delay: Duration::from_millis(10),
            jitter: Duration::from_millis(10),
            throttle: None,
            link: LinkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: ProtocolParams,
    pub network: NetworkSpec,
    pub clients: Vec<ClientConfig>,
    pub policy: ConfirmPolicy,
    pub faults: FaultPlan,
    /// Submissions happen in `[0, run_length)`.
    #[serde(with = "crate::consensus::secs")]
    pub run_length: Duration,
    /// Extra time allowed for pending transactions after the last submission.
    #[serde(with = "crate::consensus::secs")]
    pub drain: Duration,
    pub seed: u64,
    pub record_trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Faults(#[from] FaultError),
    #[error("run_length must be positive")]
    EmptyRun,
    #[error("fault at {0:?} is after the end of submissions")]
    FaultAfterRun(Duration),
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        self.protocol.validate()?;
        workload::validate_clients(&self.clients, self.protocol.n)?;
        FaultPlan::new(self.faults.events().to_vec(), self.protocol.n)?;
        if self.run_length.is_zero() {
            return Err(SpecError::EmptyRun);
        }
        if let Some(last) = self.faults.events().last() {
            if last.at >= self.run_length {
                return Err(SpecError::FaultAfterRun(last.at));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.protocol.n
    }

    /// Offered load in transactions per second.
    pub fn offered_rate(&self) -> f64 {
        self.clients.iter().map(|c| c.rate).sum()
    }

    /// Longest one-way delay the network can impose on a message.
    pub fn max_delay(&self) -> Duration {
        self.network.base_delay + self.network.jitter
    }
}

/// One block appended to one node's ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCommit {
    pub at: SimTime,
    pub node: NodeId,
    pub height: u64,
    pub txs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SafetyViolation {
    Fork { a: NodeId, b: NodeId, height: u64 },
    DuplicateTx { node: NodeId, tx: TxId },
    NonceGap { node: NodeId, tx: TxId, expected: u64 },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Ordered by submission time, then client.
    pub records: Vec<TxRecord>,
    pub summary: WorkloadSummary,
    /// Final ledger of every node; crashed nodes contribute their durable copy.
    pub ledgers: Vec<Ledger>,
    pub down_at_end: BTreeSet<NodeId>,
    pub node_commits: Vec<NodeCommit>,
    pub end: SimTime,
    pub first_fault: Option<SimTime>,
    pub net: NetStats,
    pub throttle: Vec<Option<ThrottleStats>>,
    pub trace_digest: u64,
    pub trace: Vec<TraceEvent>,
}

impl RunOutcome {
    /// Latencies in seconds of committed transactions, in record order.
    pub fn latencies(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.latency()).collect()
    }

    pub fn commit_times(&self) -> impl Iterator<Item = SimTime> + '_ {
        self.records.iter().filter(|r| r.latency().is_some()).filter_map(|r| r.commit_time)
    }

    pub fn throughput(&self, window: Duration) -> Result<ThroughputSeries, MetricsError> {
        throughput_series(self.commit_times(), window, self.end)
    }

    pub fn halted(&self) -> bool {
        halted(self.first_fault, self.commit_times())
    }

    /// Ledger with the most blocks (the lowest node id on ties).
    pub fn reference_ledger(&self) -> &Ledger {
        let mut best = &self.ledgers[0];
        for l in &self.ledgers[1..] {
            if l.height() > best.height() {
                best = l;
            }
        }
        best
    }

    /// Checks that ledgers agree at every common height and that each
    /// ledger holds each tx once with gapless per-account nonces.
    pub fn check_safety(&self) -> Vec<SafetyViolation> {
        let mut out = Vec::new();
        for (i, a) in self.ledgers.iter().enumerate() {
            for (j, b) in self.ledgers.iter().enumerate().skip(i + 1) {
                let common = a.height().min(b.height());
                if let Some(h) = (0..common).find(|&h| a.get(h).map(|x| x.hash) != b.get(h).map(|x| x.hash)) {
                    out.push(SafetyViolation::Fork { a: NodeId::from(i), b: NodeId::from(j), height: h });
                }
            }
            let mut seen = BTreeSet::new();
            let mut next: BTreeMap<u64, u64> = BTreeMap::new();
            for tx in a.blocks().iter().flat_map(|b| b.txs.iter()) {
                let node = NodeId::from(i);
                if !seen.insert(tx.id()) {
                    out.push(SafetyViolation::DuplicateTx { node, tx: tx.id() });
                }
                let expected = next.entry(tx.account).or_insert(0);
                if tx.nonce != *expected {
                    out.push(SafetyViolation::NonceGap { node, tx: tx.id(), expected: *expected });
                }
                *expected = tx.nonce + 1;
            }
        }
        out
    }

    /// Transactions committed by any node in `[from, to)`, from node commits.
    pub fn node_txs_between(&self, from: SimTime, to: SimTime) -> usize {
        self.node_commits.iter().filter(|c| c.at >= from && c.at < to).map(|c| c.txs).sum()
    }
}

/// A run halted when it has a fault and no client commit happens after
/// the first fault event.
pub fn halted(first_fault: Option<SimTime>, mut commits: impl Iterator<Item = SimTime>) -> bool {
    match first_fault {
        None => false,
        Some(f) => !commits.any(|t| t > f),
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Client-to-node (and node-to-client) latency for one tx copy: a pure
/// function of the seed so that it does not depend on anything a fault
/// changes.
fn client_delay(spec: &ExperimentSpec, salt: u64, tx: TxId, node: NodeId) -> Duration {
    let jitter = spec.network.jitter.as_micros() as u64;
    let h = mix(mix(mix(spec.seed, salt), tx.account), (tx.nonce << 16) | node.0 as u64);
    let extra = if jitter == 0 { 0 } else { h % (jitter + 1) };
    spec.network.base_delay + Duration::from_micros(extra)
}

const KIND_SHIFT: u32 = 56;
const DELIVER: u64 = 1;
const FAULT: u64 = 2;
const CHECK: u64 = 3;
const CHECK_EVERY: Duration = Duration::from_millis(100);

struct Harness<'a> {
    spec: &'a ExperimentSpec,
    params: Arc<ProtocolParams>,
    net: SimNet<Envelope, TimerKey>,
    replicas: Vec<Option<Replica>>,
    durable: Vec<Option<Durable>>,
    rules: Vec<RuleHandle>,
    out: Outbox,
    records: Vec<TxRecord>,
    index: BTreeMap<TxId, usize>,
    need: Vec<usize>,
    copies: BTreeMap<TxId, u64>,
    node_commits: Vec<NodeCommit>,
    replica_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("fault injection failed: {0}")]
    Fault(#[from] NetError),
}

impl FaultTarget for Harness<'_> {
    type Error = NetError;

    fn crash(&mut self, node: NodeId) -> Result<(), NetError> {
        self.net.crash_node(node)?;
        if let Some(r) = self.replicas[node.index()].take() {
            self.durable[node.index()] = Some(r.durable());
        }
        Ok(())
    }

    fn restart(&mut self, node: NodeId) -> Result<(), NetError> {
        self.net.restart_node(node)?;
        let durable = self.durable[node.index()].take().expect("crashed node has durable state");
        let mut r = Replica::restore(node, self.params.clone(), self.spec.network.link, self.replica_seed, durable);
        let now = self.net.now();
        r.start(now, &mut self.out);
        self.replicas[node.index()] = Some(r);
        self.flush(node);
        Ok(())
    }

    fn partition(&mut self, groups: &[Group]) -> Result<(), NetError> {
        for rule in faults::partition_rules(groups) {
            let h = self.net.install_drop_rule(rule);
            self.rules.push(h);
        }
        Ok(())
    }

    fn heal(&mut self) -> Result<(), NetError> {
        for h in core::mem::take(&mut self.rules) {
            self.net.remove_drop_rule(h)?;
        }
        Ok(())
    }
}

impl Harness<'_> {
    fn flush(&mut self, node: NodeId) {
        let now = self.net.now();
        for (to, env) in self.out.sends.drain(..) {
            // Only live replicas produce output, so this cannot fail.
            let _ = self.net.send(node, to, env);
        }
        for (after, key) in self.out.timers.drain(..) {
            let _ = self.net.set_timer(node, after, key);
        }
        for block in core::mem::take(&mut self.out.commits) {
            self.node_commits.push(NodeCommit { at: now, node, height: block.height, txs: block.txs.len() });
            for tx in &block.txs {
                let Some(&i) = self.index.get(&tx.id()) else { continue };
                let at = now + client_delay(self.spec, 2, tx.id(), node);
                let c = Confirmation { height: block.height, hash: block.hash, at };
                let need = self.need[i];
                self.records[i].confirm(node, c, need);
            }
        }
    }
}

/// Runs one experiment to completion.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome, RunError> {
    spec.validate()?;
    let n = spec.n();
    let mut params = spec.protocol.clone();
    params.schedule_seed ^= spec.seed;
    let params = Arc::new(params);
    let delay = DelayModel { base: spec.network.base_delay, jitter: spec.network.jitter, seed: mix(spec.seed, 1) };
    let net = SimNet::new(n, delay, spec.network.throttle, spec.record_trace);
    let replica_seed = mix(spec.seed, 2);

    let subs = workload::submissions(&spec.clients, spec.run_length);
    let by_client: BTreeMap<u32, &ClientConfig> = spec.clients.iter().map(|c| (c.id, c)).collect();
    let t = params.t();
    let mut records = Vec::with_capacity(subs.len());
    let mut index = BTreeMap::new();
    let mut need = Vec::with_capacity(subs.len());
    let mut deliveries: Vec<(SimTime, NodeId, usize)> = Vec::new();
    for s in &subs {
        let c = by_client[&s.client];
        let i = records.len();
        records.push(TxRecord::new(s, c.attach.clone()));
        index.insert(s.tx.id(), i);
        need.push(spec.policy.needed(c.attach.len(), t));
        for &a in &c.attach {
            deliveries.push((s.at + client_delay(spec, 1, s.tx.id(), a), a, i));
        }
    }

    let mut h = Harness {
        spec,
        params: params.clone(),
        net,
        replicas: (0..n)
            .map(|i| Some(Replica::new(NodeId::from(i), params.clone(), spec.network.link, replica_seed)))
            .collect(),
        durable: vec![None; n],
        rules: Vec::new(),
        out: Outbox::new(),
        records,
        index,
        need,
        copies: BTreeMap::new(),
        node_commits: Vec::new(),
        replica_seed,
    };
    for (i, ev) in spec.faults.events().iter().enumerate() {
        h.net.schedule(SimTime::ZERO + ev.at, (FAULT << KIND_SHIFT) | i as u64);
    }
    for (i, d) in deliveries.iter().enumerate() {
        h.net.schedule(d.0, (DELIVER << KIND_SHIFT) | i as u64);
    }
    let submit_end = SimTime::ZERO + spec.run_length;
    let hard_end = submit_end + spec.drain;
    h.net.schedule(submit_end, CHECK << KIND_SHIFT);
    for i in 0..n {
        let id = NodeId::from(i);
        if let Some(r) = h.replicas[i].as_mut() {
            r.start(SimTime::ZERO, &mut h.out);
        }
        h.flush(id);
    }

    let mut end = hard_end;
    while let Some(ev) = h.net.next_event(hard_end) {
        let now = h.net.now();
        match ev {
            NetEvent::Message { src, dst, msg } => {
                if let Some(r) = h.replicas[dst.index()].as_mut() {
                    r.on_message(now, src, msg, &mut h.out);
                    h.flush(dst);
                }
            }
            NetEvent::Timer { node, key } => {
                if let Some(r) = h.replicas[node.index()].as_mut() {
                    r.on_timer(now, key, &mut h.out);
                    h.flush(node);
                }
            }
            NetEvent::Harness(token) => {
                let idx = (token & ((1 << KIND_SHIFT) - 1)) as usize;
                match token >> KIND_SHIFT {
                    DELIVER => {
                        let (_, node, i) = deliveries[idx];
                        let tx = h.records[i].tx;
                        if let Some(r) = h.replicas[node.index()].as_mut() {
                            *h.copies.entry(tx.id()).or_default() += 1;
                            r.on_client_tx(now, tx, &mut h.out);
                            h.flush(node);
                        }
                    }
                    FAULT => {
                        let ev = &spec.faults.events()[idx];
                        faults::apply(ev, n, &mut h)?;
                    }
                    _ => {
                        let last_commit = h.records.iter().filter_map(|r| r.commit_time).max();
                        if h.records.iter().all(|r| r.is_resolved()) {
                            end = last_commit.map_or(now, |c| c.max(now));
                            break;
                        }
                        h.net.schedule(now + CHECK_EVERY, CHECK << KIND_SHIFT);
                    }
                }
            }
        }
    }

    let ledgers: Vec<Ledger> = (0..n)
        .map(|i| match (&h.replicas[i], &h.durable[i]) {
            (Some(r), _) => r.ledger().clone(),
            (None, Some(d)) => d.ledger.clone(),
            (None, None) => Ledger::new(),
        })
        .collect();
    let down_at_end = (0..n).filter(|&i| h.replicas[i].is_none()).map(NodeId::from).collect();
    // Copies beyond the single execution each executed tx receives.
    let executed: BTreeSet<TxId> = {
        let mut best = &ledgers[0];
        for l in &ledgers {
            if l.height() > best.height() {
                best = l;
            }
        }
        best.blocks().iter().flat_map(|b| b.txs.iter().map(|t| t.id())).collect()
    };
    let dedup_hits = h
        .copies
        .iter()
        .filter(|(id, _)| executed.contains(id))
        .map(|(_, c)| c.saturating_sub(1))
        .sum();
    let summary = WorkloadSummary::from_records(&h.records, dedup_hits);
    let throttle = (0..n).map(|i| h.net.throttle_stats(NodeId::from(i))).collect();
    Ok(RunOutcome {
        summary,
        records: h.records,
        ledgers,
        down_at_end,
        node_commits: h.node_commits,
        end,
        first_fault: spec.faults.first_fault().map(|d| SimTime::ZERO + d),
        net: h.net.stats(),
        throttle,
        trace_digest: h.net.trace().digest(),
        trace: h.net.trace_mut().take_events(),
    })
}

/// Short human-readable description of a violation list.
pub fn describe(v: &[SafetyViolation]) -> String {
    alloc::format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::{Block, Proposer, Tx};

    fn ledger(blocks: &[Vec<Tx>]) -> Ledger {
        let mut l = Ledger::new();
        for (h, txs) in blocks.iter().enumerate() {
            let b = Block::new(h as u64, l.tip_hash(), txs.clone(), Proposer::Node(NodeId(0)));
            l.append(Arc::new(b)).unwrap();
        }
        l
    }

    fn outcome(ledgers: Vec<Ledger>) -> RunOutcome {
        RunOutcome {
            records: Vec::new(),
            summary: WorkloadSummary::default(),
            ledgers,
            down_at_end: BTreeSet::new(),
            node_commits: Vec::new(),
            end: SimTime::ZERO,
            first_fault: None,
            net: NetStats::default(),
            throttle: Vec::new(),
            trace_digest: 0,
            trace: Vec::new(),
        }
    }

    #[test]
    fn prefix_ledgers_are_safe() {
        let a = ledger(&[vec![Tx::new(1, 0)], vec![Tx::new(1, 1), Tx::new(2, 0)]]);
        let b = ledger(&[vec![Tx::new(1, 0)]]);
        assert!(outcome(vec![a, b, Ledger::new()]).check_safety().is_empty());
    }

    #[test]
    fn fork_is_reported_at_first_divergence() {
        let a = ledger(&[vec![Tx::new(1, 0)], vec![Tx::new(1, 1)]]);
        let b = ledger(&[vec![Tx::new(1, 0)], vec![Tx::new(2, 0)]]);
        let v = outcome(vec![a, b]).check_safety();
        assert_eq!(v, vec![SafetyViolation::Fork { a: NodeId(0), b: NodeId(1), height: 1 }]);
    }

    #[test]
    fn duplicates_and_gaps_are_reported() {
        let a = ledger(&[vec![Tx::new(1, 0)], vec![Tx::new(1, 0), Tx::new(2, 1)]]);
        let v = outcome(vec![a]).check_safety();
        assert!(v.contains(&SafetyViolation::DuplicateTx { node: NodeId(0), tx: TxId { account: 1, nonce: 0 } }));
        assert!(v.contains(&SafetyViolation::NonceGap {
            node: NodeId(0),
            tx: TxId { account: 2, nonce: 1 },
            expected: 0
        }));
    }

    #[test]
    fn client_delay_within_link_bounds() {
        let spec = presets::desk(crate::consensus::ProtocolKind::Leaderled, presets::Preset::Baseline);
        for i in 0..500 {
            let d = client_delay(&spec, 1, TxId { account: i % 7, nonce: i }, NodeId((i % 10) as u16));
            assert!(d >= spec.network.base_delay && d <= spec.max_delay());
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = presets::desk(crate::consensus::ProtocolKind::Leaderled, presets::Preset::Crash);
        assert_eq!(spec.validate(), Ok(()));
        spec.run_length = Duration::from_secs(5);
        assert_eq!(spec.validate(), Err(SpecError::FaultAfterRun(Duration::from_secs(10))));
        spec.run_length = Duration::ZERO;
        assert_eq!(spec.validate(), Err(SpecError::EmptyRun));
    }
}
