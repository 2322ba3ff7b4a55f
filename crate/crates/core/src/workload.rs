//! Open-loop clients and per-transaction bookkeeping.
//!
//! Client `c` submits its `i`-th transaction at `i / rate` seconds, whatever
//! happens to earlier ones. Transactions round-robin over the client's
//! accounts so each account's nonces count up from zero. A record becomes
//! committed once enough of the nodes the client talks to have confirmed it
//! at the same (height, block hash).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::consensus::{BlockHash, Tx, TxId};
use crate::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub id: u32,
    /// Transactions per second.
    pub rate: f64,
    /// Nodes every transaction is sent to.
    pub attach: Vec<NodeId>,
    pub account_base: u64,
    pub accounts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("client {0}: rate must be positive and finite")]
    BadRate(u32),
    #[error("client {0}: no attached nodes")]
    NoAttachment(u32),
    #[error("client {0}: needs at least one account")]
    NoAccounts(u32),
    #[error("client {client}: node {node} out of range")]
    UnknownNode { client: u32, node: NodeId },
    #[error("clients {0} and {1} share accounts")]
    OverlappingAccounts(u32, u32),
}

impl ClientConfig {
    pub fn validate(&self, n: usize) -> Result<(), WorkloadError> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(WorkloadError::BadRate(self.id));
        }
        if self.attach.is_empty() {
            return Err(WorkloadError::NoAttachment(self.id));
        }
        if self.accounts == 0 {
            return Err(WorkloadError::NoAccounts(self.id));
        }
        if let Some(node) = self.attach.iter().find(|a| a.index() >= n) {
            return Err(WorkloadError::UnknownNode { client: self.id, node: *node });
        }
        Ok(())
    }

    /// The `i`-th transaction of this client.
    pub fn tx(&self, i: u64) -> Tx {
        Tx::new(self.account_base + i % self.accounts, i / self.accounts)
    }
}

pub fn validate_clients(clients: &[ClientConfig], n: usize) -> Result<(), WorkloadError> {
    for c in clients {
        c.validate(n)?;
    }
    for (i, a) in clients.iter().enumerate() {
        for b in &clients[i + 1..] {
            let disjoint = a.account_base + a.accounts <= b.account_base || b.account_base + b.accounts <= a.account_base;
            if !disjoint {
                return Err(WorkloadError::OverlappingAccounts(a.id, b.id));
            }
        }
    }
    Ok(())
}

/// Submission times in `[0, run_length)`: the `i`-th at `i / rate`,
/// truncated to whole microseconds.
pub fn submission_schedule(rate: f64, run_length: Duration) -> Vec<SimTime> {
    if !(rate.is_finite() && rate > 0.0) {
        return Vec::new();
    }
    let end = run_length.as_micros() as u64;
    let mut out = Vec::new();
    for i in 0u64.. {
        let at = (i as f64 * 1e6 / rate) as u64;
        if at >= end {
            break;
        }
        out.push(SimTime::from_micros(at));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Submission {
    pub at: SimTime,
    pub client: u32,
    pub tx: Tx,
}

/// Every submission of every client, ordered by time then client id.
pub fn submissions(clients: &[ClientConfig], run_length: Duration) -> Vec<Submission> {
    let mut out: Vec<Submission> = clients
        .iter()
        .flat_map(|c| {
            submission_schedule(c.rate, run_length)
                .into_iter()
                .enumerate()
                .map(move |(i, at)| Submission { at, client: c.id, tx: c.tx(i as u64) })
        })
        .collect();
    out.sort_by_key(|s| (s.at, s.client));
    out
}

/// How many agreeing confirmations commit a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfirmPolicy {
    /// Every attached node must answer.
    #[default]
    AllK,
    /// The first `t + 1` matching answers suffice.
    FirstMatchingT1,
}

impl ConfirmPolicy {
    pub fn needed(self, k: usize, t: usize) -> usize {
        match self {
            ConfirmPolicy::AllK => k,
            ConfirmPolicy::FirstMatchingT1 => (t + 1).min(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub height: u64,
    pub hash: BlockHash,
    pub at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Pending,
    Committed,
    Mismatch,
}

impl TxStatus {
    pub fn name(self) -> &'static str {
        match self {
            TxStatus::Pending => "pending",
            TxStatus::Committed => "committed",
            TxStatus::Mismatch => "mismatch",
        }
    }
}

/// Status and commit time implied by a set of confirmations when `need` of
/// them must agree. The commit time is the arrival of the `need`-th
/// agreeing confirmation.
pub fn aggregate_confirmations(
    confirmations: &BTreeMap<NodeId, Confirmation>,
    need: usize,
) -> (TxStatus, Option<SimTime>) {
    let mut iter = confirmations.values();
    let Some(first) = iter.next() else { return (TxStatus::Pending, None) };
    if iter.any(|c| (c.height, c.hash) != (first.height, first.hash)) {
        return (TxStatus::Mismatch, None);
    }
    if need == 0 || confirmations.len() < need {
        return (TxStatus::Pending, None);
    }
    let mut times: Vec<SimTime> = confirmations.values().map(|c| c.at).collect();
    times.sort_unstable();
    (TxStatus::Committed, Some(times[need - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx: Tx,
    pub client: u32,
    pub submit: SimTime,
    pub attach: Vec<NodeId>,
    pub confirmations: BTreeMap<NodeId, Confirmation>,
    pub status: TxStatus,
    pub commit_time: Option<SimTime>,
}

impl TxRecord {
    pub fn new(sub: &Submission, attach: Vec<NodeId>) -> Self {
        TxRecord {
            tx: sub.tx,
            client: sub.client,
            submit: sub.at,
            attach,
            confirmations: BTreeMap::new(),
            status: TxStatus::Pending,
            commit_time: None,
        }
    }

    pub fn id(&self) -> TxId {
        self.tx.id()
    }

    /// Records one node's answer; only attached nodes count and only their
    /// first answer is kept.
    pub fn confirm(&mut self, node: NodeId, c: Confirmation, need: usize) {
        if self.status == TxStatus::Mismatch || !self.attach.contains(&node) {
            return;
        }
        self.confirmations.entry(node).or_insert(c);
        let (status, at) = aggregate_confirmations(&self.confirmations, need);
        if status == TxStatus::Committed && self.status == TxStatus::Committed {
            return;
        }
        self.status = status;
        self.commit_time = at;
    }

    pub fn is_resolved(&self) -> bool {
        self.status != TxStatus::Pending
    }

    /// Seconds from submission to commit, for committed records.
    pub fn latency(&self) -> Option<f64> {
        let c = self.commit_time.filter(|_| self.status == TxStatus::Committed)?;
        Some(c.saturating_since(self.submit).as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    pub submitted: u64,
    pub committed: u64,
    /// Everything submitted but not committed, including mismatches.
    pub dropped: u64,
    /// Client copies that reached a live node beyond the one execution each
    /// committed transaction gets.
    pub dedup_hits: u64,
    pub mismatched: u64,
}

impl WorkloadSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TxRecord>, dedup_hits: u64) -> Self {
        let mut s = WorkloadSummary { dedup_hits, ..Default::default() };
        for r in records {
            s.submitted += 1;
            match r.status {
                TxStatus::Committed => s.committed += 1,
                TxStatus::Mismatch => s.mismatched += 1,
                TxStatus::Pending => {}
            }
        }
        s.dropped = s.submitted - s.committed;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn conf(height: u64, tag: u8, at_ms: u64) -> Confirmation {
        Confirmation { height, hash: BlockHash([tag; 32]), at: SimTime::from_millis(at_ms) }
    }

    #[test]
    fn schedule_examples() {
        let s = submission_schedule(40.0, Duration::from_secs(1));
        assert_eq!(s.len(), 40);
        assert_eq!(s[1], SimTime::from_millis(25));
        let s = submission_schedule(1.0, Duration::from_secs(3));
        assert_eq!(s, vec![SimTime::ZERO, SimTime::from_secs(1), SimTime::from_secs(2)]);
    }

    #[test]
    fn aggregate_rate() {
        let clients: Vec<ClientConfig> = (0..5)
            .map(|i| ClientConfig { id: i, rate: 40.0, attach: vec![NodeId(i as u16)], account_base: i as u64 * 10, accounts: 10 })
            .collect();
        assert_eq!(submissions(&clients, Duration::from_secs(1)).len(), 200);
    }

    #[test]
    fn nonces_count_per_account() {
        let c = ClientConfig { id: 0, rate: 1.0, attach: vec![NodeId(0)], account_base: 7, accounts: 1 };
        assert_eq!((c.tx(0).account, c.tx(0).nonce), (7, 0));
        assert_eq!((c.tx(1).account, c.tx(1).nonce), (7, 1));
    }

    #[test]
    fn all_k_waits_for_slowest() {
        let mut m = BTreeMap::new();
        for (i, t) in [(0u16, 30), (1, 10), (2, 50)] {
            m.insert(NodeId(i), conf(3, 1, t));
        }
        assert_eq!(aggregate_confirmations(&m, 4), (TxStatus::Pending, None));
        m.insert(NodeId(3), conf(3, 1, 40));
        assert_eq!(aggregate_confirmations(&m, 4), (TxStatus::Committed, Some(SimTime::from_millis(50))));
        assert_eq!(aggregate_confirmations(&m, 2), (TxStatus::Committed, Some(SimTime::from_millis(30))));
        m.insert(NodeId(3), conf(3, 2, 40));
        assert_eq!(aggregate_confirmations(&m, 4).0, TxStatus::Mismatch);
    }

    #[test]
    fn summary_conserves() {
        let sub = Submission { at: SimTime::ZERO, client: 0, tx: Tx::new(0, 0) };
        let mut a = TxRecord::new(&sub, vec![NodeId(0)]);
        a.confirm(NodeId(0), conf(0, 1, 5), 1);
        let b = TxRecord::new(&sub, vec![NodeId(0)]);
        let s = WorkloadSummary::from_records([&a, &b], 0);
        assert_eq!((s.submitted, s.committed, s.dropped), (2, 1, 1));
        assert_eq!(a.latency(), Some(0.005));
    }
}
