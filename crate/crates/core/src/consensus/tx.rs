use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::Ledger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId {
    pub account: u64,
    pub nonce: u64,
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.account, self.nonce)
    }
}

/// A transfer. Only its identity matters to the protocols; `payload_size` is
/// carried for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tx {
    pub account: u64,
    pub nonce: u64,
    pub payload_size: u32,
}

impl Tx {
    pub fn new(account: u64, nonce: u64) -> Self {
        Tx { account, nonce, payload_size: 100 }
    }

    pub fn id(&self) -> TxId {
        TxId { account: self.account, nonce: self.nonce }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitOutcome {
    Admitted,
    Duplicate,
    AlreadyCommitted,
}

/// Pending transactions keyed by id. The committed filter is the ledger's
/// per-account next nonce, so a committed tx can never be re-admitted.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    pending: BTreeMap<TxId, Tx>,
    dedup_hits: u64,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, tx: Tx, ledger: &Ledger) -> AdmitOutcome {
        if ledger.is_committed(tx.id()) {
            self.dedup_hits += 1;
            return AdmitOutcome::AlreadyCommitted;
        }
        if self.pending.contains_key(&tx.id()) {
            self.dedup_hits += 1;
            return AdmitOutcome::Duplicate;
        }
        self.pending.insert(tx.id(), tx);
        AdmitOutcome::Admitted
    }

    pub fn dedup_hits(&self) -> u64 {
        self.dedup_hits
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tx> {
        self.pending.values()
    }

    /// Up to `cap` txs whose nonces continue each account's committed
    /// sequence without gaps, in (account, nonce) order.
    pub fn ready_batch(&self, ledger: &Ledger, cap: usize) -> Vec<Tx> {
        let mut out = Vec::new();
        let mut account = None;
        let mut expected = 0;
        for tx in self.pending.values() {
            if out.len() >= cap {
                break;
            }
            if account != Some(tx.account) {
                account = Some(tx.account);
                expected = ledger.next_nonce(tx.account);
            }
            if tx.nonce == expected {
                out.push(*tx);
                expected += 1;
            }
        }
        out
    }

    pub fn has_ready(&self, ledger: &Ledger) -> bool {
        self.pending.values().any(|tx| tx.nonce == ledger.next_nonce(tx.account))
    }

    /// Drops everything the ledger now covers for the accounts in `txs`.
    pub fn prune_accounts<'a>(&mut self, ledger: &Ledger, txs: impl IntoIterator<Item = &'a Tx>) {
        let mut accounts: Vec<u64> = txs.into_iter().map(|t| t.account).collect();
        accounts.dedup();
        for a in accounts {
            let next = ledger.next_nonce(a);
            let stale: Vec<TxId> = self
                .pending
                .range(TxId { account: a, nonce: 0 }..TxId { account: a, nonce: next })
                .map(|(id, _)| *id)
                .collect();
            for id in stale {
                self.pending.remove(&id);
            }
        }
    }

    pub fn prune(&mut self, ledger: &Ledger) {
        self.pending.retain(|id, _| !ledger.is_committed(*id));
    }

    pub fn remove(&mut self, id: TxId) -> Option<Tx> {
        self.pending.remove(&id)
    }
}
