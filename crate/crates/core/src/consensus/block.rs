use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Tx, TxId};
use crate::NodeId;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct BlockHash(pub [u8; 32]);

impl BlockHash {
    /// Parent of the block at height 0.
    pub const GENESIS: BlockHash = BlockHash([0; 32]);
}

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposer {
    Node(NodeId),
    /// Superblock: the proposers whose batches were decided in.
    Merged(Vec<NodeId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent: BlockHash,
    pub txs: Vec<Tx>,
    pub proposer: Proposer,
    pub hash: BlockHash,
}

impl Block {
    pub fn new(height: u64, parent: BlockHash, txs: Vec<Tx>, proposer: Proposer) -> Self {
        let mut h = Sha256::new();
        h.update(parent.0);
        h.update(height.to_le_bytes());
        match &proposer {
            Proposer::Node(id) => {
                h.update([0]);
                h.update(id.0.to_le_bytes());
            }
            Proposer::Merged(ids) => {
                h.update([1]);
                for id in ids {
                    h.update(id.0.to_le_bytes());
                }
            }
        }
        for tx in &txs {
            h.update(tx.account.to_le_bytes());
            h.update(tx.nonce.to_le_bytes());
            h.update(tx.payload_size.to_le_bytes());
        }
        let hash = BlockHash(h.finalize().into());
        Block { height, parent, txs, proposer, hash }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("block height {got} does not extend ledger height {expected}")]
    HeightMismatch { expected: u64, got: u64 },
    #[error("block at height {height} does not link to the ledger tip")]
    ParentMismatch { height: u64 },
}

/// Committed chain plus the per-account nonce frontier derived from it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    blocks: Vec<Arc<Block>>,
    next_nonce: BTreeMap<u64, u64>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of committed blocks, which is also the next height.
    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn tip_hash(&self) -> BlockHash {
        self.blocks.last().map_or(BlockHash::GENESIS, |b| b.hash)
    }

    pub fn get(&self, height: u64) -> Option<&Arc<Block>> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn next_nonce(&self, account: u64) -> u64 {
        self.next_nonce.get(&account).copied().unwrap_or(0)
    }

    pub fn is_committed(&self, id: TxId) -> bool {
        id.nonce < self.next_nonce(id.account)
    }

    pub fn append(&mut self, block: Arc<Block>) -> Result<(), LedgerError> {
        if block.height != self.height() {
            return Err(LedgerError::HeightMismatch { expected: self.height(), got: block.height });
        }
        if block.parent != self.tip_hash() {
            return Err(LedgerError::ParentMismatch { height: block.height });
        }
        for tx in &block.txs {
            let next = self.next_nonce.entry(tx.account).or_insert(0);
            *next = (*next).max(tx.nonce + 1);
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn tx_count(&self) -> usize {
        self.blocks.iter().map(|b| b.txs.len()).sum()
    }
}

/// Canonical superblock body: all decided batches merged, sorted by
/// (account, nonce, proposer), one copy per tx id, and trimmed so every
/// account continues its committed nonce sequence without gaps.
pub fn merge_batches<'a>(
    ledger: &Ledger,
    batches: impl IntoIterator<Item = (NodeId, &'a [Tx])>,
) -> Vec<Tx> {
    let mut all: Vec<(u64, u64, NodeId, Tx)> = Vec::new();
    for (p, txs) in batches {
        all.extend(txs.iter().map(|tx| (tx.account, tx.nonce, p, *tx)));
    }
    all.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut out: Vec<Tx> = Vec::with_capacity(all.len());
    let mut account = None;
    let mut expected = 0;
    for (a, nonce, _, tx) in all {
        if account != Some(a) {
            account = Some(a);
            expected = ledger.next_nonce(a);
        }
        if nonce == expected {
            out.push(tx);
            expected += 1;
        }
    }
    out
}
