//! Reference replicated-ledger protocols.
//!
//! Each node is a [`Replica`]: a host that owns the committed [`Ledger`],
//! watches links to its peers, catches up from peers when it falls behind,
//! and drives one protocol engine. Replicas are plain state machines; every
//! input (`on_client_tx`, `on_message`, `on_timer`) appends its effects to an
//! [`Outbox`] that the caller turns into network sends and timers. The same
//! machine runs under the simulator and in live-local mode.
//!
//! What survives a crash is the [`Durable`] part: the ledger plus a small
//! safety record (votes and locks, or the sent-message log of the leaderless
//! protocol), so a restarted node never contradicts what it said before.

mod binary;
mod block;
pub mod leaderled;
pub mod leaderless;
mod params;
mod replica;
pub mod scheduled;
pub mod snow;
mod tx;

pub use binary::{BcMsg, BinaryConsensus, BcLog};
pub use block::{merge_batches, Block, BlockHash, Ledger, LedgerError, Proposer};
pub use params::{default_t, ParamsError, ProtocolKind, ProtocolParams, SnowParams};
pub(crate) use params::secs;
pub use replica::{Durable, LinkParams, Replica, SafetyRecord};
pub use tx::{AdmitOutcome, Mempool, Tx, TxId};

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{NodeId, SimTime};

/// Everything a node sends carries its committed height, which is how peers
/// notice that they are behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub height: u64,
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Body {
    /// Gossiped or forwarded transaction.
    Tx(Tx),
    Heartbeat,
    /// Sent once by a node that just restarted.
    Hello,
    Probe(u64),
    ProbeAck(u64),
    SyncRequest { from: u64 },
    SyncResponse { blocks: Vec<Arc<Block>> },
    Leaderled(leaderled::Msg),
    Leaderless(leaderless::Msg),
    Scheduled(scheduled::Msg),
    Snow(snow::Msg),
}

impl Body {
    /// Link-monitor traffic that flows even to peers considered down.
    fn is_control(&self) -> bool {
        matches!(self, Body::Probe(_) | Body::ProbeAck(_) | Body::Hello)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimerKey {
    Heartbeat,
    Poll,
    SyncCheck,
    Leaderled(leaderled::Timer),
    Leaderless(leaderless::Timer),
    Scheduled(scheduled::Timer),
    Snow(snow::Timer),
}

/// Effects produced by one input.
#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(NodeId, Envelope)>,
    pub timers: Vec<(Duration, TimerKey)>,
    /// Blocks appended to the ledger, in height order.
    pub commits: Vec<Arc<Block>>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.timers.is_empty() && self.commits.is_empty()
    }

    pub fn clear(&mut self) {
        self.sends.clear();
        self.timers.clear();
        self.commits.clear();
    }
}

/// What a protocol engine sees while handling one input.
pub struct Ctx<'a> {
    pub now: SimTime,
    pub id: NodeId,
    pub params: &'a ProtocolParams,
    pub ledger: &'a mut Ledger,
    pub rng: &'a mut ChaCha8Rng,
    up: &'a [bool],
    out: &'a mut Outbox,
}

impl Ctx<'_> {
    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn t(&self) -> usize {
        self.params.t()
    }

    pub fn quorum(&self) -> usize {
        self.params.quorum()
    }

    pub fn height(&self) -> u64 {
        self.ledger.height()
    }

    pub fn is_up(&self, peer: NodeId) -> bool {
        self.up.get(peer.index()).copied().unwrap_or(false)
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        let me = self.id;
        (0..self.params.n).map(NodeId::from).filter(move |p| *p != me)
    }

    /// Sends unless `to` is this node or a peer whose link is down.
    pub fn send(&mut self, to: NodeId, body: Body) {
        if to == self.id || (!body.is_control() && !self.is_up(to)) {
            return;
        }
        let height = self.ledger.height();
        self.out.sends.push((to, Envelope { height, body }));
    }

    pub fn broadcast(&mut self, body: Body) {
        for p in 0..self.params.n {
            self.send(NodeId::from(p), body.clone());
        }
    }

    pub fn set_timer(&mut self, after: Duration, key: TimerKey) {
        self.out.timers.push((after, key));
    }

    /// Appends `block` if it extends the ledger; returns whether it did.
    pub fn commit(&mut self, block: Arc<Block>) -> bool {
        if self.ledger.append(block.clone()).is_err() {
            return false;
        }
        self.out.commits.push(block);
        true
    }
}
