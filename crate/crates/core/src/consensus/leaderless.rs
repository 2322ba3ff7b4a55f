//! Leaderless protocol: every node proposes a batch at each height, one
//! binary consensus per proposer decides whether that batch is in, and the
//! committed superblock merges all batches decided in.
//!
//! A node inputs 1 for a proposer when its batch arrives and, once any
//! instance has decided 1, inputs 0 for every instance it has not joined
//! yet. Binary-consensus traffic produced by one input is batched into one
//! message per peer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    merge_batches, AdmitOutcome, BcLog, BcMsg, BinaryConsensus, Block, Body, Ctx, Mempool, Proposer,
    ProtocolParams, SafetyRecord, TimerKey, Tx,
};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Msg {
    Proposal { height: u64, proposer: NodeId, txs: Arc<Vec<Tx>> },
    Bc { height: u64, items: Vec<(NodeId, BcMsg)> },
    ProposalRequest { height: u64, proposer: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timer {
    Idle(u64),
    Refetch(u64),
}

/// Write-ahead log for the current height: our own batch and every binary
/// consensus message we sent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Wal {
    pub height: u64,
    pub proposal: Option<Arc<Vec<Tx>>>,
    pub bc: BTreeMap<NodeId, BcLog>,
}

#[derive(Debug)]
pub struct State {
    mempool: Mempool,
    height: u64,
    proposal: Option<Arc<Vec<Tx>>>,
    proposals: BTreeMap<NodeId, Arc<Vec<Tx>>>,
    instances: Vec<BinaryConsensus>,
    any_one: bool,
    future: BTreeMap<u64, Vec<(NodeId, Msg)>>,
    restored: Option<Wal>,
    refetch_armed: bool,
}

fn wrap(m: Msg) -> Body {
    Body::Leaderless(m)
}

impl State {
    pub fn new(_params: &ProtocolParams, record: &SafetyRecord) -> Self {
        let restored = match record {
            SafetyRecord::Leaderless(w) => Some(w.clone()),
            _ => None,
        };
        State {
            mempool: Mempool::new(),
            height: 0,
            proposal: None,
            proposals: BTreeMap::new(),
            instances: Vec::new(),
            any_one: false,
            future: BTreeMap::new(),
            restored,
            refetch_armed: false,
        }
    }

    pub fn record(&self) -> SafetyRecord {
        SafetyRecord::Leaderless(Wal {
            height: self.height,
            proposal: self.proposal.clone(),
            bc: self.instances.iter().enumerate().map(|(i, bc)| (NodeId::from(i), bc.log().clone())).collect(),
        })
    }

    pub fn pending(&self) -> usize {
        self.mempool.len()
    }

    pub fn dedup_hits(&self) -> u64 {
        self.mempool.dedup_hits()
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn on_start(&mut self, ctx: &mut Ctx<'_>, _restarted: bool) {
        self.reset_height(ctx);
        if let Some(wal) = self.restored.take().filter(|w| w.height == self.height) {
            let (n, t) = (ctx.n(), ctx.t());
            for (p, log) in wal.bc {
                if let Some(slot) = self.instances.get_mut(p.index()) {
                    *slot = BinaryConsensus::from_log(ctx.id, p.index(), n, t, log);
                }
            }
            self.any_one = self.instances.iter().any(|b| b.decided() == Some(true));
            if let Some(txs) = wal.proposal {
                self.proposal = Some(txs.clone());
                self.proposals.insert(ctx.id, txs.clone());
                let height = self.height;
                ctx.broadcast(wrap(Msg::Proposal { height, proposer: ctx.id, txs }));
            }
            let items: Vec<_> = self
                .instances
                .iter()
                .enumerate()
                .flat_map(|(i, bc)| bc.sent().into_iter().map(move |m| (NodeId::from(i), m)))
                .collect();
            if !items.is_empty() {
                let height = self.height;
                ctx.broadcast(wrap(Msg::Bc { height, items }));
            }
        }
        self.kick(ctx);
    }

    pub fn on_client_tx(&mut self, ctx: &mut Ctx<'_>, tx: Tx) {
        if self.mempool.admit(tx, ctx.ledger) == AdmitOutcome::Admitted && self.proposal.is_none() {
            self.propose(ctx, false);
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: Body) {
        let Body::Leaderless(msg) = body else { return };
        let height = match &msg {
            Msg::Proposal { height, .. } | Msg::Bc { height, .. } | Msg::ProposalRequest { height, .. } => *height,
        };
        if height > self.height {
            self.future.entry(height).or_default().push((from, msg));
            return;
        }
        if height < self.height {
            return;
        }
        self.handle(ctx, from, msg);
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, key: TimerKey) {
        match key {
            TimerKey::Leaderless(Timer::Idle(h)) if h == self.height => self.propose(ctx, true),
            TimerKey::Leaderless(Timer::Refetch(h)) if h == self.height => {
                self.refetch_armed = false;
                self.try_finish(ctx);
            }
            _ => {}
        }
    }

    pub fn on_ledger_advance(&mut self, ctx: &mut Ctx<'_>) {
        if ctx.height() > self.height {
            self.mempool.prune(ctx.ledger);
            self.reset_height(ctx);
            self.kick(ctx);
        }
    }

    pub fn on_peer_up(&mut self, ctx: &mut Ctx<'_>, peer: NodeId) {
        let height = self.height;
        if let Some(txs) = &self.proposal {
            ctx.send(peer, wrap(Msg::Proposal { height, proposer: ctx.id, txs: txs.clone() }));
        }
        let items: Vec<_> = self
            .instances
            .iter()
            .enumerate()
            .flat_map(|(i, bc)| bc.sent().into_iter().map(move |m| (NodeId::from(i), m)))
            .collect();
        if !items.is_empty() {
            ctx.send(peer, wrap(Msg::Bc { height, items }));
        }
    }

    fn reset_height(&mut self, ctx: &mut Ctx<'_>) {
        let (n, t) = (ctx.n(), ctx.t());
        self.height = ctx.height();
        self.proposal = None;
        self.proposals.clear();
        self.instances = (0..n).map(|i| BinaryConsensus::new(ctx.id, i, n, t)).collect();
        self.any_one = false;
        self.refetch_armed = false;
        self.future = core::mem::take(&mut self.future).split_off(&self.height);
    }

    /// Starts work at the current height: replays buffered messages and
    /// proposes now if there is anything to propose, else arms the idle timer.
    fn kick(&mut self, ctx: &mut Ctx<'_>) {
        let h = self.height;
        if self.proposal.is_none() {
            if self.mempool.has_ready(ctx.ledger) {
                self.propose(ctx, false);
            } else {
                ctx.set_timer(ctx.params.idle_propose, TimerKey::Leaderless(Timer::Idle(h)));
            }
        }
        if let Some(buffered) = self.future.remove(&h) {
            for (from, msg) in buffered {
                if self.height != h {
                    break;
                }
                self.handle(ctx, from, msg);
            }
        }
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>, allow_empty: bool) {
        if self.proposal.is_some() {
            return;
        }
        let txs = self.mempool.ready_batch(ctx.ledger, ctx.params.block_cap);
        if txs.is_empty() && !allow_empty {
            return;
        }
        let txs = Arc::new(txs);
        let height = self.height;
        self.proposal = Some(txs.clone());
        ctx.broadcast(wrap(Msg::Proposal { height, proposer: ctx.id, txs: txs.clone() }));
        self.on_proposal(ctx, ctx.id, txs);
    }

    fn handle(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: Msg) {
        match msg {
            Msg::Proposal { proposer, txs, .. } => self.on_proposal(ctx, proposer, txs),
            Msg::Bc { items, .. } => {
                let mut out = Vec::new();
                for (p, m) in items {
                    let Some(bc) = self.instances.get_mut(p.index()) else { continue };
                    let produced = bc.on_msg(from, m);
                    out.extend(produced.into_iter().map(|m| (p, m)));
                }
                self.after_bc(ctx, out);
            }
            Msg::ProposalRequest { proposer, height } => {
                if let Some(txs) = self.proposals.get(&proposer) {
                    ctx.send(from, wrap(Msg::Proposal { height, proposer, txs: txs.clone() }));
                }
            }
        }
    }

    fn on_proposal(&mut self, ctx: &mut Ctx<'_>, proposer: NodeId, txs: Arc<Vec<Tx>>) {
        if proposer.index() >= self.instances.len() {
            return;
        }
        self.proposals.entry(proposer).or_insert(txs);
        // Hearing from anyone at this height is the cue to propose too.
        if self.proposal.is_none() {
            self.propose(ctx, true);
        }
        let mut out = Vec::new();
        if !self.any_one {
            let produced = self.instances[proposer.index()].input(true);
            out.extend(produced.into_iter().map(|m| (proposer, m)));
        }
        self.after_bc(ctx, out);
    }

    fn after_bc(&mut self, ctx: &mut Ctx<'_>, mut out: Vec<(NodeId, BcMsg)>) {
        if !self.any_one && self.instances.iter().any(|b| b.decided() == Some(true)) {
            self.any_one = true;
            for (i, bc) in self.instances.iter_mut().enumerate() {
                let produced = bc.input(false);
                out.extend(produced.into_iter().map(|m| (NodeId::from(i), m)));
            }
        }
        if !out.is_empty() {
            let height = self.height;
            ctx.broadcast(wrap(Msg::Bc { height, items: out }));
        }
        self.try_finish(ctx);
    }

    fn try_finish(&mut self, ctx: &mut Ctx<'_>) {
        if self.instances.iter().any(|b| b.decided().is_none()) {
            return;
        }
        let included: BTreeSet<NodeId> = (0..self.instances.len())
            .filter(|&i| self.instances[i].decided() == Some(true))
            .map(NodeId::from)
            .collect();
        let missing: Vec<NodeId> = included.iter().filter(|p| !self.proposals.contains_key(p)).copied().collect();
        if !missing.is_empty() {
            if !self.refetch_armed {
                self.refetch_armed = true;
                let height = self.height;
                for proposer in missing {
                    ctx.broadcast(wrap(Msg::ProposalRequest { height, proposer }));
                }
                ctx.set_timer(ctx.params.idle_propose, TimerKey::Leaderless(Timer::Refetch(height)));
            }
            return;
        }
        let txs = merge_batches(ctx.ledger, included.iter().map(|p| (*p, &self.proposals[p][..])));
        let block = Block::new(self.height, ctx.ledger.tip_hash(), txs, Proposer::Merged(included.into_iter().collect()));
        let block = Arc::new(block);
        if ctx.commit(block.clone()) {
            self.mempool.prune_accounts(ctx.ledger, &block.txs);
            self.reset_height(ctx);
            self.kick(ctx);
        }
    }
}
