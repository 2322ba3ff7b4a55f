//! Rotating-leader protocol with votes, locks and view change.
//!
//! Round `r` is led by node `r mod n`. A leader that has just seen a quorum
//! of votes for the previous round proposes a fresh block at once; otherwise
//! it waits for a quorum of `NewView` messages and re-proposes the
//! highest-round lock among them (or a fresh block if none is locked at its
//! height). Nodes vote once per round, lock on what they vote for, and commit
//! a block when they see a quorum of votes for it. A round without a commit
//! for `view_timeout` moves everyone to the next round.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Block, BlockHash, Body, Ctx, Mempool, Proposer, ProtocolParams, SafetyRecord, TimerKey, Tx};
use crate::NodeId;

pub type Lock = Option<(u64, Arc<Block>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Msg {
    Propose { round: u64, block: Arc<Block>, justify: Option<Arc<Block>> },
    Vote { round: u64, height: u64, hash: BlockHash },
    NewView { round: u64, height: u64, lock: Lock },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timer {
    RoundTimeout(u64),
    Idle(u64),
}

/// Crash-surviving part of the protocol state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub round: u64,
    pub voted_round: Option<u64>,
    pub proposed_round: Option<u64>,
    pub lock: Lock,
}

#[derive(Debug)]
pub struct State {
    rec: Record,
    mempool: Mempool,
    /// Round entered through a quorum certificate rather than a timeout.
    via_qc: bool,
    votes: BTreeMap<(u64, u64, BlockHash), BTreeSet<NodeId>>,
    blocks: BTreeMap<BlockHash, Arc<Block>>,
    new_views: BTreeMap<u64, BTreeMap<NodeId, (u64, Lock)>>,
    last_commit: Option<Arc<Block>>,
    my_vote: Option<Msg>,
    my_new_view: Option<Msg>,
    my_proposal: Option<Msg>,
}

fn leader(round: u64, n: usize) -> NodeId {
    NodeId::from((round % n as u64) as usize)
}

fn wrap(m: Msg) -> Body {
    Body::Leaderled(m)
}

impl State {
    pub fn new(_params: &ProtocolParams, record: &SafetyRecord) -> Self {
        let rec = match record {
            SafetyRecord::Leaderled(r) => r.clone(),
            _ => Record::default(),
        };
        State {
            rec,
            mempool: Mempool::new(),
            via_qc: false,
            votes: BTreeMap::new(),
            blocks: BTreeMap::new(),
            new_views: BTreeMap::new(),
            last_commit: None,
            my_vote: None,
            my_new_view: None,
            my_proposal: None,
        }
    }

    pub fn record(&self) -> SafetyRecord {
        SafetyRecord::Leaderled(self.rec.clone())
    }

    pub fn pending(&self) -> usize {
        self.mempool.len()
    }

    pub fn dedup_hits(&self) -> u64 {
        self.mempool.dedup_hits()
    }

    pub fn round(&self) -> u64 {
        self.rec.round
    }

    pub fn on_start(&mut self, ctx: &mut Ctx<'_>, restarted: bool) {
        self.last_commit = ctx.ledger.blocks().last().cloned();
        self.clear_stale_lock(ctx);
        if restarted {
            // Re-enter the recorded round through the timeout path so the
            // leader of the next round hears from us.
            let r = self.rec.round;
            self.arm_timeout(ctx, r);
        } else {
            self.enter_round(ctx, 0, true);
        }
    }

    pub fn on_client_tx(&mut self, ctx: &mut Ctx<'_>, tx: Tx) {
        if self.mempool.admit(tx, ctx.ledger) == super::AdmitOutcome::Admitted {
            ctx.broadcast(Body::Tx(tx));
            self.maybe_propose_fresh(ctx);
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: Body) {
        match body {
            Body::Tx(tx) => {
                if self.mempool.admit(tx, ctx.ledger) == super::AdmitOutcome::Admitted {
                    self.maybe_propose_fresh(ctx);
                }
            }
            Body::Leaderled(Msg::Propose { round, block, justify }) => {
                self.on_propose(ctx, from, round, block, justify)
            }
            Body::Leaderled(Msg::Vote { round, height, hash }) => {
                if height >= ctx.height() {
                    self.votes.entry((height, round, hash)).or_default().insert(from);
                    self.try_commit(ctx, height, round, hash);
                }
            }
            Body::Leaderled(Msg::NewView { round, height, lock }) => {
                self.on_new_view(ctx, from, round, height, lock)
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, key: TimerKey) {
        match key {
            TimerKey::Leaderled(Timer::RoundTimeout(r)) if r == self.rec.round => {
                self.enter_round(ctx, r + 1, false);
            }
            TimerKey::Leaderled(Timer::Idle(r)) if r == self.rec.round => {
                self.propose_fresh(ctx, true);
            }
            _ => {}
        }
    }

    pub fn on_ledger_advance(&mut self, ctx: &mut Ctx<'_>) {
        self.last_commit = ctx.ledger.blocks().last().cloned();
        self.mempool.prune(ctx.ledger);
        self.after_commit(ctx);
    }

    pub fn on_peer_up(&mut self, ctx: &mut Ctx<'_>, peer: NodeId) {
        for m in [&self.my_new_view, &self.my_proposal, &self.my_vote].into_iter().flatten() {
            ctx.send(peer, wrap(m.clone()));
        }
    }

    fn arm_timeout(&mut self, ctx: &mut Ctx<'_>, r: u64) {
        ctx.set_timer(ctx.params.view_timeout, TimerKey::Leaderled(Timer::RoundTimeout(r)));
    }

    fn enter_round(&mut self, ctx: &mut Ctx<'_>, r: u64, via_qc: bool) {
        self.rec.round = r;
        self.via_qc = via_qc;
        self.my_vote = None;
        self.my_proposal = None;
        self.new_views.retain(|&nr, _| nr >= r);
        self.arm_timeout(ctx, r);
        if via_qc {
            self.my_new_view = None;
            self.maybe_propose_fresh(ctx);
        } else {
            let height = ctx.height();
            let lock = self.rec.lock.clone();
            let m = Msg::NewView { round: r, height, lock: lock.clone() };
            self.my_new_view = Some(m.clone());
            ctx.broadcast(wrap(m));
            self.new_views.entry(r).or_default().insert(ctx.id, (height, lock));
            self.try_propose_after_view_change(ctx);
        }
    }

    fn is_leader(&self, ctx: &Ctx<'_>) -> bool {
        leader(self.rec.round, ctx.n()) == ctx.id
    }

    fn already_proposed(&self) -> bool {
        self.rec.proposed_round.is_some_and(|p| p >= self.rec.round)
    }

    /// Happy path: a leader that entered its round through a certificate
    /// proposes as soon as it has something; `force` proposes an empty block.
    fn maybe_propose_fresh(&mut self, ctx: &mut Ctx<'_>) {
        if !self.via_qc || !self.is_leader(ctx) || self.already_proposed() {
            return;
        }
        if self.mempool.has_ready(ctx.ledger) {
            self.propose_fresh(ctx, false);
        } else {
            let r = self.rec.round;
            ctx.set_timer(ctx.params.idle_propose, TimerKey::Leaderled(Timer::Idle(r)));
        }
    }

    fn propose_fresh(&mut self, ctx: &mut Ctx<'_>, force: bool) {
        if !self.via_qc || !self.is_leader(ctx) || self.already_proposed() {
            return;
        }
        let txs = self.mempool.ready_batch(ctx.ledger, ctx.params.block_cap);
        if txs.is_empty() && !force {
            return;
        }
        let block = Arc::new(Block::new(ctx.height(), ctx.ledger.tip_hash(), txs, Proposer::Node(ctx.id)));
        self.propose(ctx, block);
    }

    fn try_propose_after_view_change(&mut self, ctx: &mut Ctx<'_>) {
        if self.via_qc || !self.is_leader(ctx) || self.already_proposed() {
            return;
        }
        let Some(views) = self.new_views.get(&self.rec.round) else { return };
        if views.len() < ctx.quorum() {
            return;
        }
        let h = ctx.height();
        if views.values().any(|(vh, _)| *vh > h) {
            // Someone has committed past us; proposing at our height could
            // contradict that. Let catch-up and the next round handle it.
            return;
        }
        let locked = views
            .values()
            .filter_map(|(_, l)| l.as_ref())
            .filter(|(_, b)| b.height == h)
            .max_by_key(|(r, _)| *r)
            .map(|(_, b)| b.clone());
        let block = match locked {
            Some(b) => b,
            None => {
                let txs = self.mempool.ready_batch(ctx.ledger, ctx.params.block_cap);
                Arc::new(Block::new(h, ctx.ledger.tip_hash(), txs, Proposer::Node(ctx.id)))
            }
        };
        self.propose(ctx, block);
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>, block: Arc<Block>) {
        let round = self.rec.round;
        self.rec.proposed_round = Some(round);
        let m = Msg::Propose { round, block: block.clone(), justify: self.last_commit.clone() };
        self.my_proposal = Some(m.clone());
        ctx.broadcast(wrap(m));
        self.on_propose(ctx, ctx.id, round, block, None);
    }

    fn on_propose(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: NodeId,
        round: u64,
        block: Arc<Block>,
        justify: Option<Arc<Block>>,
    ) {
        if from != leader(round, ctx.n()) {
            return;
        }
        if let Some(j) = justify {
            // The leader only attaches a block it has committed.
            if j.height == ctx.height() && ctx.commit(j.clone()) {
                self.last_commit = Some(j);
                self.after_commit(ctx);
            }
        }
        if round < self.rec.round {
            return;
        }
        if round > self.rec.round {
            self.enter_round(ctx, round, true);
        }
        self.blocks.insert(block.hash, block.clone());
        let fresh_round = self.rec.voted_round.is_none_or(|v| round > v);
        if fresh_round && block.height == ctx.height() && block.parent == ctx.ledger.tip_hash() {
            self.rec.voted_round = Some(round);
            self.rec.lock = Some((round, block.clone()));
            let m = Msg::Vote { round, height: block.height, hash: block.hash };
            self.my_vote = Some(m.clone());
            ctx.broadcast(wrap(m));
            self.votes.entry((block.height, round, block.hash)).or_default().insert(ctx.id);
        }
        self.try_commit(ctx, block.height, round, block.hash);
    }

    fn on_new_view(&mut self, ctx: &mut Ctx<'_>, from: NodeId, round: u64, height: u64, lock: Lock) {
        if round < self.rec.round {
            return;
        }
        self.new_views.entry(round).or_default().insert(from, (height, lock));
        if round > self.rec.round {
            // Jump once t+1 peers have moved to this round or beyond.
            let mut senders = BTreeSet::new();
            for (_, vs) in self.new_views.range(round..) {
                senders.extend(vs.keys().copied());
            }
            if senders.len() > ctx.t() {
                self.enter_round(ctx, round, false);
            }
        } else {
            self.try_propose_after_view_change(ctx);
        }
    }

    fn try_commit(&mut self, ctx: &mut Ctx<'_>, height: u64, round: u64, hash: BlockHash) {
        if height != ctx.height() {
            return;
        }
        let enough = self.votes.get(&(height, round, hash)).is_some_and(|s| s.len() >= ctx.quorum());
        if !enough {
            return;
        }
        let Some(block) = self.blocks.get(&hash).cloned() else { return };
        if ctx.commit(block.clone()) {
            self.last_commit = Some(block);
            self.after_commit(ctx);
            if round >= self.rec.round {
                self.enter_round(ctx, round + 1, true);
            }
        }
    }

    fn clear_stale_lock(&mut self, ctx: &Ctx<'_>) {
        if self.rec.lock.as_ref().is_some_and(|(_, b)| b.height < ctx.height()) {
            self.rec.lock = None;
        }
    }

    fn after_commit(&mut self, ctx: &mut Ctx<'_>) {
        let h = ctx.height();
        self.clear_stale_lock(ctx);
        if let Some(b) = &self.last_commit {
            self.mempool.prune_accounts(ctx.ledger, &b.txs);
        }
        if self.votes.keys().next().is_some_and(|k| k.0 < h) {
            self.votes.retain(|k, _| k.0 >= h);
            self.blocks.retain(|_, b| b.height >= h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leader_rotates() {
        assert_eq!(leader(0, 4), NodeId(0));
        assert_eq!(leader(5, 4), NodeId(1));
    }
}
