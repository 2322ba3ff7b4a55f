//! Sampling protocol in the Snowflake style, one decision per height.
//!
//! A node that has no preferred block at its height adopts the first one it
//! is queried about, or after `rank * propose_timeout` proposes its own
//! (rank = `(id - height) mod n`, so one node per height proposes at once).
//! It then polls `k` random peers at a time. A poll where at least `alpha`
//! replies name the same block counts towards that block; `beta`
//! consecutive polls for the preferred block decide it. Transactions are
//! pushed to all peers on arrival and pushed again while they stay pending.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{AdmitOutcome, Block, BlockHash, Body, Ctx, Mempool, Proposer, ProtocolParams, SafetyRecord, TimerKey, Tx, TxId};
use crate::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Msg {
    Query { height: u64, poll: u64, block: Arc<Block> },
    Reply { height: u64, poll: u64, block: Option<Arc<Block>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timer {
    Propose(u64),
    PollTimeout(u64),
    Regossip,
}

#[derive(Debug)]
struct Poll {
    id: u64,
    sample: Vec<NodeId>,
    replies: BTreeMap<NodeId, Option<BlockHash>>,
}

#[derive(Debug)]
pub struct State {
    mempool: Mempool,
    height: u64,
    pref: Option<Arc<Block>>,
    /// Consecutive successful polls for `pref`.
    count: u32,
    seen: BTreeMap<BlockHash, Arc<Block>>,
    poll: Option<Poll>,
    next_poll: u64,
    propose_armed: Option<u64>,
    gossiped: BTreeMap<TxId, SimTime>,
    regossip_armed: bool,
}

fn wrap(m: Msg) -> Body {
    Body::Snow(m)
}

impl State {
    pub fn new(_params: &ProtocolParams) -> Self {
        State {
            mempool: Mempool::new(),
            height: 0,
            pref: None,
            count: 0,
            seen: BTreeMap::new(),
            poll: None,
            next_poll: 0,
            propose_armed: None,
            gossiped: BTreeMap::new(),
            regossip_armed: false,
        }
    }

    pub fn record(&self) -> SafetyRecord {
        SafetyRecord::None
    }

    pub fn pending(&self) -> usize {
        self.mempool.len()
    }

    pub fn dedup_hits(&self) -> u64 {
        self.mempool.dedup_hits()
    }

    pub fn preference(&self) -> Option<&Arc<Block>> {
        self.pref.as_ref()
    }

    pub fn on_start(&mut self, ctx: &mut Ctx<'_>, _restarted: bool) {
        self.height = ctx.height();
        self.arm_regossip(ctx);
    }

    pub fn on_client_tx(&mut self, ctx: &mut Ctx<'_>, tx: Tx) {
        if self.mempool.admit(tx, ctx.ledger) == AdmitOutcome::Admitted {
            self.gossiped.insert(tx.id(), ctx.now);
            ctx.broadcast(Body::Tx(tx));
            self.maybe_arm_propose(ctx);
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: Body) {
        match body {
            Body::Tx(tx) => {
                if self.mempool.admit(tx, ctx.ledger) == AdmitOutcome::Admitted {
                    // Received copies count as gossiped now.
                    self.gossiped.insert(tx.id(), ctx.now);
                    self.maybe_arm_propose(ctx);
                }
            }
            Body::Snow(Msg::Query { height, poll, block }) => self.on_query(ctx, from, height, poll, block),
            Body::Snow(Msg::Reply { height, poll, block }) => self.on_reply(ctx, from, height, poll, block),
            _ => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, key: TimerKey) {
        match key {
            TimerKey::Snow(Timer::Propose(h)) if h == self.height => {
                self.propose_armed = None;
                if self.pref.is_none() {
                    let txs = self.mempool.ready_batch(ctx.ledger, ctx.params.block_cap);
                    if !txs.is_empty() {
                        let b = Arc::new(Block::new(h, ctx.ledger.tip_hash(), txs, Proposer::Node(ctx.id)));
                        self.adopt(ctx, b);
                    }
                }
            }
            TimerKey::Snow(Timer::PollTimeout(p)) if self.poll.as_ref().is_some_and(|x| x.id == p) => {
                self.conclude(ctx, None);
            }
            TimerKey::Snow(Timer::Regossip) => {
                self.regossip_armed = false;
                self.regossip(ctx);
                self.arm_regossip(ctx);
            }
            _ => {}
        }
    }

    pub fn on_ledger_advance(&mut self, ctx: &mut Ctx<'_>) {
        if ctx.height() > self.height {
            self.mempool.prune(ctx.ledger);
            self.next_height(ctx);
        }
    }

    pub fn on_peer_up(&mut self, _ctx: &mut Ctx<'_>, _peer: NodeId) {}

    fn arm_regossip(&mut self, ctx: &mut Ctx<'_>) {
        if !self.regossip_armed {
            self.regossip_armed = true;
            ctx.set_timer(ctx.params.regossip_interval, TimerKey::Snow(Timer::Regossip));
        }
    }

    /// Pushes pending txs not sent for a full interval to every peer again,
    /// one message per tx, oldest first, up to the cap.
    fn regossip(&mut self, ctx: &mut Ctx<'_>) {
        let ledger = &*ctx.ledger;
        self.gossiped.retain(|id, _| !ledger.is_committed(*id));
        let cutoff = ctx.now;
        let interval = ctx.params.regossip_interval;
        let mut due: Vec<(SimTime, TxId)> = self
            .gossiped
            .iter()
            .filter(|(_, t)| cutoff.saturating_since(**t) >= interval)
            .map(|(id, t)| (*t, *id))
            .collect();
        due.sort_unstable();
        due.truncate(ctx.params.regossip_cap);
        for (_, id) in due {
            self.gossiped.insert(id, ctx.now);
            ctx.broadcast(Body::Tx(Tx { account: id.account, nonce: id.nonce, payload_size: 100 }));
        }
    }

    fn rank(&self, ctx: &Ctx<'_>) -> u64 {
        let n = ctx.n() as u64;
        (ctx.id.0 as u64 + n - self.height % n) % n
    }

    fn maybe_arm_propose(&mut self, ctx: &mut Ctx<'_>) {
        if self.pref.is_some() || self.propose_armed == Some(self.height) {
            return;
        }
        if !self.mempool.has_ready(ctx.ledger) {
            return;
        }
        self.propose_armed = Some(self.height);
        let delay = ctx.params.propose_timeout * self.rank(ctx) as u32;
        ctx.set_timer(delay, TimerKey::Snow(Timer::Propose(self.height)));
    }

    fn adopt(&mut self, ctx: &mut Ctx<'_>, block: Arc<Block>) {
        self.seen.insert(block.hash, block.clone());
        self.pref = Some(block);
        self.count = 0;
        if self.poll.is_none() {
            self.start_poll(ctx);
        }
    }

    fn start_poll(&mut self, ctx: &mut Ctx<'_>) {
        let Some(pref) = self.pref.clone() else { return };
        let peers: Vec<NodeId> = ctx.peers().collect();
        let k = ctx.params.snow.k.min(peers.len());
        let chosen: Vec<NodeId> = sample(ctx.rng, peers.len(), k).into_iter().map(|i| peers[i]).collect();
        self.next_poll += 1;
        let id = self.next_poll;
        for p in &chosen {
            ctx.send(*p, wrap(Msg::Query { height: self.height, poll: id, block: pref.clone() }));
        }
        self.poll = Some(Poll { id, sample: chosen, replies: BTreeMap::new() });
        ctx.set_timer(ctx.params.poll_timeout, TimerKey::Snow(Timer::PollTimeout(id)));
    }

    fn on_query(&mut self, ctx: &mut Ctx<'_>, from: NodeId, height: u64, poll: u64, block: Arc<Block>) {
        let answer = if height < ctx.height() {
            ctx.ledger.get(height).cloned()
        } else if height == ctx.height() {
            if self.pref.is_none() && block.height == height && block.parent == ctx.ledger.tip_hash() {
                self.adopt(ctx, block);
            }
            self.pref.clone()
        } else {
            None
        };
        ctx.send(from, wrap(Msg::Reply { height, poll, block: answer }));
    }

    fn on_reply(&mut self, ctx: &mut Ctx<'_>, from: NodeId, height: u64, poll: u64, block: Option<Arc<Block>>) {
        if height != self.height {
            return;
        }
        let Some(p) = self.poll.as_mut().filter(|p| p.id == poll) else { return };
        if !p.sample.contains(&from) || p.replies.contains_key(&from) {
            return;
        }
        if let Some(b) = &block {
            self.seen.entry(b.hash).or_insert_with(|| b.clone());
        }
        p.replies.insert(from, block.map(|b| b.hash));
        let alpha = ctx.params.snow.alpha;
        let mut counts: BTreeMap<BlockHash, usize> = BTreeMap::new();
        for h in p.replies.values().flatten() {
            *counts.entry(*h).or_default() += 1;
        }
        let best = counts.iter().max_by_key(|(h, c)| (**c, core::cmp::Reverse(**h))).map(|(h, c)| (*h, *c));
        let outstanding = p.sample.len() - p.replies.len();
        match best {
            Some((h, c)) if c >= alpha => self.conclude(ctx, Some(h)),
            Some((_, c)) if c + outstanding < alpha => self.conclude(ctx, None),
            None if outstanding < alpha => self.conclude(ctx, None),
            _ => {}
        }
    }

    /// Block named most often in the current poll, ties to the lower hash,
    /// if it strictly beats our own preference.
    fn lean(&self) -> Option<BlockHash> {
        let p = self.poll.as_ref()?;
        let mut counts: BTreeMap<BlockHash, usize> = BTreeMap::new();
        for h in p.replies.values().flatten() {
            *counts.entry(*h).or_default() += 1;
        }
        let own = self.pref.as_ref().and_then(|b| counts.get(&b.hash)).copied().unwrap_or(0);
        let (h, c) = counts.into_iter().max_by_key(|(h, c)| (*c, core::cmp::Reverse(*h)))?;
        (c > own).then_some(h)
    }

    fn conclude(&mut self, ctx: &mut Ctx<'_>, winner: Option<BlockHash>) {
        // A failed poll still drifts towards the plurality, so a split with
        // no alpha majority anywhere cannot persist.
        let lean = if winner.is_none() { self.lean() } else { None };
        self.poll = None;
        match winner {
            Some(h) if self.pref.as_ref().is_some_and(|p| p.hash == h) => self.count += 1,
            Some(h) => {
                if let Some(b) = self.seen.get(&h).cloned() {
                    self.pref = Some(b);
                }
                self.count = 0;
            }
            None => {
                if let Some(b) = lean.and_then(|h| self.seen.get(&h).cloned()) {
                    self.pref = Some(b);
                }
                self.count = 0;
            }
        }
        if self.count >= ctx.params.snow.beta {
            let block = self.pref.clone().expect("counted polls imply a preference");
            if ctx.commit(block.clone()) {
                self.mempool.prune_accounts(ctx.ledger, &block.txs);
            }
            self.next_height(ctx);
        } else {
            self.start_poll(ctx);
        }
    }

    fn next_height(&mut self, ctx: &mut Ctx<'_>) {
        self.height = ctx.height();
        self.pref = None;
        self.count = 0;
        self.poll = None;
        let h = self.height;
        self.seen.retain(|_, b| b.height >= h);
        self.maybe_arm_propose(ctx);
    }
}
