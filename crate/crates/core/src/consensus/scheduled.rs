//! Mempool-less protocol with a precomputed leader schedule.
//!
//! Time is cut into slots; each leader holds `slots_per_leader` consecutive
//! slots and every epoch of `n * slots_per_leader` slots uses a fresh seeded
//! permutation of the nodes. A node that receives a client tx forwards it to
//! the current and the next distinct leader, remembers it, and forwards it
//! again if it is still uncommitted two slots later.
//!
//! At each slot start nodes send the leader a status (height and lock). At
//! mid-slot the leader, once it holds a quorum of statuses, proposes the
//! highest lock at its height or a fresh block from what was forwarded to
//! it. Nodes acknowledge only proposals for the slot they are in, lock on
//! them, and commit on a quorum of acks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Block, BlockHash, Body, Ctx, Proposer, ProtocolParams, SafetyRecord, TimerKey, Tx, TxId};
use crate::{NodeId, SimTime};

pub type Lock = Option<(u64, Arc<Block>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Msg {
    Status { slot: u64, height: u64, lock: Lock },
    Propose { slot: u64, block: Arc<Block>, justify: Option<Arc<Block>> },
    Ack { slot: u64, height: u64, hash: BlockHash },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timer {
    SlotStart(u64),
    Propose(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub voted_slot: Option<u64>,
    pub proposed_slot: Option<u64>,
    pub lock: Lock,
}

/// Slot-to-leader mapping, a pure function of the schedule seed.
#[derive(Debug, Clone)]
pub struct Schedule {
    n: usize,
    slots_per_leader: u64,
    seed: u64,
    cache: BTreeMap<u64, Vec<NodeId>>,
}

impl Schedule {
    pub fn new(n: usize, slots_per_leader: u32, seed: u64) -> Self {
        Schedule { n, slots_per_leader: slots_per_leader as u64, seed, cache: BTreeMap::new() }
    }

    fn epoch_len(&self) -> u64 {
        self.n as u64 * self.slots_per_leader
    }

    pub fn leader(&mut self, slot: u64) -> NodeId {
        let epoch = slot / self.epoch_len();
        let idx = ((slot % self.epoch_len()) / self.slots_per_leader) as usize;
        let (n, seed) = (self.n, self.seed);
        if self.cache.len() > 4 && !self.cache.contains_key(&epoch) {
            self.cache.pop_first();
        }
        let perm = self.cache.entry(epoch).or_insert_with(|| {
            let mut v: Vec<NodeId> = (0..n).map(NodeId::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            v.shuffle(&mut rng);
            v
        });
        perm[idx]
    }

    /// First leader after `slot`'s that is a different node.
    pub fn next_distinct(&mut self, slot: u64) -> NodeId {
        let cur = self.leader(slot);
        let mut s = slot + 1;
        loop {
            let l = self.leader(s);
            if l != cur {
                return l;
            }
            s += 1;
        }
    }
}

#[derive(Debug)]
pub struct State {
    rec: Record,
    schedule: Schedule,
    slot_len: Duration,
    slot: u64,
    /// Txs forwarded to this node for when it leads.
    buffer: BTreeMap<TxId, Tx>,
    /// Client txs this node is responsible for, with the slot of the last
    /// forward.
    forwards: BTreeMap<TxId, (Tx, u64)>,
    statuses: BTreeMap<u64, BTreeMap<NodeId, (u64, Lock)>>,
    acks: BTreeMap<(u64, u64, BlockHash), BTreeSet<NodeId>>,
    blocks: BTreeMap<BlockHash, Arc<Block>>,
    my_status: Option<(NodeId, Msg)>,
    my_proposal: Option<Msg>,
    my_ack: Option<Msg>,
}

fn wrap(m: Msg) -> Body {
    Body::Scheduled(m)
}

impl State {
    pub fn new(params: &ProtocolParams, record: &SafetyRecord) -> Self {
        let rec = match record {
            SafetyRecord::Scheduled(r) => r.clone(),
            _ => Record::default(),
        };
        State {
            rec,
            schedule: Schedule::new(params.n, params.slots_per_leader, params.schedule_seed),
            slot_len: params.slot_length,
            slot: 0,
            buffer: BTreeMap::new(),
            forwards: BTreeMap::new(),
            statuses: BTreeMap::new(),
            acks: BTreeMap::new(),
            blocks: BTreeMap::new(),
            my_status: None,
            my_proposal: None,
            my_ack: None,
        }
    }

    pub fn record(&self) -> SafetyRecord {
        SafetyRecord::Scheduled(self.rec.clone())
    }

    pub fn pending(&self) -> usize {
        self.forwards.len() + self.buffer.len()
    }

    pub fn dedup_hits(&self) -> u64 {
        0
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn leader_of(&mut self, slot: u64) -> NodeId {
        self.schedule.leader(slot)
    }

    fn slot_start(&self, slot: u64) -> SimTime {
        SimTime::from_micros(slot * self.slot_len.as_micros() as u64)
    }

    fn slot_at(&self, t: SimTime) -> u64 {
        t.as_micros() / self.slot_len.as_micros() as u64
    }

    pub fn on_start(&mut self, ctx: &mut Ctx<'_>, _restarted: bool) {
        let s = self.slot_at(ctx.now);
        self.begin_slot(ctx, s);
    }

    pub fn on_client_tx(&mut self, ctx: &mut Ctx<'_>, tx: Tx) {
        if ctx.ledger.is_committed(tx.id()) || self.forwards.contains_key(&tx.id()) {
            return;
        }
        self.forwards.insert(tx.id(), (tx, self.slot));
        self.forward(ctx, tx);
    }

    fn forward(&mut self, ctx: &mut Ctx<'_>, tx: Tx) {
        let cur = self.schedule.leader(self.slot);
        let next = self.schedule.next_distinct(self.slot);
        for l in [cur, next] {
            if l == ctx.id {
                self.buffer.insert(tx.id(), tx);
            } else {
                ctx.send(l, Body::Tx(tx));
            }
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: NodeId, body: Body) {
        match body {
            Body::Tx(tx) => {
                if !ctx.ledger.is_committed(tx.id()) {
                    self.buffer.insert(tx.id(), tx);
                }
            }
            Body::Scheduled(Msg::Status { slot, height, lock }) => {
                if slot >= self.slot {
                    self.statuses.entry(slot).or_default().insert(from, (height, lock));
                    if slot == self.slot && ctx.now >= self.mid_slot(slot) {
                        self.try_propose(ctx, slot);
                    }
                }
            }
            Body::Scheduled(Msg::Propose { slot, block, justify }) => self.on_propose(ctx, from, slot, block, justify),
            Body::Scheduled(Msg::Ack { slot, height, hash }) => {
                if height >= ctx.height() {
                    self.acks.entry((height, slot, hash)).or_default().insert(from);
                    self.try_commit(ctx, height, slot, hash);
                }
            }
            _ => {}
        }
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx<'_>, key: TimerKey) {
        match key {
            TimerKey::Scheduled(Timer::SlotStart(s)) if s > self.slot => self.begin_slot(ctx, s),
            TimerKey::Scheduled(Timer::Propose(s)) if s == self.slot => self.try_propose(ctx, s),
            _ => {}
        }
    }

    pub fn on_ledger_advance(&mut self, ctx: &mut Ctx<'_>) {
        self.after_commit(ctx);
    }

    pub fn on_peer_up(&mut self, ctx: &mut Ctx<'_>, peer: NodeId) {
        if let Some((to, m)) = &self.my_status {
            if *to == peer {
                ctx.send(peer, wrap(m.clone()));
            }
        }
        for m in [&self.my_proposal, &self.my_ack].into_iter().flatten() {
            ctx.send(peer, wrap(m.clone()));
        }
    }

    fn mid_slot(&self, slot: u64) -> SimTime {
        self.slot_start(slot) + self.slot_len / 2
    }

    fn begin_slot(&mut self, ctx: &mut Ctx<'_>, s: u64) {
        self.slot = s;
        self.my_proposal = None;
        self.my_ack = None;
        self.statuses.retain(|&k, _| k >= s);
        let next_start = self.slot_start(s + 1);
        ctx.set_timer(next_start.saturating_since(ctx.now), TimerKey::Scheduled(Timer::SlotStart(s + 1)));

        let leader = self.schedule.leader(s);
        let height = ctx.height();
        let lock = self.rec.lock.clone();
        if leader == ctx.id {
            self.statuses.entry(s).or_default().insert(ctx.id, (height, lock));
            self.my_status = None;
            let mid = self.mid_slot(s);
            ctx.set_timer(mid.saturating_since(ctx.now), TimerKey::Scheduled(Timer::Propose(s)));
        } else {
            let m = Msg::Status { slot: s, height, lock };
            self.my_status = Some((leader, m.clone()));
            ctx.send(leader, wrap(m));
        }

        let stale: Vec<Tx> = self
            .forwards
            .values_mut()
            .filter(|(_, last)| last + 2 <= s)
            .map(|(tx, last)| {
                *last = s;
                *tx
            })
            .collect();
        for tx in stale {
            self.forward(ctx, tx);
        }
    }

    fn try_propose(&mut self, ctx: &mut Ctx<'_>, slot: u64) {
        if self.schedule.leader(slot) != ctx.id || self.rec.proposed_slot.is_some_and(|p| p >= slot) {
            return;
        }
        let Some(st) = self.statuses.get(&slot) else { return };
        if st.len() < ctx.quorum() {
            return;
        }
        let h = ctx.height();
        if st.values().any(|(sh, _)| *sh > h) {
            return;
        }
        let locked = st
            .values()
            .filter_map(|(_, l)| l.as_ref())
            .filter(|(_, b)| b.height == h)
            .max_by_key(|(s, _)| *s)
            .map(|(_, b)| b.clone());
        let block = match locked {
            Some(b) => b,
            None => {
                let txs = self.ready_batch(ctx);
                if txs.is_empty() {
                    return;
                }
                Arc::new(Block::new(h, ctx.ledger.tip_hash(), txs, Proposer::Node(ctx.id)))
            }
        };
        self.rec.proposed_slot = Some(slot);
        let justify = ctx.ledger.blocks().last().cloned();
        let m = Msg::Propose { slot, block: block.clone(), justify };
        self.my_proposal = Some(m.clone());
        ctx.broadcast(wrap(m));
        self.on_propose(ctx, ctx.id, slot, block, None);
    }

    fn ready_batch(&self, ctx: &Ctx<'_>) -> Vec<Tx> {
        let mut out = Vec::new();
        let mut account = None;
        let mut expected = 0;
        for tx in self.buffer.values() {
            if out.len() >= ctx.params.block_cap {
                break;
            }
            if account != Some(tx.account) {
                account = Some(tx.account);
                expected = ctx.ledger.next_nonce(tx.account);
            }
            if tx.nonce == expected {
                out.push(*tx);
                expected += 1;
            }
        }
        out
    }

    fn on_propose(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: NodeId,
        slot: u64,
        block: Arc<Block>,
        justify: Option<Arc<Block>>,
    ) {
        if self.schedule.leader(slot) != from {
            return;
        }
        if let Some(j) = justify {
            if j.height == ctx.height() && ctx.commit(j) {
                self.after_commit(ctx);
            }
        }
        self.blocks.insert(block.hash, block.clone());
        let fresh = self.rec.voted_slot.is_none_or(|v| slot > v);
        if slot == self.slot && fresh && block.height == ctx.height() && block.parent == ctx.ledger.tip_hash() {
            self.rec.voted_slot = Some(slot);
            self.rec.lock = Some((slot, block.clone()));
            let m = Msg::Ack { slot, height: block.height, hash: block.hash };
            self.my_ack = Some(m.clone());
            ctx.broadcast(wrap(m));
            self.acks.entry((block.height, slot, block.hash)).or_default().insert(ctx.id);
        }
        self.try_commit(ctx, block.height, slot, block.hash);
    }

    fn try_commit(&mut self, ctx: &mut Ctx<'_>, height: u64, slot: u64, hash: BlockHash) {
        if height != ctx.height() {
            return;
        }
        if !self.acks.get(&(height, slot, hash)).is_some_and(|s| s.len() >= ctx.quorum()) {
            return;
        }
        let Some(block) = self.blocks.get(&hash).cloned() else { return };
        if ctx.commit(block) {
            self.after_commit(ctx);
        }
    }

    fn after_commit(&mut self, ctx: &mut Ctx<'_>) {
        let h = ctx.height();
        if self.rec.lock.as_ref().is_some_and(|(_, b)| b.height < h) {
            self.rec.lock = None;
        }
        let ledger = &*ctx.ledger;
        self.buffer.retain(|id, _| !ledger.is_committed(*id));
        self.forwards.retain(|id, _| !ledger.is_committed(*id));
        self.acks.retain(|k, _| k.0 >= h);
        self.blocks.retain(|_, b| b.height >= h);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_gives_each_leader_consecutive_slots() {
        let mut s = Schedule::new(10, 2, 7);
        let mut seen = BTreeSet::new();
        for slot in (0..20).step_by(2) {
            assert_eq!(s.leader(slot), s.leader(slot + 1));
            seen.insert(s.leader(slot));
        }
        assert_eq!(seen.len(), 10);
        assert_ne!(s.next_distinct(0), s.leader(0));
    }

    #[test]
    fn schedule_is_seeded() {
        let a: Vec<_> = (0..40).map(|i| Schedule::new(10, 2, 1).leader(i)).collect();
        let b: Vec<_> = (0..40).map(|i| Schedule::new(10, 2, 1).leader(i)).collect();
        let c: Vec<_> = (0..40).map(|i| Schedule::new(10, 2, 2).leader(i)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
