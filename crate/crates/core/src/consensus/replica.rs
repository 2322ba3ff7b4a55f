use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    leaderled, leaderless, scheduled, snow, Body, Ctx, Envelope, Ledger, Outbox, ProtocolKind,
    ProtocolParams, TimerKey, Tx,
};
use crate::{NodeId, SimTime};

/// Most blocks returned by one sync response.
const SYNC_CHUNK: usize = 64;
/// A node that stays behind a peer this long asks it for blocks.
const SYNC_PATIENCE: Duration = Duration::from_millis(300);
/// Consecutive answered probes before a down link counts as restored.
const PROBES_TO_RESTORE: u32 = 2;

/// Failure-detector timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    #[serde(with = "super::secs")]
    pub heartbeat: Duration,
    /// Silence after which a peer is considered down.
    #[serde(with = "super::secs")]
    pub idle_timeout: Duration,
    /// How often down peers are probed.
    #[serde(with = "super::secs")]
    pub poll_interval: Duration,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            heartbeat: Duration::from_millis(500),
            idle_timeout: Duration::from_secs(2),
            poll_interval: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SafetyRecord {
    None,
    Leaderled(leaderled::Record),
    Leaderless(leaderless::Wal),
    Scheduled(scheduled::Record),
}

/// State that survives a crash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Durable {
    pub ledger: Ledger,
    pub record: SafetyRecord,
    pub incarnation: u32,
}

#[derive(Debug, Clone)]
struct Link {
    up: bool,
    last_heard: SimTime,
    acked: u32,
    outstanding: Option<u64>,
}

#[derive(Debug)]
enum Engine {
    Leaderled(leaderled::State),
    Leaderless(leaderless::State),
    Scheduled(scheduled::State),
    Snow(snow::State),
}

macro_rules! dispatch {
    ($self:expr, $s:ident => $e:expr) => {
        match $self {
            Engine::Leaderled($s) => $e,
            Engine::Leaderless($s) => $e,
            Engine::Scheduled($s) => $e,
            Engine::Snow($s) => $e,
        }
    };
}

/// One node: ledger, link monitor, catch-up and a protocol engine.
#[derive(Debug)]
pub struct Replica {
    id: NodeId,
    params: Arc<ProtocolParams>,
    link_params: LinkParams,
    incarnation: u32,
    ledger: Ledger,
    engine: Engine,
    links: Vec<Link>,
    up: Vec<bool>,
    rng: ChaCha8Rng,
    probe_seq: u64,
    peer_height: Vec<u64>,
    behind_since: Option<SimTime>,
    last_sync_request: Option<SimTime>,
}

fn node_seed(seed: u64, id: NodeId, incarnation: u32) -> u64 {
    let mut z = seed ^ ((id.0 as u64) << 32) ^ incarnation as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Replica {
    pub fn new(id: NodeId, params: Arc<ProtocolParams>, link_params: LinkParams, seed: u64) -> Self {
        let durable = Durable { ledger: Ledger::new(), record: SafetyRecord::None, incarnation: 0 };
        Self::restore(id, params, link_params, seed, durable)
    }

    /// Rebuilds a node from what survived its crash.
    pub fn restore(
        id: NodeId,
        params: Arc<ProtocolParams>,
        link_params: LinkParams,
        seed: u64,
        durable: Durable,
    ) -> Self {
        let n = params.n;
        let engine = match params.kind {
            ProtocolKind::Leaderled => Engine::Leaderled(leaderled::State::new(&params, &durable.record)),
            ProtocolKind::Leaderless => Engine::Leaderless(leaderless::State::new(&params, &durable.record)),
            ProtocolKind::Scheduled => Engine::Scheduled(scheduled::State::new(&params, &durable.record)),
            ProtocolKind::Snow => Engine::Snow(snow::State::new(&params)),
        };
        Replica {
            id,
            link_params,
            incarnation: durable.incarnation,
            ledger: durable.ledger,
            engine,
            links: vec![Link { up: true, last_heard: SimTime::ZERO, acked: 0, outstanding: None }; n],
            up: vec![true; n],
            rng: ChaCha8Rng::seed_from_u64(node_seed(seed, id, durable.incarnation)),
            probe_seq: 0,
            peer_height: vec![0; n],
            behind_since: None,
            last_sync_request: None,
            params,
        }
    }

    /// Snapshot of the crash-surviving state, with the incarnation bumped
    /// for the next start.
    pub fn durable(&self) -> Durable {
        let record = dispatch!(&self.engine, s => s.record());
        Durable { ledger: self.ledger.clone(), record, incarnation: self.incarnation + 1 }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn is_link_up(&self, peer: NodeId) -> bool {
        self.up.get(peer.index()).copied().unwrap_or(false)
    }

    /// Transactions this node holds but has not committed.
    pub fn pending_txs(&self) -> usize {
        dispatch!(&self.engine, s => s.pending())
    }

    pub fn dedup_hits(&self) -> u64 {
        dispatch!(&self.engine, s => s.dedup_hits())
    }

    fn ctx<'a>(&'a mut self, now: SimTime, out: &'a mut Outbox) -> (&'a mut Engine, Ctx<'a>) {
        let ctx = Ctx {
            now,
            id: self.id,
            params: &self.params,
            ledger: &mut self.ledger,
            rng: &mut self.rng,
            up: &self.up,
            out,
        };
        (&mut self.engine, ctx)
    }

    /// Arms periodic timers; a restarted node also announces itself and asks
    /// every peer for the blocks it missed.
    pub fn start(&mut self, now: SimTime, out: &mut Outbox) {
        for l in &mut self.links {
            l.last_heard = now;
        }
        out.timers.push((self.link_params.heartbeat, TimerKey::Heartbeat));
        out.timers.push((self.link_params.poll_interval, TimerKey::Poll));
        out.timers.push((SYNC_PATIENCE, TimerKey::SyncCheck));
        let restarted = self.incarnation > 0;
        let (engine, mut ctx) = self.ctx(now, out);
        if restarted {
            ctx.broadcast(Body::Hello);
            let from = ctx.height();
            ctx.broadcast(Body::SyncRequest { from });
        }
        dispatch!(engine, s => s.on_start(&mut ctx, restarted));
    }

    pub fn on_client_tx(&mut self, now: SimTime, tx: Tx, out: &mut Outbox) {
        let (engine, mut ctx) = self.ctx(now, out);
        dispatch!(engine, s => s.on_client_tx(&mut ctx, tx));
    }

    pub fn on_message(&mut self, now: SimTime, from: NodeId, env: Envelope, out: &mut Outbox) {
        let Some(link) = self.links.get_mut(from.index()) else { return };
        if from == self.id {
            return;
        }
        link.last_heard = now;
        match env.body {
            Body::Probe(seq) => {
                let (_, mut ctx) = self.ctx(now, out);
                ctx.send(from, Body::ProbeAck(seq));
                return;
            }
            Body::ProbeAck(seq) => {
                if !link.up && link.outstanding == Some(seq) {
                    link.outstanding = None;
                    link.acked += 1;
                    if link.acked >= PROBES_TO_RESTORE {
                        self.peer_up(now, from, out);
                    }
                }
                return;
            }
            Body::Hello => {
                self.peer_up(now, from, out);
                return;
            }
            _ if !link.up => return,
            _ => {}
        }
        self.note_peer_height(now, from, env.height, out);
        match env.body {
            Body::Heartbeat => {}
            Body::SyncRequest { from: h } => {
                let blocks: Vec<_> = self
                    .ledger
                    .blocks()
                    .iter()
                    .skip(h as usize)
                    .take(SYNC_CHUNK)
                    .cloned()
                    .collect();
                if !blocks.is_empty() {
                    let (_, mut ctx) = self.ctx(now, out);
                    ctx.send(from, Body::SyncResponse { blocks });
                }
            }
            Body::SyncResponse { blocks } => {
                let before = self.ledger.height();
                {
                    let (_, mut ctx) = self.ctx(now, out);
                    for b in blocks {
                        if b.height == ctx.height() {
                            ctx.commit(b);
                        }
                    }
                }
                if self.ledger.height() > before {
                    self.after_ledger_advance(now, out);
                    if self.peer_height[from.index()] > self.ledger.height() {
                        self.request_sync(now, from, out, true);
                    }
                }
            }
            body => {
                let (engine, mut ctx) = self.ctx(now, out);
                dispatch!(engine, s => s.on_message(&mut ctx, from, body));
            }
        }
    }

    pub fn on_timer(&mut self, now: SimTime, key: TimerKey, out: &mut Outbox) {
        match key {
            TimerKey::Heartbeat => {
                out.timers.push((self.link_params.heartbeat, TimerKey::Heartbeat));
                for (i, l) in self.links.iter_mut().enumerate() {
                    if i != self.id.index() && l.up && now.saturating_since(l.last_heard) > self.link_params.idle_timeout {
                        l.up = false;
                        l.acked = 0;
                        l.outstanding = None;
                        self.up[i] = false;
                    }
                }
                let (_, mut ctx) = self.ctx(now, out);
                ctx.broadcast(Body::Heartbeat);
            }
            TimerKey::Poll => {
                out.timers.push((self.link_params.poll_interval, TimerKey::Poll));
                for i in 0..self.links.len() {
                    let l = &mut self.links[i];
                    if i == self.id.index() || l.up {
                        continue;
                    }
                    if l.outstanding.is_some() {
                        l.acked = 0;
                    }
                    self.probe_seq += 1;
                    l.outstanding = Some(self.probe_seq);
                    let seq = self.probe_seq;
                    let (_, mut ctx) = self.ctx(now, out);
                    ctx.send(NodeId::from(i), Body::Probe(seq));
                }
            }
            TimerKey::SyncCheck => {
                out.timers.push((SYNC_PATIENCE, TimerKey::SyncCheck));
                let h = self.ledger.height();
                let best = (0..self.links.len())
                    .filter(|&i| self.up[i] && i != self.id.index())
                    .max_by_key(|&i| (self.peer_height[i], core::cmp::Reverse(i)));
                match best {
                    Some(p) if self.peer_height[p] > h => {
                        let since = *self.behind_since.get_or_insert(now);
                        if now.saturating_since(since) >= SYNC_PATIENCE {
                            self.request_sync(now, NodeId::from(p), out, false);
                        }
                    }
                    _ => self.behind_since = None,
                }
            }
            key => {
                let (engine, mut ctx) = self.ctx(now, out);
                dispatch!(engine, s => s.on_timer(&mut ctx, key));
            }
        }
    }

    fn peer_up(&mut self, now: SimTime, peer: NodeId, out: &mut Outbox) {
        let l = &mut self.links[peer.index()];
        l.up = true;
        l.acked = 0;
        l.outstanding = None;
        l.last_heard = now;
        self.up[peer.index()] = true;
        let (engine, mut ctx) = self.ctx(now, out);
        dispatch!(engine, s => s.on_peer_up(&mut ctx, peer));
    }

    fn note_peer_height(&mut self, now: SimTime, peer: NodeId, height: u64, out: &mut Outbox) {
        let ph = &mut self.peer_height[peer.index()];
        *ph = (*ph).max(height);
        let h = self.ledger.height();
        if height <= h {
            return;
        }
        self.behind_since.get_or_insert(now);
        if height >= h + 2 {
            self.request_sync(now, peer, out, false);
        }
    }

    /// Asks `peer` for the next chunk of blocks. Unforced requests are rate
    /// limited so a burst of envelopes from ahead peers costs one request.
    fn request_sync(&mut self, now: SimTime, peer: NodeId, out: &mut Outbox, force: bool) {
        if let Some(last) = self.last_sync_request {
            if !force && now.saturating_since(last) < SYNC_PATIENCE {
                return;
            }
        }
        self.last_sync_request = Some(now);
        let (_, mut ctx) = self.ctx(now, out);
        let from = ctx.height();
        ctx.send(peer, Body::SyncRequest { from });
    }

    fn after_ledger_advance(&mut self, now: SimTime, out: &mut Outbox) {
        if !self.peer_height.iter().any(|&h| h > self.ledger.height()) {
            self.behind_since = None;
        }
        let (engine, mut ctx) = self.ctx(now, out);
        dispatch!(engine, s => s.on_ledger_advance(&mut ctx));
    }
}
