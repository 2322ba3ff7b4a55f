//! Live-local mode: every replica runs on its own thread against the wall
//! clock, and faults reach it through an observer agent listening on a
//! loopback TCP socket.
//!
//! Crash stops the replica's thread and keeps only its durable state;
//! restart starts a fresh thread from that state. Partitions are enforced
//! by each node's transport consulting a drop table pushed by its agent.
//! Messages travel over in-process channels with no added delay and no
//! inbound throttling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use sensibench_core::consensus::{
    Block, Durable, Envelope, Ledger, LinkParams, Outbox, ProtocolParams, Replica, TimerKey, Tx, TxId,
};
use sensibench_core::experiment::{ExperimentSpec, NodeCommit, RunOutcome};
use sensibench_core::faults::wire::{ObserverCommand, Reply, Verb};
use sensibench_core::faults::{complete_groups, partition_rules, FaultAction};
use sensibench_core::simnet::{DropRule, NetStats};
use sensibench_core::workload::{self, Confirmation, TxRecord, WorkloadSummary};
use sensibench_core::{NodeId, SimTime};

use crate::BenchError;

/// How long the coordinator waits for an agent's reply before retrying once.
pub const ACK_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now(&self) -> SimTime {
        SimTime::from_micros(self.0.elapsed().as_micros() as u64)
    }
}

enum Input {
    Msg(NodeId, Envelope),
    Client(Tx),
    Stop,
}

struct Commit {
    node: NodeId,
    block: Arc<Block>,
    at: SimTime,
}

/// One inbox per node; `None` while the node is down.
struct Switch {
    inboxes: RwLock<Vec<Option<Sender<Input>>>>,
}

impl Switch {
    fn deliver(&self, dst: NodeId, input: Input) -> bool {
        let inboxes = self.inboxes.read().unwrap();
        match inboxes.get(dst.index()).and_then(|s| s.as_ref()) {
            Some(tx) => tx.send(input).is_ok(),
            None => false,
        }
    }

    fn set(&self, id: NodeId, inbox: Option<Sender<Input>>) {
        self.inboxes.write().unwrap()[id.index()] = inbox;
    }
}

struct Shared {
    clock: Clock,
    switch: Switch,
    commits: Mutex<Sender<Commit>>,
    params: Arc<ProtocolParams>,
    link: LinkParams,
    seed: u64,
}

struct Running {
    inbox: Sender<Input>,
    thread: JoinHandle<Durable>,
}

fn spawn_node(shared: Arc<Shared>, id: NodeId, mut replica: Replica, drops: Arc<Mutex<Vec<DropRule>>>) -> Running {
    let (tx, rx) = mpsc::channel();
    shared.switch.set(id, Some(tx.clone()));
    let commits = shared.commits.lock().unwrap().clone();
    let thread = thread::spawn(move || {
        let clock = shared.clock;
        let mut timers: BTreeMap<(SimTime, u64), TimerKey> = BTreeMap::new();
        let mut next_timer = 0u64;
        let mut out = Outbox::new();
        let mut flush = |out: &mut Outbox, timers: &mut BTreeMap<(SimTime, u64), TimerKey>| {
            let now = clock.now();
            let table = drops.lock().unwrap().clone();
            for (to, env) in out.sends.drain(..) {
                if !table.iter().any(|r| r.matches(id, to)) {
                    shared.switch.deliver(to, Input::Msg(id, env));
                }
            }
            for (after, key) in out.timers.drain(..) {
                timers.insert((now + after, next_timer), key);
                next_timer += 1;
            }
            for block in out.commits.drain(..) {
                let _ = commits.send(Commit { node: id, block, at: now });
            }
        };
        replica.start(clock.now(), &mut out);
        flush(&mut out, &mut timers);
        loop {
            let now = clock.now();
            while let Some(entry) = timers.first_entry() {
                if entry.key().0 > now {
                    break;
                }
                let key = entry.remove();
                replica.on_timer(now, key, &mut out);
                flush(&mut out, &mut timers);
            }
            let wait = timers.first_key_value().map_or(Duration::from_millis(50), |(k, _)| k.0.saturating_since(now));
            match rx.recv_timeout(wait) {
                Ok(Input::Msg(from, env)) => replica.on_message(clock.now(), from, env, &mut out),
                Ok(Input::Client(tx)) => replica.on_client_tx(clock.now(), tx, &mut out),
                Ok(Input::Stop) | Err(RecvTimeoutError::Disconnected) => return replica.durable(),
                Err(RecvTimeoutError::Timeout) => {}
            }
            flush(&mut out, &mut timers);
        }
    });
    Running { inbox: tx, thread }
}

/// State an agent hands back when the coordinator disconnects.
struct AgentResult {
    durable: Durable,
    down: bool,
}

struct Agent {
    id: NodeId,
    n: usize,
    shared: Arc<Shared>,
    drops: Arc<Mutex<Vec<DropRule>>>,
    running: Option<Running>,
    durable: Option<Durable>,
}

impl Agent {
    fn stop(&mut self) -> Result<Durable, String> {
        let r = self.running.take().ok_or("not-running")?;
        self.shared.switch.set(self.id, None);
        let _ = r.inbox.send(Input::Stop);
        r.thread.join().map_err(|_| "node-panicked".to_string())
    }

    fn handle(&mut self, cmd: &ObserverCommand) -> Result<(), String> {
        let mine = |t: &[NodeId]| t.is_empty() || t == [self.id];
        match &cmd.verb {
            Verb::Crash(t) if mine(t) => {
                self.durable = Some(self.stop()?);
                Ok(())
            }
            Verb::Restart(t) if mine(t) => {
                if self.running.is_some() {
                    return Err("running".into());
                }
                let d = self.durable.take().ok_or("no-state")?;
                let s = &self.shared;
                let replica = Replica::restore(self.id, s.params.clone(), s.link, s.seed, d);
                self.running = Some(spawn_node(self.shared.clone(), self.id, replica, self.drops.clone()));
                Ok(())
            }
            Verb::Crash(_) | Verb::Restart(_) => Err("foreign-target".into()),
            Verb::Part(groups) => {
                *self.drops.lock().unwrap() = partition_rules(&complete_groups(groups, self.n));
                Ok(())
            }
            Verb::Heal => {
                let mut d = self.drops.lock().unwrap();
                if d.is_empty() {
                    return Err("no-partition".into());
                }
                d.clear();
                Ok(())
            }
        }
    }

    fn serve(mut self, listener: TcpListener) -> Result<AgentResult, String> {
        let (stream, _) = listener.accept().map_err(|e| e.to_string())?;
        let mut writer = stream.try_clone().map_err(|e| e.to_string())?;
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            let reply = match ObserverCommand::decode(&line) {
                Ok(cmd) => match self.handle(&cmd) {
                    Ok(()) => Reply::Ack(cmd.seq),
                    Err(code) => Reply::Err(cmd.seq, code),
                },
                Err(_) => Reply::Err(0, "malformed".into()),
            };
            if writer.write_all(reply.encode().as_bytes()).is_err() {
                break;
            }
        }
        let down = self.running.is_none();
        let durable = match self.running.is_some() {
            true => self.stop()?,
            false => self.durable.take().ok_or("no-state")?,
        };
        Ok(AgentResult { durable, down })
    }
}

/// Coordinator side of one agent connection.
pub struct AgentConn {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    next_seq: u64,
    timeout: Duration,
}

impl AgentConn {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> Result<Self, BenchError> {
        let err = |e: std::io::Error| BenchError::LiveAgent(format!("{addr}: {e}"));
        let writer = TcpStream::connect(addr).map_err(err)?;
        writer.set_read_timeout(Some(timeout)).map_err(err)?;
        let reader = BufReader::new(writer.try_clone().map_err(err)?);
        Ok(AgentConn { writer, reader, next_seq: 1, timeout })
    }

    /// Sends `verb` and waits for its acknowledgement, retrying once on
    /// timeout.
    pub fn command(&mut self, verb: Verb) -> Result<(), BenchError> {
        let cmd = ObserverCommand { seq: self.next_seq, verb };
        self.next_seq += 1;
        let line = cmd.encode();
        for _ in 0..2 {
            self.writer
                .write_all(line.as_bytes())
                .map_err(|e| BenchError::LiveAgent(format!("send {}: {e}", line.trim_end())))?;
            let mut buf = String::new();
            match self.reader.read_line(&mut buf) {
                Ok(0) => return Err(BenchError::LiveAgent("agent closed the connection".into())),
                Ok(_) => {
                    return match Reply::decode(&buf) {
                        Ok(Reply::Ack(s)) if s == cmd.seq => Ok(()),
                        Ok(Reply::Err(s, code)) if s == cmd.seq => {
                            Err(BenchError::LiveAgent(format!("{} rejected: {code}", line.trim_end())))
                        }
                        _ => Err(BenchError::LiveAgent(format!("unexpected reply {:?}", buf.trim_end()))),
                    }
                }
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    continue
                }
                Err(e) => return Err(BenchError::LiveAgent(e.to_string())),
            }
        }
        Err(BenchError::LiveAgent(format!("no reply to {} within {:?}", line.trim_end(), self.timeout)))
    }
}

enum Action {
    Fault(usize),
    Deliver(NodeId, usize),
}

/// Runs `spec` in real time. Takes `run_length` plus up to `drain` of wall
/// clock.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome, BenchError> {
    spec.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    let n = spec.n();
    let mut params = spec.protocol.clone();
    params.schedule_seed ^= spec.seed;
    let (commit_tx, commit_rx): (Sender<Commit>, Receiver<Commit>) = mpsc::channel();
    let shared = Arc::new(Shared {
        clock: Clock(Instant::now()),
        switch: Switch { inboxes: RwLock::new((0..n).map(|_| None).collect()) },
        commits: Mutex::new(commit_tx),
        params: Arc::new(params),
        link: spec.network.link,
        seed: spec.seed,
    });

    let mut agents = Vec::with_capacity(n);
    let mut conns = Vec::with_capacity(n);
    for i in 0..n {
        let id = NodeId::from(i);
        let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| BenchError::LiveAgent(e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| BenchError::LiveAgent(e.to_string()))?;
        let drops = Arc::new(Mutex::new(Vec::new()));
        let replica = Replica::new(id, shared.params.clone(), shared.link, shared.seed);
        let running = spawn_node(shared.clone(), id, replica, drops.clone());
        let agent = Agent { id, n, shared: shared.clone(), drops, running: Some(running), durable: None };
        agents.push(thread::spawn(move || agent.serve(listener)));
        conns.push(AgentConn::connect(addr, ACK_TIMEOUT)?);
    }

    let subs = workload::submissions(&spec.clients, spec.run_length);
    let by_client: BTreeMap<u32, _> = spec.clients.iter().map(|c| (c.id, c)).collect();
    let t = shared.params.t();
    let mut records = Vec::with_capacity(subs.len());
    let mut index = BTreeMap::new();
    let mut need = Vec::with_capacity(subs.len());
    let mut queue: Vec<(SimTime, u8, Action)> = Vec::new();
    for (i, e) in spec.faults.events().iter().enumerate() {
        queue.push((SimTime::ZERO + e.at, 0, Action::Fault(i)));
    }
    for s in &subs {
        let c = by_client[&s.client];
        let i = records.len();
        records.push(TxRecord::new(s, c.attach.clone()));
        index.insert(s.tx.id(), i);
        need.push(spec.policy.needed(c.attach.len(), t));
        for &a in &c.attach {
            queue.push((s.at, 1, Action::Deliver(a, i)));
        }
    }
    queue.sort_by_key(|q| (q.0, q.1));

    let clock = shared.clock;
    let submit_end = SimTime::ZERO + spec.run_length;
    let hard_end = submit_end + spec.drain;
    let mut copies: BTreeMap<TxId, u64> = BTreeMap::new();
    let mut node_commits = Vec::new();
    let mut next = 0;
    let mut result = Ok(());
    let end = loop {
        let now = clock.now();
        while next < queue.len() && queue[next].0 <= now {
            match queue[next].2 {
                Action::Deliver(node, i) => {
                    let tx = records[i].tx;
                    if shared.switch.deliver(node, Input::Client(tx)) {
                        *copies.entry(tx.id()).or_default() += 1;
                    }
                }
                Action::Fault(i) => {
                    let ev = &spec.faults.events()[i];
                    let r = match &ev.action {
                        FaultAction::Crash => {
                            ev.targets.iter().try_for_each(|t| conns[t.index()].command(Verb::Crash(vec![])))
                        }
                        FaultAction::Restart => {
                            ev.targets.iter().try_for_each(|t| conns[t.index()].command(Verb::Restart(vec![])))
                        }
                        FaultAction::Partition { groups } => {
                            let groups = complete_groups(groups, n);
                            conns.iter_mut().try_for_each(|c| c.command(Verb::Part(groups.clone())))
                        }
                        FaultAction::Heal => conns.iter_mut().try_for_each(|c| c.command(Verb::Heal)),
                    };
                    if let Err(e) = r {
                        result = Err(e);
                    }
                }
            }
            next += 1;
            if result.is_err() {
                break;
            }
        }
        if result.is_err() {
            break now;
        }
        if now >= submit_end && records.iter().all(|r| r.is_resolved()) {
            break now;
        }
        if now >= hard_end {
            break hard_end;
        }
        let due = queue.get(next).map_or(hard_end, |q| q.0).min(hard_end);
        match commit_rx.recv_timeout(due.saturating_since(now)) {
            Ok(c) => {
                node_commits.push(NodeCommit { at: c.at, node: c.node, height: c.block.height, txs: c.block.txs.len() });
                for tx in &c.block.txs {
                    let Some(&i) = index.get(&tx.id()) else { continue };
                    let conf = Confirmation { height: c.block.height, hash: c.block.hash, at: c.at };
                    records[i].confirm(c.node, conf, need[i]);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break clock.now(),
        }
    };

    drop(conns);
    let mut ledgers = Vec::with_capacity(n);
    let mut down_at_end = BTreeSet::new();
    for (i, a) in agents.into_iter().enumerate() {
        let r = a
            .join()
            .map_err(|_| BenchError::LiveAgent(format!("agent {i} panicked")))?
            .map_err(|e| BenchError::LiveAgent(format!("agent {i}: {e}")))?;
        if r.down {
            down_at_end.insert(NodeId::from(i));
        }
        ledgers.push(r.durable.ledger);
    }
    result?;

    let reference: &Ledger = ledgers.iter().fold(&ledgers[0], |b, l| if l.height() > b.height() { l } else { b });
    let executed: BTreeSet<TxId> = reference.blocks().iter().flat_map(|b| b.txs.iter().map(|t| t.id())).collect();
    let dedup_hits =
        copies.iter().filter(|(id, _)| executed.contains(id)).map(|(_, c)| c.saturating_sub(1)).sum();
    let summary = WorkloadSummary::from_records(&records, dedup_hits);
    Ok(RunOutcome {
        records,
        summary,
        ledgers,
        down_at_end,
        node_commits,
        end,
        first_fault: spec.faults.first_fault().map(|d| SimTime::ZERO + d),
        net: NetStats::default(),
        throttle: vec![None; n],
        trace_digest: 0,
        trace: Vec::new(),
    })
}
