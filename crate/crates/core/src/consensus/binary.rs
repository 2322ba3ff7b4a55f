//! Crash-tolerant binary consensus with a rotating weak coordinator.
//!
//! Each round has two exchanges. Nodes broadcast their estimate; after a
//! quorum of estimates a node broadcasts `Aux(Some(v))` if a strict majority
//! of all `n` nodes sent `v`, else `Aux(None)`. After a quorum of aux
//! messages: `t+1` votes for `v` decide `v`; any vote for `v` adopts `v`;
//! otherwise the round's coordinator `(instance + round) mod n` breaks the
//! tie with its estimate. Deciders broadcast `Decide`, which is final.
//!
//! Everything a node sends is kept in a [`BcLog`] so that a restarted node
//! repeats itself instead of contradicting itself.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcMsg {
    Est { round: u32, v: bool },
    Aux { round: u32, v: Option<bool> },
    Decide(bool),
}

/// What this node has sent, which is all it must remember across a crash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcLog {
    pub est: BTreeMap<u32, bool>,
    pub aux: BTreeMap<u32, Option<bool>>,
    pub decided: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct BinaryConsensus {
    me: NodeId,
    coordinator_base: usize,
    n: usize,
    t: usize,
    log: BcLog,
    round: u32,
    est: Option<bool>,
    ests: BTreeMap<u32, BTreeMap<NodeId, bool>>,
    auxs: BTreeMap<u32, BTreeMap<NodeId, Option<bool>>>,
}

impl BinaryConsensus {
    pub fn new(me: NodeId, instance: usize, n: usize, t: usize) -> Self {
        Self::from_log(me, instance, n, t, BcLog::default())
    }

    pub fn from_log(me: NodeId, instance: usize, n: usize, t: usize, log: BcLog) -> Self {
        let (round, est) = match log.est.last_key_value() {
            Some((&r, &v)) => (r, Some(v)),
            None => (0, None),
        };
        let mut bc = BinaryConsensus {
            me,
            coordinator_base: instance,
            n,
            t,
            log,
            round,
            est,
            ests: BTreeMap::new(),
            auxs: BTreeMap::new(),
        };
        for (&r, &v) in &bc.log.est {
            bc.ests.entry(r).or_default().insert(me, v);
        }
        for (&r, &v) in &bc.log.aux {
            bc.auxs.entry(r).or_default().insert(me, v);
        }
        bc
    }

    pub fn log(&self) -> &BcLog {
        &self.log
    }

    pub fn decided(&self) -> Option<bool> {
        self.log.decided
    }

    pub fn has_input(&self) -> bool {
        self.est.is_some() || self.log.decided.is_some()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Proposes `v`; ignored if this node already has an estimate.
    pub fn input(&mut self, v: bool) -> Vec<BcMsg> {
        if self.has_input() {
            return Vec::new();
        }
        self.est = Some(v);
        self.progress()
    }

    pub fn on_msg(&mut self, from: NodeId, msg: BcMsg) -> Vec<BcMsg> {
        if self.log.decided.is_some() {
            return Vec::new();
        }
        match msg {
            BcMsg::Decide(v) => return self.decide(v),
            BcMsg::Est { round, v } => {
                self.ests.entry(round).or_default().entry(from).or_insert(v);
            }
            BcMsg::Aux { round, v } => {
                self.auxs.entry(round).or_default().entry(from).or_insert(v);
            }
        }
        self.progress()
    }

    /// Every message this node has sent, for a peer that missed them.
    pub fn sent(&self) -> Vec<BcMsg> {
        if let Some(v) = self.log.decided {
            return alloc::vec![BcMsg::Decide(v)];
        }
        let mut out: Vec<BcMsg> = self.log.est.iter().map(|(&round, &v)| BcMsg::Est { round, v }).collect();
        out.extend(self.log.aux.iter().map(|(&round, &v)| BcMsg::Aux { round, v }));
        out
    }

    fn decide(&mut self, v: bool) -> Vec<BcMsg> {
        self.log.decided = Some(v);
        self.ests.clear();
        self.auxs.clear();
        alloc::vec![BcMsg::Decide(v)]
    }

    fn progress(&mut self) -> Vec<BcMsg> {
        let q = self.n - self.t;
        let mut out = Vec::new();
        loop {
            if self.log.decided.is_some() {
                return out;
            }
            let r = self.round;
            if !self.log.est.contains_key(&r) {
                let Some(v) = self.est else { return out };
                self.log.est.insert(r, v);
                self.ests.entry(r).or_default().insert(self.me, v);
                out.push(BcMsg::Est { round: r, v });
            }
            if !self.log.aux.contains_key(&r) {
                let Some(ests) = self.ests.get(&r).filter(|e| e.len() >= q) else { return out };
                let ones = ests.values().filter(|v| **v).count();
                let zeros = ests.len() - ones;
                let a = if 2 * ones > self.n {
                    Some(true)
                } else if 2 * zeros > self.n {
                    Some(false)
                } else {
                    None
                };
                self.log.aux.insert(r, a);
                self.auxs.entry(r).or_default().insert(self.me, a);
                out.push(BcMsg::Aux { round: r, v: a });
            }
            if let Some(&next) = self.log.est.get(&(r + 1)) {
                // Restored from the log: the next estimate is already fixed.
                self.round = r + 1;
                self.est = Some(next);
                continue;
            }
            let Some(auxs) = self.auxs.get(&r).filter(|a| a.len() >= q) else { return out };
            let ones = auxs.values().filter(|v| **v == Some(true)).count();
            let zeros = auxs.values().filter(|v| **v == Some(false)).count();
            if ones > self.t {
                out.extend(self.decide(true));
                return out;
            }
            if zeros > self.t {
                out.extend(self.decide(false));
                return out;
            }
            let next = if ones > 0 {
                true
            } else if zeros > 0 {
                false
            } else {
                let coord = NodeId::from((self.coordinator_base + r as usize) % self.n);
                self.ests
                    .get(&r)
                    .and_then(|e| e.get(&coord).copied())
                    .or(self.log.est.get(&r).copied())
                    .unwrap_or(false)
            };
            self.round = r + 1;
            self.est = Some(next);
            self.ests.remove(&r);
            self.auxs.remove(&r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::VecDeque;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random-order message delivery among `n` nodes; `crash` maps a node to
    /// the number of its own sends after which it goes silent.
    fn simulate(
        inputs: &[bool],
        t: usize,
        crash: Option<(usize, usize)>,
        seed: u64,
    ) -> Vec<Option<bool>> {
        let n = inputs.len();
        let mut nodes: Vec<_> = (0..n).map(|i| BinaryConsensus::new(NodeId::from(i), 0, n, t)).collect();
        let mut sent = vec![0usize; n];
        let mut inflight: VecDeque<(usize, usize, BcMsg)> = VecDeque::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alive = vec![true; n];
        let emit = |from: usize, msgs: Vec<BcMsg>, sent: &mut Vec<usize>, alive: &mut Vec<bool>, q: &mut VecDeque<_>| {
            for m in msgs {
                if !alive[from] {
                    return;
                }
                if let Some((c, after)) = crash {
                    if c == from && sent[from] >= after {
                        alive[from] = false;
                        return;
                    }
                }
                sent[from] += 1;
                for to in 0..n {
                    if to != from {
                        q.push_back((from, to, m));
                    }
                }
            }
        };
        for (i, v) in inputs.iter().enumerate() {
            let out = nodes[i].input(*v);
            emit(i, out, &mut sent, &mut alive, &mut inflight);
        }
        let mut steps = 0;
        while !inflight.is_empty() && steps < 200_000 {
            steps += 1;
            let k = rng.random_range(0..inflight.len());
            let (from, to, m) = inflight.swap_remove_back(k).unwrap();
            if !alive[to] {
                continue;
            }
            let out = nodes[to].on_msg(NodeId::from(from), m);
            emit(to, out, &mut sent, &mut alive, &mut inflight);
        }
        (0..n).map(|i| if alive[i] { nodes[i].decided() } else { None }).collect()
    }

    #[test]
    fn unanimous_one_decides_one() {
        for seed in 0..20 {
            let d = simulate(&[true; 4], 1, None, seed);
            assert!(d.iter().all(|x| *x == Some(true)), "{d:?}");
        }
    }

    #[test]
    fn zero_proposer_crash_mid_round_enumerated() {
        // Values {1,1,1,0}; node 3 crashes after every possible number of
        // its own sends, under many delivery orders.
        for after in 0..8 {
            for seed in 0..50 {
                let d = simulate(&[true, true, true, false], 1, Some((3, after)), seed);
                for x in &d[..3] {
                    assert_eq!(*x, Some(true), "after={after} seed={seed} {d:?}");
                }
            }
        }
    }

    #[test]
    fn mixed_values_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..300 {
            let n = if seed % 2 == 0 { 4 } else { 10 };
            let t = (n - 1) / 3;
            let inputs: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let d = simulate(&inputs, t, None, seed);
            let first = d[0];
            assert!(first.is_some(), "no decision: {inputs:?} seed {seed}");
            assert!(d.iter().all(|x| *x == first), "{inputs:?} {d:?}");
            // Validity: the decision was somebody's input.
            assert!(inputs.contains(&first.unwrap()));
        }
    }

    #[test]
    fn restored_log_repeats_itself() {
        let mut a = BinaryConsensus::new(NodeId(0), 0, 4, 1);
        let first = a.input(true);
        let est_from = |m: &[BcMsg]| m.to_vec();
        let mut b = BinaryConsensus::from_log(NodeId(0), 0, 4, 1, a.log().clone());
        assert!(b.input(false).is_empty());
        assert_eq!(b.sent(), est_from(&first));
        for i in 1..4 {
            a.on_msg(NodeId(i), BcMsg::Est { round: 0, v: false });
            b.on_msg(NodeId(i), BcMsg::Est { round: 0, v: false });
        }
        assert_eq!(a.log(), b.log());
    }
}
