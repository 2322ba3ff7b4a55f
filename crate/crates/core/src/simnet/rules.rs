use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::NodeId;

/// Discards every message from `src` to `dst` (and back, if bidirectional)
/// while installed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRule {
    pub src: BTreeSet<NodeId>,
    pub dst: BTreeSet<NodeId>,
    pub bidirectional: bool,
}

impl DropRule {
    pub fn between(a: impl IntoIterator<Item = NodeId>, b: impl IntoIterator<Item = NodeId>) -> Self {
        DropRule { src: a.into_iter().collect(), dst: b.into_iter().collect(), bidirectional: true }
    }

    pub fn matches(&self, src: NodeId, dst: NodeId) -> bool {
        (self.src.contains(&src) && self.dst.contains(&dst))
            || (self.bidirectional && self.src.contains(&dst) && self.dst.contains(&src))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuleHandle(pub u64);

/// Installed rules plus a per-link match counter so lookups are O(1).
#[derive(Debug, Clone)]
pub(crate) struct RuleSet {
    n: usize,
    rules: BTreeMap<RuleHandle, DropRule>,
    next: u64,
    blocked: Vec<u32>,
}

impl RuleSet {
    pub fn new(n: usize) -> Self {
        RuleSet { n, rules: BTreeMap::new(), next: 0, blocked: vec![0; n * n] }
    }

    fn adjust(&mut self, rule: &DropRule, up: bool) {
        for s in 0..self.n {
            for d in 0..self.n {
                if rule.matches(NodeId(s as u16), NodeId(d as u16)) {
                    let c = &mut self.blocked[s * self.n + d];
                    *c = if up { *c + 1 } else { *c - 1 };
                }
            }
        }
    }

    pub fn install(&mut self, rule: DropRule) -> RuleHandle {
        let h = RuleHandle(self.next);
        self.next += 1;
        self.adjust(&rule, true);
        self.rules.insert(h, rule);
        h
    }

    pub fn remove(&mut self, h: RuleHandle) -> Option<DropRule> {
        let rule = self.rules.remove(&h)?;
        self.adjust(&rule, false);
        Some(rule)
    }

    pub fn blocks(&self, src: NodeId, dst: NodeId) -> bool {
        self.blocked[src.index() * self.n + dst.index()] > 0
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }
}
