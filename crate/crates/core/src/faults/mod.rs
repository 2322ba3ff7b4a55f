//! Timed fault plans and how they are applied.
//!
//! A [`FaultPlan`] is a validated, time-ordered list of crash, restart,
//! partition and heal events. [`apply`] executes one event against anything
//! implementing [`FaultTarget`]: the simulator directly, or the live-mode
//! coordinator, which speaks the line protocol in [`wire`].

pub mod wire;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::simnet::DropRule;
use crate::NodeId;

pub type Group = BTreeSet<NodeId>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    Crash,
    Restart,
    /// Nodes not named in any group form one extra group.
    Partition { groups: Vec<Group> },
    Heal,
}

impl FaultAction {
    pub fn name(&self) -> &'static str {
        match self {
            FaultAction::Crash => "crash",
            FaultAction::Restart => "restart",
            FaultAction::Partition { .. } => "partition",
            FaultAction::Heal => "heal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    #[serde(with = "crate::consensus::secs")]
    pub at: Duration,
    #[serde(flatten)]
    pub action: FaultAction,
    #[serde(default)]
    pub targets: BTreeSet<NodeId>,
}

impl FaultEvent {
    pub fn crash(at_secs: u64, targets: impl IntoIterator<Item = u16>) -> Self {
        Self::with_targets(at_secs, FaultAction::Crash, targets)
    }

    pub fn restart(at_secs: u64, targets: impl IntoIterator<Item = u16>) -> Self {
        Self::with_targets(at_secs, FaultAction::Restart, targets)
    }

    pub fn partition(at_secs: u64, groups: Vec<Group>) -> Self {
        FaultEvent { at: Duration::from_secs(at_secs), action: FaultAction::Partition { groups }, targets: BTreeSet::new() }
    }

    pub fn heal(at_secs: u64) -> Self {
        FaultEvent { at: Duration::from_secs(at_secs), action: FaultAction::Heal, targets: BTreeSet::new() }
    }

    fn with_targets(at_secs: u64, action: FaultAction, targets: impl IntoIterator<Item = u16>) -> Self {
        FaultEvent { at: Duration::from_secs(at_secs), action, targets: targets.into_iter().map(NodeId).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FaultError {
    #[error("fault plan schema error: {0}")]
    SchemaError(String),
    #[error("event {index} is scheduled before the event preceding it")]
    UnsortedEvents { index: usize },
    #[error("event {index} targets node {node}, which does not exist")]
    UnknownTarget { index: usize, node: NodeId },
    #[error("event {index}: {reason}")]
    UnpairedHeal { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    events: Vec<FaultEvent>,
}

/// Adds the implicit group of unlisted nodes, if any.
pub fn complete_groups(groups: &[Group], n: usize) -> Vec<Group> {
    let mut out: Vec<Group> = groups.iter().filter(|g| !g.is_empty()).cloned().collect();
    let listed: Group = out.iter().flatten().copied().collect();
    let rest: Group = (0..n).map(NodeId::from).filter(|id| !listed.contains(id)).collect();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// One bidirectional drop rule per pair of groups.
pub fn partition_rules(groups: &[Group]) -> Vec<DropRule> {
    let mut out = Vec::new();
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            out.push(DropRule::between(a.iter().copied(), b.iter().copied()));
        }
    }
    out
}

impl FaultPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates `events` against a network of `n` nodes.
    pub fn new(events: Vec<FaultEvent>, n: usize) -> Result<Self, FaultError> {
        let mut crashed = BTreeSet::new();
        let mut partitioned = false;
        for (index, ev) in events.iter().enumerate() {
            if index > 0 && ev.at < events[index - 1].at {
                return Err(FaultError::UnsortedEvents { index });
            }
            let mut named: Vec<NodeId> = ev.targets.iter().copied().collect();
            if let FaultAction::Partition { groups } = &ev.action {
                named.extend(groups.iter().flatten().copied());
            }
            if let Some(node) = named.into_iter().find(|id| id.index() >= n) {
                return Err(FaultError::UnknownTarget { index, node });
            }
            match &ev.action {
                FaultAction::Crash | FaultAction::Restart if ev.targets.is_empty() => {
                    return Err(FaultError::SchemaError(alloc::format!("event {index}: {} needs targets", ev.action.name())));
                }
                FaultAction::Crash => {
                    if ev.targets.iter().any(|t| crashed.contains(t)) {
                        return Err(FaultError::UnpairedHeal { index, reason: "crash of a node that is already down" });
                    }
                    crashed.extend(ev.targets.iter().copied());
                }
                FaultAction::Restart => {
                    if !ev.targets.iter().all(|t| crashed.contains(t)) {
                        return Err(FaultError::UnpairedHeal { index, reason: "restart of a node that is not down" });
                    }
                    for t in &ev.targets {
                        crashed.remove(t);
                    }
                }
                FaultAction::Partition { groups } => {
                    if partitioned {
                        return Err(FaultError::UnpairedHeal { index, reason: "partition while another is active" });
                    }
                    let total: usize = groups.iter().map(|g| g.len()).sum();
                    let distinct: Group = groups.iter().flatten().copied().collect();
                    if total != distinct.len() {
                        return Err(FaultError::SchemaError(alloc::format!("event {index}: partition groups overlap")));
                    }
                    if complete_groups(groups, n).len() < 2 {
                        return Err(FaultError::SchemaError(alloc::format!("event {index}: partition needs two groups")));
                    }
                    partitioned = true;
                }
                FaultAction::Heal => {
                    if !partitioned {
                        return Err(FaultError::UnpairedHeal { index, reason: "heal without an active partition" });
                    }
                    partitioned = false;
                }
            }
        }
        Ok(FaultPlan { events })
    }

    pub fn events(&self) -> &[FaultEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_fault(&self) -> Option<Duration> {
        self.events.first().map(|e| e.at)
    }

    /// Time of the last restart or heal, when the plan ends faulty-free.
    pub fn fault_end(&self) -> Option<Duration> {
        self.events
            .iter()
            .filter(|e| matches!(e.action, FaultAction::Restart | FaultAction::Heal))
            .map(|e| e.at)
            .last()
    }

    /// Largest number of nodes simultaneously crashed or cut off from the
    /// largest partition group.
    pub fn max_faulty(&self, n: usize) -> usize {
        let mut crashed: Group = BTreeSet::new();
        let mut cut: Group = BTreeSet::new();
        let mut worst = 0;
        for ev in &self.events {
            match &ev.action {
                FaultAction::Crash => crashed.extend(ev.targets.iter().copied()),
                FaultAction::Restart => crashed.retain(|t| !ev.targets.contains(t)),
                FaultAction::Partition { groups } => {
                    let all = complete_groups(groups, n);
                    let largest = all.iter().max_by_key(|g| g.len()).cloned().unwrap_or_default();
                    cut = (0..n).map(NodeId::from).filter(|id| !largest.contains(id)).collect();
                }
                FaultAction::Heal => cut.clear(),
            }
            worst = worst.max(crashed.union(&cut).count());
        }
        worst
    }

    /// Every node named by any event.
    pub fn touched(&self) -> Group {
        let mut out = BTreeSet::new();
        for ev in &self.events {
            out.extend(ev.targets.iter().copied());
        }
        out
    }
}

/// Something faults can be injected into.
pub trait FaultTarget {
    type Error;
    fn crash(&mut self, node: NodeId) -> Result<(), Self::Error>;
    fn restart(&mut self, node: NodeId) -> Result<(), Self::Error>;
    /// `groups` is already completed with the implicit group.
    fn partition(&mut self, groups: &[Group]) -> Result<(), Self::Error>;
    fn heal(&mut self) -> Result<(), Self::Error>;
}

pub fn apply<T: FaultTarget>(event: &FaultEvent, n: usize, target: &mut T) -> Result<(), T::Error> {
    match &event.action {
        FaultAction::Crash => event.targets.iter().try_for_each(|id| target.crash(*id)),
        FaultAction::Restart => event.targets.iter().try_for_each(|id| target.restart(*id)),
        FaultAction::Partition { groups } => target.partition(&complete_groups(groups, n)),
        FaultAction::Heal => target.heal(),
    }
}

pub fn group(range: core::ops::Range<u16>) -> Group {
    range.map(NodeId).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn crash_plan_counts_faulty() {
        let p = FaultPlan::new(vec![FaultEvent::crash(10, [5, 6, 7])], 10).unwrap();
        assert_eq!(p.events().len(), 1);
        assert_eq!(p.max_faulty(10), 3);
    }

    #[test]
    fn restart_of_live_node_rejected() {
        let e = FaultPlan::new(vec![FaultEvent::restart(20, [3])], 10).unwrap_err();
        assert!(matches!(e, FaultError::UnpairedHeal { index: 0, .. }));
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            FaultPlan::new(vec![FaultEvent::crash(10, [1]), FaultEvent::restart(5, [1])], 10),
            Err(FaultError::UnsortedEvents { index: 1 })
        );
        assert_eq!(
            FaultPlan::new(vec![FaultEvent::crash(10, [12])], 10),
            Err(FaultError::UnknownTarget { index: 0, node: NodeId(12) })
        );
        assert!(matches!(FaultPlan::new(vec![FaultEvent::heal(3)], 10), Err(FaultError::UnpairedHeal { .. })));
        assert!(matches!(
            FaultPlan::new(vec![FaultEvent::partition(1, vec![group(0..5), group(3..8)])], 10),
            Err(FaultError::SchemaError(_))
        ));
    }

    #[test]
    fn partition_completes_and_counts_minority() {
        let p = FaultPlan::new(vec![FaultEvent::partition(10, vec![group(6..10)]), FaultEvent::heal(20)], 10).unwrap();
        assert_eq!(p.max_faulty(10), 4);
        let groups = complete_groups(&[group(6..10)], 10);
        assert_eq!(groups, vec![group(6..10), group(0..6)]);
        let rules = partition_rules(&groups);
        assert_eq!(rules.len(), 1);
        assert!(rules[0].matches(NodeId(0), NodeId(7)) && rules[0].matches(NodeId(7), NodeId(0)));
        assert!(!rules[0].matches(NodeId(0), NodeId(5)));
    }

    #[derive(Default)]
    struct Log(Vec<alloc::string::String>);

    impl FaultTarget for Log {
        type Error = ();
        fn crash(&mut self, n: NodeId) -> Result<(), ()> {
            self.0.push(alloc::format!("crash {n}"));
            Ok(())
        }
        fn restart(&mut self, n: NodeId) -> Result<(), ()> {
            self.0.push(alloc::format!("restart {n}"));
            Ok(())
        }
        fn partition(&mut self, g: &[Group]) -> Result<(), ()> {
            self.0.push(alloc::format!("part {}", g.len()));
            Ok(())
        }
        fn heal(&mut self) -> Result<(), ()> {
            self.0.push("heal".into());
            Ok(())
        }
    }

    #[test]
    fn apply_dispatches_per_target() {
        let mut log = Log::default();
        apply(&FaultEvent::crash(1, [5, 6, 7]), 10, &mut log).unwrap();
        apply(&FaultEvent::partition(2, vec![group(0..6), group(6..10)]), 10, &mut log).unwrap();
        assert_eq!(log.0, vec!["crash 5", "crash 6", "crash 7", "part 2"]);
    }
}
