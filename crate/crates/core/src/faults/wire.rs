//! Observer control protocol: one UTF-8 line per command or reply.
//!
//! ```text
//! CMD <seq> CRASH[ <targets>]      targets: comma-separated indices
//! CMD <seq> RESTART[ <targets>]    (none means the agent's own node)
//! CMD <seq> PART <groups>          groups: a-b|c-d, items may also be
//! CMD <seq> HEAL                    single indices: 0-3,7|4-6
//! ACK <seq>
//! ERR <seq> <code>
//! ```

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::Group;
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verb {
    Crash(Vec<NodeId>),
    Restart(Vec<NodeId>),
    Part(Vec<Group>),
    Heal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObserverCommand {
    pub seq: u64,
    pub verb: Verb,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ack(u64),
    Err(u64, String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed frame: {0:?}")]
pub struct MalformedFrame(pub String);

fn targets(out: &mut String, ids: &[NodeId]) {
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{id}");
    }
}

/// Writes a group as comma-separated runs, e.g. `0-3,7`.
fn write_group(out: &mut String, g: &Group) {
    let ids: Vec<u16> = g.iter().map(|n| n.0).collect();
    let mut i = 0;
    let mut first = true;
    while i < ids.len() {
        let mut j = i;
        while j + 1 < ids.len() && ids[j + 1] == ids[j] + 1 {
            j += 1;
        }
        if !first {
            out.push(',');
        }
        first = false;
        if j == i {
            let _ = write!(out, "{}", ids[i]);
        } else {
            let _ = write!(out, "{}-{}", ids[i], ids[j]);
        }
        i = j + 1;
    }
}

impl ObserverCommand {
    pub fn encode(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "CMD {} ", self.seq);
        match &self.verb {
            Verb::Crash(t) | Verb::Restart(t) => {
                s.push_str(if matches!(self.verb, Verb::Crash(_)) { "CRASH" } else { "RESTART" });
                if !t.is_empty() {
                    s.push(' ');
                    targets(&mut s, t);
                }
            }
            Verb::Part(groups) => {
                s.push_str("PART ");
                for (i, g) in groups.iter().enumerate() {
                    if i > 0 {
                        s.push('|');
                    }
                    write_group(&mut s, g);
                }
            }
            Verb::Heal => s.push_str("HEAL"),
        }
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self, MalformedFrame> {
        let bad = || MalformedFrame(line.into());
        let body = line.strip_suffix('\n').unwrap_or(line);
        if body.contains(['\n', '\r']) {
            return Err(bad());
        }
        let mut parts = body.split(' ');
        if parts.next() != Some("CMD") {
            return Err(bad());
        }
        let seq = parse_num::<u64>(parts.next()).ok_or_else(bad)?;
        let verb = parts.next().ok_or_else(bad)?;
        let args = parts.next();
        if parts.next().is_some() {
            return Err(bad());
        }
        let verb = match (verb, args) {
            ("CRASH", a) => Verb::Crash(parse_targets(a).ok_or_else(bad)?),
            ("RESTART", a) => Verb::Restart(parse_targets(a).ok_or_else(bad)?),
            ("PART", Some(a)) => Verb::Part(
                a.split('|').map(parse_group).collect::<Option<Vec<_>>>().filter(|g| g.len() >= 2).ok_or_else(bad)?,
            ),
            ("HEAL", None) => Verb::Heal,
            _ => return Err(bad()),
        };
        Ok(ObserverCommand { seq, verb })
    }
}

impl Reply {
    pub fn seq(&self) -> u64 {
        match self {
            Reply::Ack(s) | Reply::Err(s, _) => *s,
        }
    }

    pub fn encode(&self) -> String {
        match self {
            Reply::Ack(s) => alloc::format!("ACK {s}\n"),
            Reply::Err(s, code) => alloc::format!("ERR {s} {code}\n"),
        }
    }

    pub fn decode(line: &str) -> Result<Self, MalformedFrame> {
        let bad = || MalformedFrame(line.into());
        let body = line.strip_suffix('\n').unwrap_or(line);
        let mut parts = body.split(' ');
        let kind = parts.next();
        let seq = parse_num::<u64>(parts.next()).ok_or_else(bad)?;
        let code = parts.next();
        if parts.next().is_some() {
            return Err(bad());
        }
        match (kind, code) {
            (Some("ACK"), None) => Ok(Reply::Ack(seq)),
            (Some("ERR"), Some(c)) if !c.is_empty() && !c.contains(['\n', '\r']) => Ok(Reply::Err(seq, c.into())),
            _ => Err(bad()),
        }
    }
}

/// Decimal without sign or leading zeros (other than `0` itself), so each
/// number has one spelling.
fn parse_num<T: core::str::FromStr>(s: Option<&str>) -> Option<T> {
    let s = s?;
    let canonical = !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    if canonical {
        s.parse().ok()
    } else {
        None
    }
}

/// Absent targets mean the agent's own node (an empty list).
fn parse_targets(s: Option<&str>) -> Option<Vec<NodeId>> {
    match s {
        None => Some(Vec::new()),
        Some(s) => s.split(',').map(|x| parse_num::<u16>(Some(x)).map(NodeId)).collect(),
    }
}

fn parse_group(s: &str) -> Option<Group> {
    let mut g = Group::new();
    for item in s.split(',') {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse_num::<u16>(Some(a))?, parse_num::<u16>(Some(b))?);
                if a > b {
                    return None;
                }
                g.extend((a..=b).map(NodeId));
            }
            None => {
                g.insert(NodeId(parse_num::<u16>(Some(item))?));
            }
        }
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::group;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let c = ObserverCommand { seq: 7, verb: Verb::Crash(vec![]) };
        assert_eq!(c.encode(), "CMD 7 CRASH\n");
        assert_eq!(Reply::Ack(7).encode(), "ACK 7\n");
        let p = ObserverCommand { seq: 9, verb: Verb::Part(vec![group(0..6), group(6..10)]) };
        assert_eq!(p.encode(), "CMD 9 PART 0-5|6-9\n");
        assert_eq!(ObserverCommand::decode("CMD 9 PART 0-5|6-9\n"), Ok(p));
        let r = ObserverCommand { seq: 3, verb: Verb::Restart(vec![NodeId(5), NodeId(6)]) };
        assert_eq!(r.encode(), "CMD 3 RESTART 5,6\n");
    }

    #[test]
    fn garbage_rejected() {
        for line in ["", "hello", "CMD x CRASH", "CMD 1 NUKE", "CMD 1 HEAL now", "CMD 01 HEAL", "CMD 1 PART 0-5", "CMD 1 PART 5-0|6", "CMD 1 CRASH 1,,2", "ACK", "ERR 3"] {
            assert!(ObserverCommand::decode(line).is_err() && Reply::decode(line).is_err(), "{line:?}");
        }
    }

    fn arb_verb() -> impl Strategy<Value = Verb> {
        let ids = prop::collection::vec(0u16..64, 0..6).prop_map(|v| v.into_iter().map(NodeId).collect::<Vec<_>>());
        let grp = prop::collection::btree_set(0u16..64, 1..10).prop_map(|s| s.into_iter().map(NodeId).collect::<Group>());
        prop_oneof![
            ids.clone().prop_map(Verb::Crash),
            ids.prop_map(Verb::Restart),
            prop::collection::vec(grp, 2..5).prop_map(Verb::Part),
            Just(Verb::Heal),
        ]
    }

    proptest! {
        #[test]
        fn command_round_trip(seq in any::<u64>(), verb in arb_verb()) {
            let c = ObserverCommand { seq, verb };
            prop_assert_eq!(ObserverCommand::decode(&c.encode()), Ok(c));
        }

        #[test]
        fn reply_round_trip(seq in any::<u64>(), code in "[a-z][a-z-]{0,15}", ok in any::<bool>()) {
            let r = if ok { Reply::Ack(seq) } else { Reply::Err(seq, code) };
            prop_assert_eq!(Reply::decode(&r.encode()), Ok(r));
        }

        #[test]
        fn decode_never_panics(s in "\\PC{0,40}") {
            let _ = ObserverCommand::decode(&s);
            let _ = Reply::decode(&s);
        }
    }
}
