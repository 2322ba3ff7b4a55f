use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use sensibench::live::{self, AgentConn};
use sensibench::BenchError;
use sensibench_core::consensus::ProtocolKind;
use sensibench_core::experiment::presets::{self, Preset};
use sensibench_core::faults::wire::Verb;
use sensibench_core::faults::{FaultEvent, FaultPlan};

#[test]
fn crash_run_commits_and_stays_safe() {
    let mut spec = presets::desk(ProtocolKind::Leaderled, Preset::Baseline);
    spec.run_length = Duration::from_secs(4);
    spec.drain = Duration::from_secs(4);
    let mut crash = FaultEvent::crash(0, [7, 8, 9]);
    crash.at = Duration::from_millis(1500);
    spec.faults = FaultPlan::new(vec![crash], 10).unwrap();
    let out = live::run(&spec).unwrap();
    assert_eq!(out.summary.submitted, 200);
    assert_eq!(out.summary.committed, 200, "{:?}", out.summary);
    assert!(out.check_safety().is_empty());
    assert_eq!(out.down_at_end.len(), 3);
}

#[test]
fn partition_and_restart_through_agents() {
    let mut spec = presets::desk(ProtocolKind::Leaderless, Preset::Baseline);
    spec.run_length = Duration::from_secs(4);
    spec.drain = Duration::from_secs(8);
    spec.network.link.poll_interval = Duration::from_millis(500);
    let at = |e: FaultEvent, ms| FaultEvent { at: Duration::from_millis(ms), ..e };
    spec.faults = FaultPlan::new(
        vec![
            at(FaultEvent::crash(0, [9]), 500),
            at(FaultEvent::partition(0, vec![presets_group(0..6), presets_group(6..10)]), 1000),
            at(FaultEvent::heal(0), 2000),
            at(FaultEvent::restart(0, [9]), 2500),
        ],
        10,
    )
    .unwrap();
    let out = live::run(&spec).unwrap();
    assert_eq!(out.summary.committed, out.summary.submitted, "{:?}", out.summary);
    assert!(out.check_safety().is_empty());
    assert!(out.down_at_end.is_empty());
}

fn presets_group(r: std::ops::Range<u16>) -> sensibench_core::faults::Group {
    sensibench_core::faults::group(r)
}

fn fake_agent(reply: impl Fn(&str) -> Option<String> + Send + 'static) -> std::net::SocketAddr {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    thread::spawn(move || {
        let (s, _) = l.accept().unwrap();
        let mut w = s.try_clone().unwrap();
        for line in BufReader::new(s).lines() {
            let line = line.unwrap();
            if let Some(r) = reply(&line) {
                w.write_all(r.as_bytes()).unwrap();
            }
        }
    });
    addr
}

#[test]
fn agent_rejection_is_a_live_failure() {
    let addr = fake_agent(|line| {
        let seq = line.split(' ').nth(1).unwrap().to_string();
        Some(format!("ERR {seq} busy\n"))
    });
    let mut c = AgentConn::connect(addr, Duration::from_millis(200)).unwrap();
    let e = c.command(Verb::Heal).unwrap_err();
    assert!(matches!(e, BenchError::LiveAgent(_)));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn silent_agent_gets_one_retry() {
    let seen = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let s2 = seen.clone();
    let addr = fake_agent(move |_| {
        s2.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        None
    });
    let mut c = AgentConn::connect(addr, Duration::from_millis(100)).unwrap();
    let e = c.command(Verb::Crash(vec![])).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    thread::sleep(Duration::from_millis(50));
    assert_eq!(seen.load(std::sync::atomic::Ordering::SeqCst), 2);
}

#[test]
fn late_ack_after_retry_is_accepted() {
    let count = std::sync::Mutex::new(0);
    let addr = fake_agent(move |line| {
        let mut c = count.lock().unwrap();
        *c += 1;
        (*c == 2).then(|| format!("ACK {}\n", line.split(' ').nth(1).unwrap()))
    });
    let mut c = AgentConn::connect(addr, Duration::from_millis(100)).unwrap();
    c.command(Verb::Heal).unwrap();
}
