//! Core of the `sensibench` fault-tolerance benchmark.
//!
//! Everything in this crate is deterministic and free of IO so it builds for
//! `no_std` targets with an allocator:
//!
//! * [`metrics`] turns latency samples into eCDFs, super-cumulatives and
//!   sensitivity scores.
//! * [`simnet`] is a seeded discrete-event message fabric with drop rules,
//!   crash state and inbound token-bucket throttling.
//! * [`consensus`] hosts four reference replicated-ledger protocols.
//! * [`faults`] describes timed fault plans and the observer line protocol.
//! * [`workload`] generates open-loop client traffic and tracks transactions.
//! * [`experiment`] wires the above into a single simulated run.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod consensus;
pub mod experiment;
pub mod faults;
pub mod metrics;
pub mod simnet;
mod time;
pub mod workload;

pub use time::{ParseTimeError, SimTime};

pub use simnet::NodeId;
