//! Deterministic, seed-reproducible simulation of partition-aware distributed
//! system automata with an economic control layer.
//!
//! The crate models a fleet of deterministic node automata composed into a
//! single interleaved global state machine. An adversary severs directed links
//! according to a constrained schedule; strategic agents propose events from
//! their local views; an arbitration rule enacts one admissible event per
//! logical step. On top of that sit:
//!
//! - quantified consistency/availability deviation metrics over operation
//!   histories ([`metrics`]),
//! - an audit / penalty / escrow mechanism with reputation tracking
//!   ([`audit`], [`game`]),
//! - hash-chained per-node logs, conflict detection, and replay-based state
//!   reconciliation after partitions heal ([`log`], [`reconcile`]),
//! - Merkle commitments over node state used as the convergence certificate
//!   ([`merkle`]),
//! - a bounded stack-machine script interpreter usable as a node-level
//!   acceptance predicate ([`script`]),
//! - the simulation harness itself ([`sim`]): scenario -> trace, metric
//!   emission, recovery measurement.
//!
//! Everything is pure value semantics: a run is a function of the scenario
//! and seed, and serialized traces are byte-for-byte reproducible. The crate
//! is `no_std`-compatible (requires `alloc`); disable the default `std`
//! feature for embedded use.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod audit;
pub mod automaton;
pub mod game;
pub mod log;
pub mod merkle;
pub mod metrics;
pub mod partition;
pub mod rational;
pub mod reconcile;
pub mod script;
pub mod sim;

pub use automaton::{
    Dsa, Effect, Event, EventKind, GlobalState, LocalState, NodeAutomaton, NodeId, NodeStatus,
    OpId, Payload, ReplicatedOp,
};
pub use partition::{AdversaryConstraints, Link, PartitionSchedule};
pub use rational::Rat;
