//! Deterministic discrete-event simulator and protocol library for a
//! multi-hop tree Wi-Fi overlay of heterogeneous devices.
//!
//! The stack, bottom up:
//!
//! - [`sim`] — virtual clock, time-ordered event queue, visibility graph and
//!   lossy links with seeded per-link randomness.
//! - [`wifi`] — dual-interface node abstraction: a softAP side accepting
//!   children and a STA side attaching to one parent, with MAC-derived
//!   static AP addressing and DHCP-style STA addressing.
//! - [`routing`] — proactive destination-based routing with sequence
//!   numbers, full/partial update generation and tree-wide invalidation.
//! - [`lifecycle`] — the eight-state node lifecycle: integration, normal
//!   operation, and layered recovery from parent loss.
//! - [`middleware`] — the strategy layer (Inject, Publish/Subscribe,
//!   Topology) that lets applications steer paths or shape the tree.
//! - [`nn`] — distributed and centralized multilayer-perceptron inference
//!   driven by a coordinator that assigns neurons to devices.
//! - [`monitor`] — throughput and timing accounting over the root's
//!   observation stream, plus report rendering.
//!
//! [`scenario`] describes a run (nodes, links, schedules, faults) and
//! [`runner`] assembles everything into a [`runner::Simulation`].

pub mod envelope;
pub mod lifecycle;
pub mod middleware;
pub mod monitor;
pub mod nn;
pub mod node;
pub mod routing;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod wifi;

pub use envelope::{Category, Envelope};
pub use runner::{run_scenario, RunReport, Simulation};
pub use scenario::ScenarioConfig;
pub use sim::{NodeId, SimTime};
