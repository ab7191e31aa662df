//! Packet-level simulation of routing in Walker-Delta LEO constellations.
//!
//! Three forwarding policies are provided: offline shortest-path tables,
//! a deep Q-learning agent, and a hybrid that follows the table and falls
//! back to the agent when the next hop is down or congested.
//!
//! The crate is organised bottom-up:
//!
//! - [`orbits`]: constellation geometry and ground visibility.
//! - [`topology`]: time-varying link graph and the per-link delay model.
//! - [`traffic`]: gateway/terminal flows and Poisson packet arrivals.
//! - [`table`]: offline Dijkstra next-hop tables.
//! - [`dql`]: from-scratch deep Q-learning (MLP, Adam, replay, target net).
//! - [`policy`]: pure-RL, table and hybrid decision rules.
//! - [`engine`]: the discrete-event core and run metrics.
//! - [`config`] and [`cli`]: scenario files, presets and sweep commands.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dql;
pub mod engine;
pub mod error;
pub mod orbits;
pub mod policy;
pub mod table;
pub mod topology;
pub mod traffic;

pub use error::{Error, Result};
