//! Distributed priority-based load shedding.
//!
//! Regions hold discrete loads tagged with criticality values. Shedding the
//! least critical loads first until a power deficit is covered amounts to
//! finding the smallest threshold `z*` at which the cumulative criticality
//! function (CCF) reaches the deficit. Regions find it without a
//! coordinator by running a distributed root-finder on a Lipschitz
//! surrogate of their local CCFs over a time-varying communication graph,
//! then agreeing on a minimum through min-consensus.

pub mod criticality;
pub mod error;
pub mod netgraph;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod rootfind;
pub mod scenario;

pub use error::{Error, Result};
