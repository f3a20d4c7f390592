//! Analysis and simulation toolkit for many-to-one multi-hop wireless networks.
//!
//! The crate models networks in which a set of source nodes forward traffic
//! over multiple wireless hops toward a single sink. It provides:
//!
//! - [`geometry`]: points, directed links, radio parameters, and the pairwise
//!   interference test used everywhere else.
//! - [`topology`]: node/link/route containers, deterministic generators for
//!   canonical chain layouts and random deployments, and a text serialization
//!   format.
//! - [`conflict`]: link compatibility graphs, hidden-node detection, carrier
//!   sensing range analysis, and concurrency counting.
//! - [`capacity`]: exact-rational throughput bounds, slot schedules, and
//!   schedule verification.
//! - [`sim`]: a discrete-event CSMA/CA simulator with collision
//!   classification and load/carrier-sense sweeps.
//! - [`hfp`]: hidden-node-free path selection schemes of increasing
//!   sophistication.

pub mod capacity;
pub mod conflict;
pub mod geometry;
pub mod hfp;
pub mod sim;
pub mod topology;

/// How concurrent transmissions are judged when checking a schedule or
/// deciding reception outcomes in the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterferenceMode {
    /// Every pair of concurrent transmissions must satisfy the pairwise
    /// spacing inequalities; a single too-close interferer corrupts a frame.
    Pairwise,
    /// Reception succeeds when the signal-to-interference ratio against the
    /// sum of all concurrent interferer powers clears the decode threshold.
    Aggregate,
}

impl std::fmt::Display for InterferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterferenceMode::Pairwise => write!(f, "pairwise"),
            InterferenceMode::Aggregate => write!(f, "aggregate"),
        }
    }
}

impl std::str::FromStr for InterferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairwise" => Ok(InterferenceMode::Pairwise),
            "aggregate" => Ok(InterferenceMode::Aggregate),
            other => Err(format!("unknown interference mode: {other}")),
        }
    }
}

/// Node identifier: index into a topology's node table.
pub type NodeId = usize;

/// Link identifier: index into a topology's link table.
pub type LinkId = usize;
