//! Network, route sets, value-of-time classes, demand scenarios and the
//! file formats that describe them.

mod instance;
mod network;
mod routes;
mod synthetic;

pub use instance::{
    load_instance, DemandScenario, InstanceConfig, OdPair, ProblemInstance, Route, RouteSelection,
    VotClass,
};
pub use network::{parse_network, parse_tntp, Link, Network};
pub use routes::{enumerate_k_least_congested, free_flow_truck_time};
pub use synthetic::{gen_synthetic, parallel_network, pigou_instance, DemandSpec, SyntheticSpec};

use thiserror::Error;

/// Tolerance on the sum of scenario probabilities.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// The Sioux Falls network (24 nodes, 76 links) in the native format.
/// Free-flow times and capacities are the usual benchmark values with
/// `eps_b = 0.15 * eps_a` and no passenger volume.
pub const SIOUX_FALLS: &str = include_str!("../../data/sioux_falls.net");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{}unknown node {node} (network has {nodes} nodes)", at(.line))]
    UnknownNode {
        line: Option<usize>,
        node: usize,
        nodes: usize,
    },
    #[error("{}duplicate link id `{id}`", at(.line))]
    DuplicateLink { line: Option<usize>, id: String },
    #[error("{}link `{id}`: {reason}", at(.line))]
    BadLink {
        line: Option<usize>,
        id: String,
        reason: String,
    },
}

fn at(line: &Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl NetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            NetError::Malformed { line, .. } => Some(*line),
            NetError::UnknownNode { line, .. }
            | NetError::DuplicateLink { line, .. }
            | NetError::BadLink { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("[{section}] {reason}")]
    Config {
        section: &'static str,
        reason: String,
    },
    #[error("[scenarios] probabilities sum to {sum}, expected 1 (tolerance {PROBABILITY_TOL})")]
    ProbabilitySum { sum: f64 },
    #[error("[od_pairs] no path from node {origin} to node {destination}")]
    NoPath { origin: usize, destination: usize },
    #[error("[classes] duplicate value of time {vot}")]
    DuplicateVot { vot: f64 },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

impl InstanceError {
    pub(crate) fn config(section: &'static str, reason: impl Into<String>) -> Self {
        InstanceError::Config {
            section,
            reason: reason.into(),
        }
    }
}
