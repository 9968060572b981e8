use crate::lattice::NodeId;

/// Errors raised by the lattice algorithms.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("disconnected lattice: raise v_max, T, or N coupling (reachable radius {radius})")]
    Disconnected { radius: usize },

    #[error("kernel would need {needed} bytes, above the memory cap of {cap} bytes")]
    MemoryCap { needed: u64, cap: u64 },

    #[error("empty support: cost vector has no finite entry")]
    EmptySupport,

    #[error("cost vector entry {index} is {value}")]
    InvalidCost { index: usize, value: f64 },

    #[error("supercritical divergence: costs fell to {value} after {steps} steps")]
    Divergence { steps: usize, value: f64 },

    #[error("graph has no cycle")]
    NoCycle,

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error(
        "boundary data not dominated: f({to}) - f({from}) = {lhs} exceeds phi({from} -> {to}) = {phi} (+{slack})"
    )]
    NotDominated {
        from: NodeId,
        to: NodeId,
        lhs: f64,
        phi: f64,
        slack: f64,
    },

    #[error("boundary node {0} is not a static class representative")]
    NotRepresentative(NodeId),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
