use thiserror::Error;

use crate::simnet::Pid;

/// Errors raised by the protocol state machines and the simulator harness.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("vector length mismatch: expected {expected} components, got {got} (misconfigured cluster size)")]
    ClusterSizeMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("process id {pid} out of range for a cluster of {n}")]
    PidOutOfRange { pid: Pid, n: usize },

    #[error("process {0} received a heartbeat from itself")]
    SelfHeartbeat(Pid),

    #[error("operation not allowed in phase {phase}: {op}")]
    Phase { op: &'static str, phase: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("out-of-order append: next slot is {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("duplicate key {0:?}")]
    DuplicateKey(String),

    #[error("keys are not sorted at {0:?}")]
    UnsortedKeys(String),

    #[error("key {0:?} not present")]
    KeyNotFound(String),

    #[error("no snapshot stored")]
    NoSnapshot,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("old size {old} exceeds current leaf count {current}")]
    ProofSize { old: usize, current: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
