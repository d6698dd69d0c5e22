use thiserror::Error;

use crate::tree::NodeId;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node not in tree: {0}")]
    UnknownNode(NodeId),

    #[error("node {0} is a leaf, expected a branching node")]
    NotBranch(NodeId),

    #[error("invalid node id {0:?}: {1}")]
    InvalidNodeId(Vec<u32>, &'static str),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("missing power profile for leaf {0}")]
    MissingProfile(NodeId),

    #[error("missing voltage sensitivity for leaf {0}")]
    MissingSensitivity(NodeId),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("qp solver did not converge after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e}, gap {gap:.3e})")]
    SolverFailed {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },

    #[error("subproblem of leaf {leaf} failed: {source}")]
    Agent {
        leaf: NodeId,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn length(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::LengthMismatch {
            what: what.into(),
            expected,
            got,
        }
    }

    /// True when the error (or the agent error it wraps) reports infeasibility.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) => true,
            Error::Agent { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
