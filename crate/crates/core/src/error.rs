use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range (graph has {len} nodes)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("injection plan violates the same-group edge rule: {}", format_violations(.0))]
    PlanViolation(Vec<EdgeViolation>),

    #[error("invalid injection plan: {0}")]
    InvalidPlan(String),

    #[error("node {0} has no neighbors; homophily is undefined")]
    IsolatedNode(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sensitive group {0} has no members in the requested node set")]
    EmptyGroup(u8),

    #[error("empty node set: {0}")]
    EmptyMask(&'static str),

    #[error("non-finite loss at {context}: {value}")]
    NonFinite { context: String, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The attack stopped early; `partial` holds the last finite state.
    #[error("attack aborted: {reason}")]
    AttackAborted {
        reason: String,
        partial: Box<crate::attack::AttackOutcome>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

/// One injected edge that breaks the same-group rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeViolation {
    pub injected: usize,
    pub target: usize,
    pub injected_group: u8,
    pub target_group: u8,
}

fn format_violations(v: &[EdgeViolation]) -> String {
    v.iter()
        .map(|e| {
            format!(
                "(injected {} [group {}] -> target {} [group {}])",
                e.injected, e.injected_group, e.target, e.target_group
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}
