use thiserror::Error;

/// Errors surfaced by the group, set and transport machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group mismatch: {0}")]
    GroupMismatch(String),
    #[error("cut locus: element at normalized distance {dist:.6} from identity, log chart limit {limit:.6}")]
    CutLocus { dist: f64, limit: f64 },
    #[error("chart violation: {0}")]
    ChartViolation(String),
    #[error("containment violated: {0}")]
    ContainmentViolated(String),
    #[error("null-measure input: {0}")]
    NullMeasure(String),
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),
    #[error("unknown subgroup `{name}` for group {group}")]
    UnknownSubgroup { name: String, group: String },
    #[error("net mismatch: operands discretized on different nets")]
    NetMismatch,
    #[error("infeasible weights: {0}")]
    InfeasibleWeights(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
