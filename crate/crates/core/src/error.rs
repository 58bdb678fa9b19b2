use thiserror::Error;

use crate::dirichlet::DirichletFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{function}: argument {value} is outside the domain")]
    Domain { function: &'static str, value: f64 },

    #[error("polygamma order {0} is not supported (orders 0 through 3 are)")]
    UnsupportedOrder(u32),

    #[error("tree syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("duplicate component label `{0}`")]
    DuplicateLabel(String),

    #[error("interior node{} has {children} child; at least 2 are required", at_offset(.offset))]
    Arity { offset: Option<usize>, children: usize },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{node}` is a {kind} node; an interior node is required")]
    NodeKind { node: String, kind: &'static str },

    #[error("columns do not match the tree components: {0}")]
    ColumnMismatch(String),

    #[error("row {row}: components under node `{node}` sum to zero")]
    ZeroDenominator { row: usize, node: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("row {row}, component {component}: value {value} is not strictly inside (0, 1)")]
    Boundary { row: usize, component: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("at least {required} observations are required, found {found}")]
    TooFewObservations { required: usize, found: usize },

    #[error("component {0} is constant across observations; the Dirichlet MLE does not exist")]
    DegenerateData(usize),

    #[error(
        "Newton iteration did not converge after {} iterations (max |gradient| = {:e})",
        .0.report.iterations,
        .0.report.grad_norm
    )]
    NotConverged(Box<DirichletFit>),

    #[error("fit failed at node `{node}`: {source}")]
    NodeFit { node: String, source: Box<Error> },

    #[error("saddlepoint equation unsolved for z = {z} (bracket [{lo}, {hi}], residual {residual:e})")]
    SaddlepointNotConverged { z: f64, lo: f64, hi: f64, residual: f64 },

    #[error("while searching subcomposition {context}: {source}")]
    Search { context: String, source: Box<Error> },

    #[error("{path}: line {line}, column {column}: {message}")]
    DataParse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("zero components (use --zero-replace to substitute): {}", .0.join(", "))]
    ZeroComponent(Vec<String>),

    #[error("row {row} sums to {sum}, not 1 (use --close to renormalize)")]
    RowSum { row: usize, sum: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_offset(offset: &Option<usize>) -> String {
    offset.map(|o| format!(" at byte {o}")).unwrap_or_default()
}

impl Error {
    /// True when the failure comes from a numerical routine rather than from
    /// malformed input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotConverged(_) | Error::SaddlepointNotConverged { .. } => true,
            Error::DegenerateData(_) => true,
            Error::NodeFit { source, .. } | Error::Search { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn domain(function: &'static str, value: f64) -> Self {
        Error::Domain { function, value }
    }
}
