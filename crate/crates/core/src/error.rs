use thiserror::Error;

use crate::sqp::IterateRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("polyhedron is empty")]
    EmptyPolyhedron,
    #[error("point is not in the set")]
    PointNotInSet,
    #[error("vector is not normal to the set at the point (distance {0:e})")]
    NotANormalVector(f64),
    #[error("face enumeration over {rows} rows exceeds the cap of {cap}")]
    TooManyRows { rows: usize, cap: usize },
    #[error("{what} has dimension {dim}, above the supported cap {cap}")]
    DimensionCap {
        what: &'static str,
        dim: usize,
        cap: usize,
    },
    #[error("point lies outside dom g")]
    PointOutsideDomain,
    #[error("vector is not a subgradient (gap {0:e})")]
    NotASubgradient(f64),
    #[error("PLQ function has no pieces")]
    NoPiece,
    #[error("x is not in Theta")]
    PointNotInTheta,
    #[error("(x, lambda) is not a KKT point (residual {0:e})")]
    NotAKktPoint(f64),
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("quadratic program is unbounded below")]
    Unbounded,
    #[error("no piece of g admits a feasible linearized subproblem")]
    NoFeasiblePiece,
    #[error("all {candidates} subproblem candidates lie outside the localization radius {delta:e}")]
    AllCandidatesOutsideDelta { candidates: usize, delta: f64 },
    #[error("subproblem failed at iteration {}: {cause}", trace.len().saturating_sub(1))]
    SubproblemFailure {
        cause: Box<Error>,
        trace: Vec<IterateRecord>,
    },
    #[error("iteration limit reached after {} records", trace.len())]
    MaxIterReached { trace: Vec<IterateRecord> },
    #[error("step is degenerate (norm {0:e})")]
    DegenerateStep(f64),
    #[error("zero step")]
    ZeroStep,
    #[error("trace has {0} records, at least 4 are required")]
    TooShortTrace(usize),
    #[error("enumeration of {count} cells exceeds the cap {cap}")]
    TooManyFaces { count: usize, cap: usize },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("bad generator parameters: {0}")]
    BadParams(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
