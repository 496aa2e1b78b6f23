use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "neighborhood matrix is not symmetric: A[{i},{j}] differs from A[{j},{i}] by {diff:e}"
    )]
    NonSymmetricNeighborhood { i: usize, j: usize, diff: f64 },
    #[error("neighborhood matrix has a negative entry at ({i}, {j})")]
    NegativeNeighborhood { i: usize, j: usize },
    #[error("neighborhood matrix has a nonzero diagonal entry in row {0}")]
    NonZeroDiagonal(usize),
    #[error("neighborhood row {0} sums to zero")]
    ZeroRowSum(usize),
    #[error("rho = {0} is outside [0, 1)")]
    RhoOutOfRange(f64),
    #[error("phenotype column {0} has zero variance")]
    ConstantColumn(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("phenotype count c = {0} is odd; phenotypes must come in left/right pairs")]
    OddPhenotypeCount(usize),
    #[error("phenotype matrix has {y} subjects but genotype matrix has {x}")]
    SubjectCountMismatch { y: usize, x: usize },
    #[error("neighborhood matrix is {rows}x{cols}, expected {expected}x{expected}")]
    NeighborhoodShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("non-finite value in {what} at ({row}, {col})")]
    NonFiniteInput {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("{0} is not positive definite")]
    NonPositiveDefinite(&'static str),
    #[error("coefficient row {0} is identically zero")]
    DegenerateRow(usize),
    #[error("variational degrees of freedom {0} must exceed 3")]
    DegreesOfFreedomTooSmall(f64),
    #[error("need at least {required} posterior draws, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("c* must be positive, got {0}")]
    NonPositiveCStar(f64),
    #[error("all ridge coefficients are zero")]
    AllZeroRidge,
    #[error("non-finite log-likelihood at draw {draw}, subject {subject}")]
    NonFiniteLogLik { draw: usize, subject: usize },
    #[error("ridge design is singular")]
    SingularDesign,
    #[error("confounder matrix is rank deficient")]
    RankDeficientConfounders,
    #[error("invalid {name}: {msg}")]
    InvalidParameter { name: &'static str, msg: String },
    #[error("{path}: parse error at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },
    #[error("{path}: expected a {expected_rows}x{expected_cols} matrix, found {rows}x{cols}")]
    ShapeMismatch {
        path: PathBuf,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        col: usize,
    },
    #[error("sweep {sweep}: {source}")]
    AtSweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonPositiveDefinite(_)
            | Error::DegenerateRow(_)
            | Error::DegreesOfFreedomTooSmall(_)
            | Error::NonFiniteLogLik { .. }
            | Error::SingularDesign
            | Error::RankDeficientConfounders
            | Error::AllZeroRidge => ErrorKind::Numerical,
            Error::Io(_) | Error::Json(_) => ErrorKind::Io,
            Error::AtSweep { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn invalid(name: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            msg: msg.into(),
        }
    }
}
