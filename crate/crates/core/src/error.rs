use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible request {id}: energy {energy} outside [0, {capacity}]")]
    InfeasibleRequest {
        id: String,
        energy: f64,
        capacity: f64,
    },
    #[error("bad window ({a}, {d}) for horizon n = {n}")]
    BadWindow { a: usize, d: usize, n: usize },
    #[error("request {id}: power {power} must be positive")]
    NonpositivePower { id: String, power: f64 },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("window mismatch: {left:?} vs {right:?}")]
    WindowMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("subset must be nonempty and proper")]
    BadSubset,
    #[error("horizon n = {0} too large for exhaustive facet enumeration (max 16)")]
    HorizonTooLarge(usize),
    #[error("horizon must have at least one step")]
    EmptyHorizon,
    #[error("dimension mismatch: horizon {expected}, objective data {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("EV {id} has window ({a}, {d}) with no matching block in the solution")]
    FleetMismatch { id: String, a: usize, d: usize },
    #[error("brute-force enumeration too large: {0} combinations")]
    TooLarge(u128),
    #[error("empty vertex cloud")]
    EmptyCloud,
    #[error("{0}")]
    Rows(RowErrors),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid input data rather than I/O or the solver.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::SolverFailure(_) | Error::TooLarge(_)
        )
    }
}

/// A row-level failure while loading a fleet file. Rows are numbered from 1,
/// not counting the CSV header.
#[derive(Debug)]
pub struct RowError {
    pub row: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct RowErrors(pub Vec<RowError>);

impl fmt::Display for RowErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid row(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "; row {}: {}", e.row, e.error)?;
        }
        Ok(())
    }
}
