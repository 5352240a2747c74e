//! Error type shared across the library.

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates a structural requirement (non-finite entries,
    /// empty sets, wrong shape semantics).
    #[error("invalid data: {0}")]
    Data(String),

    /// Two objects that must share dimensions do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric routine failed to converge or produced an invalid state.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The GCV trace correction diverges (effective degrees of freedom
    /// too close to the sample size).
    #[error("GCV correction diverged: {0}")]
    CorrectionBlowup(String),

    /// A mixed-loss objective is not strictly convex for the requested
    /// mixing weight.
    #[error("objective not strictly convex: {0}")]
    NonConvex(String),

    /// A smoother family failed the tangent-identity probe and was rejected.
    #[error("smoother family rejected: {0}")]
    FamilyRejected(String),

    /// A CSV cell could not be parsed as a number. Row and column are 1-based.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
