//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A column named in the schema is missing from the CSV header.
    #[error("schema error: column `{0}` not found in header")]
    Schema(String),

    /// A cell failed to parse as a number. Row indices are 1-based data rows
    /// (the header is row 0).
    #[error("parse error at row {row}, column `{column}`: `{value}` is not numeric")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    /// The input file contains no data rows.
    #[error("empty input: no data rows")]
    EmptyInput,

    /// Inputs violate a construction invariant (length mismatch, non-finite
    /// values, invalid category codes).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the operation's domain (k = 0, unknown category code).
    #[error("domain error: {0}")]
    Domain(String),

    /// A required cross-product matrix is (numerically) singular.
    #[error("rank error in {context}: smallest singular value {smallest_sv:.3e}")]
    Rank { context: String, smallest_sv: f64 },

    /// The estimated instrument carries no usable variation.
    #[error("weak instrument: {0}")]
    WeakInstrument(String),

    /// A leave-one-out fitted value is undefined (leverage one).
    #[error("jackknife undefined: observation in category `{category}` has leverage 1")]
    JackknifeUndefined { category: String },

    /// Numerical failure (e.g. negative discriminant in the LIML quadratic).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 2 usage, 3 data, 4 numerical/rank.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyInput
            | Error::InvalidInput(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
            Error::Domain(_)
            | Error::Rank { .. }
            | Error::WeakInstrument(_)
            | Error::JackknifeUndefined { .. }
            | Error::Numerical(_) => 4,
        }
    }
}
