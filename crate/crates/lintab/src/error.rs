//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants carry the
//! pieces callers (and tests) need to assert on: shapes for dimension
//! mismatches, field names for malformed checkpoint files, capacities for
//! model limits.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape. `left` and `right` are (rows, cols).
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Shape {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A value that a contract requires to be finite was NaN or infinite.
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    /// A precondition on an argument was violated.
    #[error("contract violation: {what}")]
    Contract { what: String },

    /// An input exceeds a configured capacity (prompt length, feature or
    /// class capacity, ...).
    #[error("{what} = {got} exceeds capacity {cap}")]
    Capacity {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    /// A serialized artifact (checkpoint, dataset file) is malformed.
    /// `field` names the offending part of the file.
    #[error("malformed {kind}: field `{field}`: {detail}")]
    Format {
        kind: &'static str,
        field: String,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for [`Error::Contract`].
    pub fn contract(what: impl Into<String>) -> Self {
        Error::Contract { what: what.into() }
    }

    /// Shorthand for a shape-mismatch error.
    pub fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }

    /// Shorthand for a format error on a named field.
    pub fn format(kind: &'static str, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            field: field.into(),
            detail: detail.into(),
        }
    }
}
