use std::fmt;

use thiserror::Error;

/// Which half of a snapshot pair a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRole {
    /// A point `x_k` (or a plain sample point outside of any pair).
    Source,
    /// An image `y_k = φ(x_k)`.
    Image,
}

impl fmt::Display for SampleRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleRole::Source => f.write_str("x"),
            SampleRole::Image => f.write_str("y"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error(
        "sample {index} ({role}) lies outside the kernel domain: max |coordinate - center| = {magnitude} >= {radius}; rescale the data or choose another kernel"
    )]
    DomainViolation {
        index: usize,
        role: SampleRole,
        magnitude: f64,
        radius: f64,
    },

    #[error("Gram matrix is numerically singular (condition estimate {condition:e})")]
    SingularMatrix { condition: f64 },

    #[error("rank-deficient {0}")]
    RankDeficient(String),

    #[error("trajectory blew up (non-finite state){}", match .sample { Some(k) => format!(" at sample {k}"), None => String::new() })]
    BlowUp { sample: Option<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;
