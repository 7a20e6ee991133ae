use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data (knot vectors, model files, problem files).
    #[error("format error: {0}")]
    Format(String),

    /// A configuration the library cannot honour (e.g. degrees beyond the exact binomial range).
    #[error("configuration error: {0}")]
    Config(String),

    /// Geometry for which the integrand or its approximation is undefined.
    #[error("degenerate geometry in {element}: {reason}")]
    DegenerateGeometry { element: String, reason: String },

    /// Linear solver failure.
    #[error("solver error: {0}")]
    Solver(String),

    /// Radial-basis or B-spline fitting failure.
    #[error("fit error: {0}")]
    Fit(String),

    /// Violated internal invariant; indicates a bug upstream of the call.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path} at {pointer}: {message}")]
    Json {
        path: PathBuf,
        pointer: String,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Format(_) | Error::Config(_) | Error::Io { .. } | Error::Json { .. }
        )
    }
}
