//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation
    /// (non-finite input, non-positive variance, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Simulation parameters fail validation (sign constraints, dt guard).
    #[error("configuration error: {0}")]
    Config(String),

    /// A protocol schedule is malformed (negative durations, empty stage list).
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A selection produced no trajectories.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// Input data are degenerate for the requested fit or estimate
    /// (collinear design matrix, zero sample spread).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// PSD calibration could not resolve an oscillation peak.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A serialized file does not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
