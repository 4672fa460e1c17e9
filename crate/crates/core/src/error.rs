//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("curvature argument outside the positive cone: entry {index} = {value}")]
    Domain { index: usize, value: f64 },

    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },

    #[error("negative argument {0} for speed profile")]
    NegativeArgument(f64),

    #[error("invalid speed profile: {0}")]
    InvalidProfile(String),

    #[error("invalid speed function: {0}")]
    InvalidSpeed(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("profile not strictly convex at node {node} (theta = {theta}): r1 = {r1}, r2 = {r2}")]
    NotConvex { node: usize, theta: f64, r1: f64, r2: f64 },

    #[error("convexity breakdown at t={t}")]
    ConvexityBreakdown { t: f64 },

    #[error("no convergence case applies to this speed (set override_classification to run anyway)")]
    ClassificationEmpty,

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
