//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Asked for children below the finest resolution level.
    #[error("interval at level {level} has no children at depth {depth}")]
    LevelOverflow { level: u32, depth: u32 },

    /// Asked for the parent (or Haar sign) of the root interval.
    #[error("the root interval has no parent")]
    RootHasNoParent,

    /// The grid configuration is outside the supported range.
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),

    /// Two objects live on incompatible grids or have mismatched dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A Haar index that cannot be represented at the configured depth.
    #[error("basis index not representable: {0}")]
    UnrepresentableIndex(String),

    /// BMO norms need at least one test set.
    #[error("test-set family is empty")]
    EmptyFamily,

    /// Power iteration did not reach the requested tolerance. The field
    /// carries the last (still usable) estimate.
    #[error("operator norm estimate did not converge after {iters} iterations (last estimate {last:.6e})")]
    NoConvergence { last: f64, iters: usize },

    /// Unknown generator/suite/case name.
    #[error("unknown {kind}: {name}")]
    UnknownName { kind: &'static str, name: String },

    /// A paraproduct variant that has no implemented adjoint.
    #[error("adjoint not implemented for paraproduct variant {0}")]
    UnsupportedAdjoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
