use thiserror::Error;

/// Errors surfaced by operators, the encoder, gradients, training, and the simulator.
#[derive(Debug, Clone, Error)]
pub enum CrsaeError {
    /// Operand shapes are inconsistent; the message reports both shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value violates its invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The encoder produced a non-finite or runaway iterate; usually the step
    /// constant is below the largest eigenvalue of HᵀH.
    #[error("encoder diverged at iteration {iteration}: {reason}")]
    EncoderDiverged { iteration: usize, reason: String },

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    /// Gradient replay detected non-finite values.
    #[error("gradient non-finite at iteration {iteration}")]
    GradientNonFinite { iteration: usize },

    /// Rejection sampling could not satisfy the requested pairwise
    /// correlation range; reports the tightest range achieved.
    #[error(
        "filter generation exhausted {attempts} attempts; requested correlations in \
         [{requested_lo}, {requested_hi}], tightest achieved [{achieved_lo}, {achieved_hi}]"
    )]
    CorrelationRangeUnreachable {
        attempts: usize,
        requested_lo: f64,
        requested_hi: f64,
        achieved_lo: f64,
        achieved_hi: f64,
    },

    /// Exhaustive filter matching is limited to small banks.
    #[error("exhaustive matching supports at most {max} filters, got {got}; use the greedy strategy")]
    TooManyFilters { max: usize, got: usize },

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),
}

pub type Result<T> = std::result::Result<T, CrsaeError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> CrsaeError {
    CrsaeError::ShapeMismatch(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> CrsaeError {
    CrsaeError::InvalidConfig(msg.into())
}
