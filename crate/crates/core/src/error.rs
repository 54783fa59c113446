use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    /// Arrays that should share a grid do not.
    #[error("structural error: {0}")]
    Structural(String),

    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent solver or scenario configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The growth functional stays below one on the positive axis.
    #[error("no positive root: growth functional at zero is {r0} < 1")]
    NoPositiveRoot { r0: f64 },

    /// A simulation produced non-finite values or blew up.
    #[error("diverged after t = {t}: {reason}")]
    Diverged { t: f64, reason: String },

    /// No candidate passed the positivity and residual filters.
    #[error("no admissible positive steady state: {0}")]
    NoSteadyState(String),

    /// Several candidates passed; the caller must decide.
    #[error("ambiguous steady state: {} admissible candidates", candidates.len())]
    AmbiguousSteadyState { candidates: Vec<(f64, f64)> },

    /// The non-extinction condition fails, so only the trivial state exists.
    #[error("no positive steady state: R0 = {r0} <= 1")]
    NoPositiveSteadyState { r0: f64 },

    /// A formula's hypothesis degenerates (e.g. a vanishing leading coefficient).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// A theorem hypothesis required by the operation is not met.
    #[error("hypothesis unmet: {0}")]
    Hypothesis(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
