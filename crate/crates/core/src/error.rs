use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Fewer tracked features than the plane fit needs, or a degenerate layout.
    #[error("insufficient features for plane fit: {0}")]
    InsufficientFeatures(String),

    /// Regressor or history stack does not carry enough excitation.
    #[error("insufficient excitation: {0}")]
    InsufficientExcitation(String),

    /// Safety constraint evaluated outside its domain (h_r <= 0, negative sqrt argument).
    #[error("safety fault at t={t:.3}s: {reason}")]
    SafetyFault { t: f64, reason: String },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("riccati solution lost positive definiteness at t={t:.3}s (min eigenvalue {min_eig:e})")]
    RiccatiIndefinite { t: f64, min_eig: f64 },

    #[error("dwell time not admissible: previous bound {prev_bound} <= margin {delta}")]
    DwellRejected { prev_bound: f64, delta: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
