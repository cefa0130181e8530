//! Error type shared by every module of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building measures, sketches, models,
/// fits, or asymptotic quantities.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A spectral measure violates its invariants (empty atom list,
    /// non-positive location or weight, weight sum off, ratio out of range).
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// A sketch operator request violates its invariants (m > n, zero sizes).
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),

    /// A model configuration violates its invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An input lies outside the mathematical domain of a formula
    /// (wrong regime, ratio at the interpolation threshold, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A root bracket could not be established or the solver result is
    /// non-physical; indicates inputs outside the guaranteed regime.
    #[error("root solve failed: {0}")]
    RootSolve(String),

    /// An integrand or statistic evaluated to NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An experiment or serialization config could not be interpreted.
    #[error("invalid config: {0}")]
    Config(String),

    /// File I/O while emitting experiment artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
