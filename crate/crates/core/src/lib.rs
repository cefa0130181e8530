//! Sketched ridgeless least squares.
//!
//! The crate fits minimum-ℓ₂-norm least-squares estimators to sketched data
//! (S·X, S·Y) for random sketching operators S, evaluates their exact
//! finite-sample and Monte-Carlo out-of-sample risks, computes the matching
//! asymptotic risk limits by solving self-consistent spectral equations, and
//! selects optimal sketching sizes by closed form, theory-grid search, or a
//! validation set.
//!
//! Modules:
//! - [`measures`]: spectral measures (discrete, Marchenko–Pastur) and their
//!   integrals;
//! - [`sketch`]: Haar-orthogonal, subsampled-randomized-Hadamard, and i.i.d.
//!   Gaussian sketching operators;
//! - [`model`]: synthetic data generation with controlled covariance spectrum
//!   and signal;
//! - [`estimator`]: minimum-norm fits and exact/empirical risk evaluation;
//! - [`theory`]: asymptotic bias/variance limits and CLT parameters;
//! - [`tuning`]: sketching-size selection;
//! - [`experiment`]: seeded, parallel Monte-Carlo sweeps and timing runs.

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod measures;
pub mod model;
pub mod sketch;
pub mod theory;
pub mod tuning;

pub use error::{Error, Result};

/// Derives an independent child seed from a base seed and two structural
/// indices (grid position, replication, role tag, …).
///
/// SplitMix64-style finalizer: distinct `(base, a, b)` triples map to
/// well-separated seeds, so streams seeded from the results behave
/// independently while staying a pure function of the base seed.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
