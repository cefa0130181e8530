//! Gaussian linear-model data generation with diagonal covariance built from
//! a discrete spectral distribution.
//!
//! A dataset is a pure function of its configuration: rows of X are
//! independent N(0, Σ) vectors with Σ = diag(λ₁ ≥ … ≥ λ_p) realized by
//! rounding the spectral weights to eigenvalue multiplicities, the signal β is
//! either drawn isotropically with E‖β‖² = α² or supplied verbatim, and
//! Y = Xβ + E with i.i.d. N(0, σ²) noise. The three random pieces (X, β, E)
//! come from separate RNG sub-streams of one seed so each can be refreshed
//! independently.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::SpectralMeasure;

/// How the covariance eigenvalues are specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    /// A discrete spectral distribution; eigenvalue multiplicities are the
    /// weights rounded to sum to p by largest remainder.
    Spectrum(SpectralMeasure),
    /// Explicit eigenvalues, used in the given order (must have length p).
    Eigenvalues(Vec<f64>),
}

/// How the signal vector is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaMode {
    /// β ∼ N(0, (α²/p)·I), so E‖β‖² = α².
    RandomIsotropic { alpha: f64 },
    /// A fixed vector, used verbatim (must have length p).
    Deterministic { vector: Vec<f64> },
}

/// Full description of a synthetic regression problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n: usize,
    pub p: usize,
    pub sigma: SigmaSpec,
    pub beta: BetaMode,
    /// Noise standard deviation σ ≥ 0.
    pub sigma_noise: f64,
    pub seed: u64,
}

/// A realized dataset together with the quantities needed for exact risk
/// evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// n×p design matrix.
    pub x: DMatrix<f64>,
    /// n response values, Y = Xβ + E.
    pub y: DVector<f64>,
    /// The signal used to generate Y.
    pub beta: DVector<f64>,
    /// Diagonal of Σ in the order matching the columns of X.
    pub sigma_eigs: DVector<f64>,
    /// The realized noise E.
    pub noise: DVector<f64>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.p < 1 {
            return Err(Error::InvalidModel(format!(
                "n and p must be positive, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if !self.sigma_noise.is_finite() || self.sigma_noise < 0.0 {
            return Err(Error::InvalidModel(format!(
                "noise standard deviation must be finite and nonnegative, got {}",
                self.sigma_noise
            )));
        }
        match &self.beta {
            BetaMode::RandomIsotropic { alpha } => {
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "signal scale alpha must be finite and nonnegative, got {alpha}"
                    )));
                }
            }
            BetaMode::Deterministic { vector } => {
                if vector.len() != self.p {
                    return Err(Error::InvalidModel(format!(
                        "deterministic beta has length {}, expected p = {}",
                        vector.len(),
                        self.p
                    )));
                }
                if vector.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("deterministic beta has non-finite entries".into()));
                }
            }
        }
        covariance_eigs(&self.sigma, self.p).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("model config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

/// Eigenvalues of Σ (descending for the spectrum form, verbatim for explicit
/// lists). Multiplicities are wᵢ·p rounded by largest remainder, with ties
/// broken toward the larger eigenvalue.
pub fn covariance_eigs(spec: &SigmaSpec, p: usize) -> Result<DVector<f64>> {
    if p < 1 {
        return Err(Error::InvalidModel("p must be positive".into()));
    }
    match spec {
        SigmaSpec::Eigenvalues(values) => {
            if values.len() != p {
                return Err(Error::InvalidModel(format!(
                    "explicit eigenvalue list has length {}, expected p = {}",
                    values.len(),
                    p
                )));
            }
            if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidModel("eigenvalues must be finite and positive".into()));
            }
            Ok(DVector::from_vec(values.clone()))
        }
        SigmaSpec::Spectrum(measure) => {
            measure.validate()?;
            let SpectralMeasure::Discrete { atoms } = measure else {
                return Err(Error::InvalidModel(
                    "covariance construction requires a discrete spectral distribution".into(),
                ));
            };
            // Largest-remainder rounding of quotas wᵢ·p.
            let mut counts: Vec<usize> = Vec::with_capacity(atoms.len());
            let mut remainders: Vec<(f64, f64, usize)> = Vec::with_capacity(atoms.len());
            let mut assigned = 0usize;
            for (idx, (loc, w)) in atoms.iter().enumerate() {
                let quota = w * p as f64;
                let floor = quota.floor() as usize;
                counts.push(floor);
                assigned += floor;
                remainders.push((quota - floor as f64, *loc, idx));
            }
            let mut leftover = p - assigned.min(p);
            // Largest fractional remainder first; ties toward the larger
            // eigenvalue.
            remainders.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
            });
            let mut cursor = 0;
            while leftover > 0 {
                let idx = remainders[cursor % remainders.len()].2;
                counts[idx] += 1;
                leftover -= 1;
                cursor += 1;
            }
            // Emit descending: atoms are stored ascending, so walk backwards.
            let mut eigs = Vec::with_capacity(p);
            for (i, (loc, _)) in atoms.iter().enumerate().rev() {
                for _ in 0..counts[i] {
                    eigs.push(*loc);
                }
            }
            debug_assert_eq!(eigs.len(), p);
            Ok(DVector::from_vec(eigs))
        }
    }
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws β for the given mode from sub-stream 1 of `seed`. Deterministic
/// vectors are returned verbatim (validated against p).
pub fn sample_beta(mode: &BetaMode, p: usize, seed: u64) -> Result<DVector<f64>> {
    match mode {
        BetaMode::RandomIsotropic { alpha } => {
            if !alpha.is_finite() || *alpha < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "signal scale alpha must be finite and nonnegative, got {alpha}"
                )));
            }
            let mut rng = sub_rng(seed, 1);
            let scale = alpha / (p as f64).sqrt();
            Ok(DVector::from_iterator(
                p,
                (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
            ))
        }
        BetaMode::Deterministic { vector } => {
            if vector.len() != p {
                return Err(Error::InvalidModel(format!(
                    "deterministic beta has length {}, expected p = {}",
                    vector.len(),
                    p
                )));
            }
            Ok(DVector::from_vec(vector.clone()))
        }
    }
}

/// Draws an n×p design with rows N(0, Σ) from sub-stream 0 of `seed`:
/// X = Z·Σ^{1/2} with Z standard Gaussian (column-major fill) and Σ diagonal.
pub fn sample_design(n: usize, sigma_eigs: &DVector<f64>, seed: u64) -> DMatrix<f64> {
    let p = sigma_eigs.len();
    let mut rng = sub_rng(seed, 0);
    let mut x = DMatrix::from_iterator(
        n,
        p,
        (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    for j in 0..p {
        let scale = sigma_eigs[j].sqrt();
        x.column_mut(j).scale_mut(scale);
    }
    x
}

/// Draws the noise vector E ∼ N(0, σ²·I_n) from sub-stream 2 of `seed`.
pub fn sample_noise(n: usize, sigma_noise: f64, seed: u64) -> DVector<f64> {
    let mut rng = sub_rng(seed, 2);
    DVector::from_iterator(
        n,
        (0..n).map(|_| sigma_noise * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Generates the full dataset for `config`: X from stream 0, β from stream 1,
/// E from stream 2, Y = Xβ + E.
pub fn sample_dataset(config: &ModelConfig) -> Result<Dataset> {
    config.validate()?;
    let sigma_eigs = covariance_eigs(&config.sigma, config.p)?;
    let x = sample_design(config.n, &sigma_eigs, config.seed);
    let beta = sample_beta(&config.beta, config.p, config.seed)?;
    let noise = sample_noise(config.n, config.sigma_noise, config.seed);
    let y = &x * &beta + &noise;
    Ok(Dataset { x, y, beta, sigma_eigs, noise })
}

/// The weighted spectral distribution of Σ along β: atoms at each eigenvalue
/// λᵢ with weight βᵢ²/‖β‖². Zero-weight coordinates are dropped.
pub fn vesd(beta: &DVector<f64>, sigma_eigs: &DVector<f64>) -> Result<SpectralMeasure> {
    if beta.len() != sigma_eigs.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, eigenvalues have length {}",
            beta.len(),
            sigma_eigs.len()
        )));
    }
    let norm_sq = beta.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::InvalidModel("cannot form weighted spectrum of a zero signal".into()));
    }
    let atoms: Vec<(f64, f64)> = beta
        .iter()
        .zip(sigma_eigs.iter())
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, l)| (*l, b * b / norm_sq))
        .collect();
    SpectralMeasure::discrete(&atoms)
}

/// The empirical spectral distribution of Σ: each eigenvalue with weight 1/p.
pub fn esd(sigma_eigs: &DVector<f64>) -> Result<SpectralMeasure> {
    let p = sigma_eigs.len();
    if p == 0 {
        return Err(Error::InvalidModel("empty eigenvalue list".into()));
    }
    let w = 1.0 / p as f64;
    let atoms: Vec<(f64, f64)> = sigma_eigs.iter().map(|l| (*l, w)).collect();
    SpectralMeasure::discrete(&atoms)
}
