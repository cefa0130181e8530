//! Choosing the sketch size m: closed-form optima for isotropic features,
//! grid minimization of theory curves for general spectra, and selection on a
//! validation set.
//!
//! All grid-based routines share one convention: candidate sizes are
//! m_i = ⌊ψ_i·n⌋ for ψ_i on the δ-grid {δ, 2δ, …} ∪ {1}, the point ψ = 1
//! means no sketching (plain minimum-norm fit), and ties are broken toward
//! the larger m.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{empirical_risk, label_risk, minnorm_fit, sketched_fit};
use crate::measures::SpectralMeasure;
use crate::model::Dataset;
use crate::sketch::{SketchKind, SketchOperator, SketchSpec};
use crate::theory::{full_sample_limit, limit_for, SketchFamily};
use crate::derive_seed;

/// Why a particular m was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeCase {
    /// Closed form: a strict sketch 0 < m* < n is optimal.
    NontrivialSketch,
    /// Closed form: the null estimator (m* = 0) is optimal.
    NullEstimator,
    /// Closed form: no sketching (m* = n) is optimal.
    NoSketch,
    /// Minimizer of a theory curve over the ψ-grid.
    GridMin,
    /// Minimizer of validation risk over the ψ-grid.
    ValidationMin,
}

impl SizeCase {
    pub fn name(&self) -> &'static str {
        match self {
            SizeCase::NontrivialSketch => "nontrivial_sketch",
            SizeCase::NullEstimator => "null_estimator",
            SizeCase::NoSketch => "no_sketch",
            SizeCase::GridMin => "grid_min",
            SizeCase::ValidationMin => "validation_min",
        }
    }
}

/// One evaluated candidate size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub m: usize,
    pub psi: f64,
    pub risk: f64,
}

/// A selected sketch size with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalSize {
    pub m_star: usize,
    pub case: SizeCase,
    /// The risk value (limit or estimate) attained at `m_star`.
    pub attained_risk: f64,
    /// Label for the selection mode column of the trace CSV.
    pub mode: String,
    /// Evaluated candidates, when a grid search happened.
    pub grid: Option<Vec<GridPoint>>,
    /// Sample size the candidates were derived from.
    pub n: usize,
}

/// CSV schema for selection traces.
pub const TRACE_CSV_HEADER: &str = "m,psi,risk_estimate,mode,selected";

impl OptimalSize {
    pub fn psi_star(&self) -> f64 {
        self.m_star as f64 / self.n as f64
    }

    /// Grid rows (selected = 0) followed by one final row with selected = 1.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        if let Some(grid) = &self.grid {
            for point in grid {
                out.push_str(&format!(
                    "{},{},{},{},0\n",
                    point.m, point.psi, point.risk, self.mode
                ));
            }
        }
        out.push_str(&format!(
            "{},{},{},{},1\n",
            self.m_star,
            self.psi_star(),
            self.attained_risk,
            self.mode
        ));
        out
    }
}

/// The ψ-grid {δ, 2δ, …} ∪ {1} used by every grid-based selector.
pub fn psi_grid(delta: f64) -> Result<Vec<f64>> {
    if !delta.is_finite() || delta <= 0.0 || delta > 0.5 {
        return Err(Error::Domain(format!("grid step must lie in (0, 0.5], got {delta}")));
    }
    let mut grid = Vec::new();
    let mut i = 1usize;
    loop {
        let psi = i as f64 * delta;
        if psi >= 1.0 - 1e-9 {
            break;
        }
        grid.push(psi);
        i += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

/// Candidate size for a grid ratio: ⌊ψ·n⌋, nudged so ratios that are exact in
/// rationals but land a hair below an integer in floating point still round
/// to it.
pub fn m_of_psi(psi: f64, n: usize) -> usize {
    ((psi * n as f64) + 1e-9).floor() as usize
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::Domain(format!("{name} must be finite and positive, got {value}")));
    }
    Ok(())
}

/// Closed-form optimal size for isotropic features and orthogonal sketching:
///
/// - SNR = α/σ > 1 and φ ∈ (1 − σ/(2α), α/(α−σ)]: m* = ⌊((α−σ)/α)·φ·n⌋ with
///   limiting risk σ(2α − σ);
/// - SNR ≤ 1 and φ > α²/(α² + σ²): m* = 0 (null estimator) with risk α²;
/// - otherwise no sketching helps: m* = n with the full-sample limiting risk.
pub fn optimal_m_closed(alpha: f64, sigma: f64, phi: f64, n: usize) -> Result<OptimalSize> {
    check_positive("alpha", alpha)?;
    check_positive("sigma", sigma)?;
    check_positive("phi", phi)?;
    if n < 1 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let snr = alpha / sigma;
    if snr > 1.0 && phi > 1.0 - sigma / (2.0 * alpha) && phi <= alpha / (alpha - sigma) {
        let m_star = (((alpha - sigma) / alpha) * phi * n as f64 + 1e-9).floor() as usize;
        return Ok(OptimalSize {
            m_star,
            case: SizeCase::NontrivialSketch,
            attained_risk: sigma * (2.0 * alpha - sigma),
            mode: "closed".into(),
            grid: None,
            n,
        });
    }
    if snr <= 1.0 && phi > alpha * alpha / (alpha * alpha + sigma * sigma) {
        return Ok(OptimalSize {
            m_star: 0,
            case: SizeCase::NullEstimator,
            attained_risk: alpha * alpha,
            mode: "closed".into(),
            grid: None,
        n,
        });
    }
    let full = full_sample_limit(phi, alpha, sigma)?;
    Ok(OptimalSize {
        m_star: n,
        case: SizeCase::NoSketch,
        attained_risk: full.risk,
        mode: "closed".into(),
        grid: None,
        n,
    })
}

/// Grid minimizer of the limiting risk curve ψ ↦ risk(φ, ψ) for spectrum H
/// and the given sketch family. Grid points where no finite limit exists
/// (interpolation threshold, divergences) are skipped; ties go to larger m.
pub fn optimal_m_grid(
    h: &SpectralMeasure,
    family: SketchFamily,
    alpha: f64,
    sigma: f64,
    phi: f64,
    n: usize,
    delta: f64,
) -> Result<OptimalSize> {
    check_positive("alpha", alpha)?;
    check_positive("sigma", sigma)?;
    check_positive("phi", phi)?;
    if n < 1 {
        return Err(Error::Domain("n must be positive".into()));
    }
    h.validate()?;
    let mut grid = Vec::new();
    let mut best: Option<GridPoint> = None;
    for psi in psi_grid(delta)? {
        let m = m_of_psi(psi, n);
        if m < 1 {
            continue;
        }
        // ψ = 1 means no sketching: the full-sample limit regardless of
        // family.
        let value = if (psi - 1.0).abs() <= 1e-12 {
            limit_for(h, SketchFamily::Orthogonal, phi, 1.0, alpha, sigma)
        } else {
            limit_for(h, family, phi, psi, alpha, sigma)
        };
        let Ok(limit) = value else { continue };
        let point = GridPoint { m, psi, risk: limit.risk };
        grid.push(point);
        best = match best {
            Some(current) if point.risk > current.risk => Some(current),
            _ => Some(point),
        };
    }
    let Some(best) = best else {
        return Err(Error::Domain(
            "no feasible grid points: every candidate ψ sits at a divergence".into(),
        ));
    };
    Ok(OptimalSize {
        m_star: best.m,
        case: SizeCase::GridMin,
        attained_risk: best.risk,
        mode: "grid".into(),
        grid: Some(grid),
        n,
    })
}

/// What the validation criterion compares against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Mean squared gap to the true signal's predictions (needs β; the
    /// simulation-study criterion).
    OracleBeta,
    /// Mean squared residual against observed validation labels.
    Labels,
}

/// Selects m by refitting on the training set for every candidate and
/// scoring on the validation set. Sketches are drawn once per candidate from
/// seeds derived from (seed, m); ψ = 1 uses the plain fit; ties go to larger
/// m.
pub fn select_m_validation(
    train: &Dataset,
    val: &Dataset,
    mode: ValidationMode,
    kind: SketchKind,
    delta: f64,
    seed: u64,
) -> Result<OptimalSize> {
    if train.x.ncols() != val.x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "train has p = {}, validation has p = {}",
            train.x.ncols(),
            val.x.ncols()
        )));
    }
    let n = train.x.nrows();
    let mut grid = Vec::new();
    let mut best: Option<GridPoint> = None;
    for psi in psi_grid(delta)? {
        let m = m_of_psi(psi, n);
        if m < 1 {
            continue;
        }
        let beta_hat = if m == n {
            minnorm_fit(&train.x, &train.y)
        } else {
            let spec = SketchSpec { kind, m, n, seed: derive_seed(seed, m as u64, 0) };
            let sketch = SketchOperator::from_spec(&spec)?;
            sketched_fit(&train.x, &train.y, &sketch)?
        };
        let risk = match mode {
            ValidationMode::OracleBeta => empirical_risk(&beta_hat, &val.beta, &val.x),
            ValidationMode::Labels => label_risk(&beta_hat, &val.x, &val.y),
        };
        let point = GridPoint { m, psi, risk };
        grid.push(point);
        best = match best {
            Some(current) if point.risk > current.risk => Some(current),
            _ => Some(point),
        };
    }
    let Some(best) = best else {
        return Err(Error::Domain("validation grid produced no candidates".into()));
    };
    let mode_label = match mode {
        ValidationMode::OracleBeta => "validation_oracle",
        ValidationMode::Labels => "validation_labels",
    };
    Ok(OptimalSize {
        m_star: best.m,
        case: SizeCase::ValidationMin,
        attained_risk: best.risk,
        mode: mode_label.into(),
        grid: Some(grid),
        n,
    })
}
