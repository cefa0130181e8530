//! Asymptotic risk limits for sketched minimum-norm regression in the
//! proportional regime p/n → φ, m/n → ψ.
//!
//! The aspect ratio that matters is φψ⁻¹ = p/m: the sketched problem is
//! under-parameterized when φψ⁻¹ < 1 and over-parameterized when φψ⁻¹ > 1.
//! Limits at the interpolation threshold φψ⁻¹ = 1 diverge, so all
//! calculators reject ratios within [`THRESHOLD_GUARD`] of 1.
//!
//! Away from the isotropic case the limits are driven by negative roots of
//! two scalar self-consistent equations, solved here by bisection:
//!
//! - over-parameterized, H = limiting spectrum of Σ:
//!     1 = ∫ x / (−c₀ + x·ψφ⁻¹) dH(x),
//! - under-parameterized, B = limiting spectrum of SSᵀ:
//!     1 = ψ·∫ x / (−c̃₀ + x·φ) dB(x).
//!
//! The under-parameterized variance depends on the sketch only through B
//! (point mass at 1 for orthonormal rows, Marchenko–Pastur(ψ) for i.i.d.
//! entries) and not on Σ; the over-parameterized limit depends on Σ through H
//! and is the same for both sketch families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::SpectralMeasure;

/// Reject aspect ratios within this distance of the interpolation threshold.
pub const THRESHOLD_GUARD: f64 = 1e-6;

/// Absolute bisection tolerance for the self-consistent roots.
const ROOT_ABS_TOL: f64 = 1e-12;

/// Hard cap on bisection iterations.
const ROOT_MAX_ITERS: usize = 200;

/// How many times the initial bracket may be widened (×10 each time) before
/// root finding is declared failed.
const MAX_BRACKET_EXPANSIONS: usize = 6;

/// Sketch family, as far as the limits are concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchFamily {
    /// Orthonormal rows (Haar, or a subsampled Hadamard transform at
    /// power-of-two sizes): SSᵀ = I.
    Orthogonal,
    /// Independent N(0, 1/n) entries: SSᵀ follows a Marchenko–Pastur law.
    Iid,
}

impl SketchFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SketchFamily::Orthogonal => "orthogonal",
            SketchFamily::Iid => "iid",
        }
    }
}

/// Which side of the interpolation threshold a configuration sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// φψ⁻¹ < 1: more sketched rows than parameters.
    Under,
    /// φψ⁻¹ > 1: fewer sketched rows than parameters.
    Over,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Under => "under",
            Regime::Over => "over",
        }
    }
}

/// Classifies (φ, ψ), rejecting ratios too close to the threshold.
pub fn regime_of(phi: f64, psi: f64) -> Result<Regime> {
    check_ratios(phi, psi)?;
    let r = phi / psi;
    if (r - 1.0).abs() < THRESHOLD_GUARD {
        return Err(Error::Domain(format!(
            "aspect ratio p/m = {r} is within {THRESHOLD_GUARD} of the interpolation threshold"
        )));
    }
    Ok(if r < 1.0 { Regime::Under } else { Regime::Over })
}

fn check_ratios(phi: f64, psi: f64) -> Result<()> {
    if !phi.is_finite() || phi <= 0.0 {
        return Err(Error::Domain(format!("phi must be finite and positive, got {phi}")));
    }
    if !psi.is_finite() || psi <= 0.0 || psi > 1.0 {
        return Err(Error::Domain(format!("psi must lie in (0, 1], got {psi}")));
    }
    Ok(())
}

fn check_scale(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Domain(format!("{name} must be finite and nonnegative, got {value}")));
    }
    Ok(())
}

/// A limiting risk value split into bias and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRisk {
    pub bias: f64,
    pub variance: f64,
    pub risk: f64,
    pub regime: Regime,
    /// The self-consistent root behind the value, when one exists in closed
    /// or solved form (c₀ over the threshold, c̃₀ under it).
    pub c0: Option<f64>,
}

impl AsymptoticRisk {
    fn new(bias: f64, variance: f64, regime: Regime, c0: Option<f64>) -> Self {
        AsymptoticRisk { bias, variance, risk: bias + variance, regime, c0 }
    }
}

/// Limiting risk for isotropic Σ = I (closed forms for both families and
/// regimes). ψ = 1 with the orthogonal family is the no-sketch baseline.
pub fn isotropic_limit(
    family: SketchFamily,
    phi: f64,
    psi: f64,
    alpha: f64,
    sigma: f64,
) -> Result<AsymptoticRisk> {
    check_scale("alpha", alpha)?;
    check_scale("sigma", sigma)?;
    let regime = regime_of(phi, psi)?;
    let r = phi / psi; // p/m
    let s2 = sigma * sigma;
    match regime {
        Regime::Over => {
            // Both families share the over-parameterized limit.
            let bias = alpha * alpha * (1.0 - 1.0 / r);
            let variance = s2 / (r - 1.0);
            let c0 = 1.0 / r - 1.0; // root for H = point mass at 1
            Ok(AsymptoticRisk::new(bias, variance, regime, Some(c0)))
        }
        Regime::Under => {
            let base = s2 * r / (1.0 - r);
            match family {
                SketchFamily::Orthogonal => {
                    Ok(AsymptoticRisk::new(0.0, base, regime, Some(phi - psi)))
                }
                SketchFamily::Iid => {
                    if (phi - 1.0).abs() < THRESHOLD_GUARD {
                        return Err(Error::Domain(format!(
                            "iid-sketch limit diverges as phi approaches 1, got phi = {phi}"
                        )));
                    }
                    // φ < ψ ≤ 1 in this branch, so φ < 1.
                    let variance = s2 * phi / (1.0 - phi) + base;
                    let c0 = -psi - phi * phi + phi + psi * phi;
                    Ok(AsymptoticRisk::new(0.0, variance, regime, Some(c0)))
                }
            }
        }
    }
}

/// Limiting risk of the plain (unsketched) minimum-norm fit: the orthogonal
/// isotropic limit at ψ = 1.
pub fn full_sample_limit(phi: f64, alpha: f64, sigma: f64) -> Result<AsymptoticRisk> {
    isotropic_limit(SketchFamily::Orthogonal, phi, 1.0, alpha, sigma)
}

/// Bisection for the unique negative root of a function that is positive at
/// −∞ and negative at 0⁻, starting from bracket [−c_hi, 0) and widening it
/// ×10 up to [`MAX_BRACKET_EXPANSIONS`] times.
fn solve_negative_root(
    f: &dyn Fn(f64) -> Result<f64>,
    mut c_hi: f64,
    label: &str,
) -> Result<f64> {
    let hi = -1e-14;
    let f_hi = f(hi)?;
    if f_hi >= 0.0 {
        return Err(Error::RootSolve(format!(
            "{label}: no sign change near zero (f({hi}) = {f_hi})"
        )));
    }
    let mut f_lo = f(-c_hi)?;
    let mut used = 0;
    while f_lo <= 0.0 && used < MAX_BRACKET_EXPANSIONS {
        c_hi *= 10.0;
        f_lo = f(-c_hi)?;
        used += 1;
    }
    if f_lo <= 0.0 {
        return Err(Error::RootSolve(format!(
            "{label}: could not bracket the root below -{c_hi}"
        )));
    }
    let (mut lo, mut hi) = (-c_hi, hi);
    for _ in 0..ROOT_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        // f decreases toward 0⁻: positive means the root is to the right.
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < ROOT_ABS_TOL {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves the over-parameterized self-consistent equation
/// 1 = ∫ x/(−c₀ + x·ψφ⁻¹) dH(x) for its unique negative root.
pub fn solve_c0(h: &SpectralMeasure, phi: f64, psi: f64) -> Result<f64> {
    h.validate()?;
    if regime_of(phi, psi)? != Regime::Over {
        return Err(Error::Domain(format!(
            "c0 equation requires the over-parameterized regime, got p/m = {}",
            phi / psi
        )));
    }
    let r = psi / phi; // ψφ⁻¹ < 1
    let c_hi = 10.0 * (h.support_max() * r + 1.0);
    let f = |c: f64| -> Result<f64> { Ok(1.0 - h.integrate(|x| x / (-c + x * r))?) };
    solve_negative_root(&f, c_hi, "c0")
}

/// Solves the under-parameterized self-consistent equation
/// 1 = ψ·∫ x/(−c̃₀ + x·φ) dB(x) for its unique negative root.
pub fn solve_c0_tilde(b: &SpectralMeasure, phi: f64, psi: f64) -> Result<f64> {
    b.validate()?;
    if regime_of(phi, psi)? != Regime::Under {
        return Err(Error::Domain(format!(
            "c0-tilde equation requires the under-parameterized regime, got p/m = {}",
            phi / psi
        )));
    }
    let c_hi = 10.0 * (b.support_max() * phi + 1.0);
    let f = |c: f64| -> Result<f64> { Ok(1.0 - psi * b.integrate(|x| x / (-c + x * phi))?) };
    solve_negative_root(&f, c_hi, "c0-tilde")
}

/// The variance series coefficient J = ∫ x²·ψφ⁻¹/(c₀ − x·ψφ⁻¹)² dH(x).
fn series_j(h: &SpectralMeasure, phi: f64, psi: f64, c0: f64) -> Result<f64> {
    let r = psi / phi;
    h.integrate(|x| {
        let d = c0 - x * r;
        x * x * r / (d * d)
    })
}

/// Over-parameterized limit for spectrum H: bias −α²c₀ under the isotropic
/// signal prior, variance σ²J/(1−J). Identical for both sketch families.
pub fn over_limits(
    h: &SpectralMeasure,
    phi: f64,
    psi: f64,
    alpha: f64,
    sigma: f64,
) -> Result<AsymptoticRisk> {
    check_scale("alpha", alpha)?;
    check_scale("sigma", sigma)?;
    let c0 = solve_c0(h, phi, psi)?;
    let j = series_j(h, phi, psi, c0)?;
    if !(0.0..1.0).contains(&j) {
        return Err(Error::RootSolve(format!(
            "variance series coefficient J = {j} escaped [0, 1)"
        )));
    }
    let bias = -alpha * alpha * c0;
    let variance = sigma * sigma * j / (1.0 - j);
    Ok(AsymptoticRisk::new(bias, variance, Regime::Over, Some(c0)))
}

/// Under-parameterized limit for sketch spectrum B: bias 0, variance
/// σ²K/(1−K) with K = ψ·∫ x²φ/(c̃₀ − xφ)² dB(x). Independent of Σ.
pub fn under_variance(
    b: &SpectralMeasure,
    phi: f64,
    psi: f64,
    sigma: f64,
) -> Result<AsymptoticRisk> {
    check_scale("sigma", sigma)?;
    let c0 = solve_c0_tilde(b, phi, psi)?;
    let k = psi
        * b.integrate(|x| {
            let d = c0 - x * phi;
            x * x * phi / (d * d)
        })?;
    if !(0.0..1.0).contains(&k) {
        return Err(Error::RootSolve(format!(
            "variance series coefficient K = {k} escaped [0, 1)"
        )));
    }
    let variance = sigma * sigma * k / (1.0 - k);
    Ok(AsymptoticRisk::new(0.0, variance, Regime::Under, Some(c0)))
}

/// The over-parameterized variance inflation factor c₁ = J/(1−J).
pub fn c1(h: &SpectralMeasure, phi: f64, psi: f64) -> Result<f64> {
    let c0 = solve_c0(h, phi, psi)?;
    let j = series_j(h, phi, psi, c0)?;
    if !(0.0..1.0).contains(&j) {
        return Err(Error::RootSolve(format!(
            "variance series coefficient J = {j} escaped [0, 1)"
        )));
    }
    Ok(j / (1.0 - j))
}

/// Over-parameterized bias for a fixed (deterministic) signal whose weighted
/// spectrum of Σ along β is G:
/// ‖β‖²·(1 + c₁)·∫ c₀²x/(c₀ − x·ψφ⁻¹)² dG(x).
pub fn deterministic_bias_over(
    h: &SpectralMeasure,
    g: &SpectralMeasure,
    phi: f64,
    psi: f64,
    beta_norm_sq: f64,
) -> Result<f64> {
    check_scale("beta_norm_sq", beta_norm_sq)?;
    g.validate()?;
    let c0 = solve_c0(h, phi, psi)?;
    let inflation = 1.0 + c1(h, phi, psi)?;
    let r = psi / phi;
    let integral = g.integrate(|x| {
        let d = c0 - x * r;
        c0 * c0 * x / (d * d)
    })?;
    Ok(beta_norm_sq * inflation * integral)
}

/// Whether a spectrum is a point mass at 1 (isotropic Σ, or orthonormal
/// sketch rows).
pub fn is_isotropic(measure: &SpectralMeasure) -> bool {
    match measure {
        SpectralMeasure::Discrete { atoms } => {
            atoms.len() == 1 && (atoms[0].0 - 1.0).abs() <= 1e-12
        }
        _ => false,
    }
}

/// Limiting risk for spectrum H and the given sketch family, dispatching to
/// closed forms when H is isotropic and to the self-consistent solvers
/// otherwise. ψ = 1 means no sketching (full-sample fit) for both families.
pub fn limit_for(
    h: &SpectralMeasure,
    family: SketchFamily,
    phi: f64,
    psi: f64,
    alpha: f64,
    sigma: f64,
) -> Result<AsymptoticRisk> {
    h.validate()?;
    let regime = regime_of(phi, psi)?;
    if is_isotropic(h) {
        return isotropic_limit(family, phi, psi, alpha, sigma);
    }
    match regime {
        Regime::Over => over_limits(h, phi, psi, alpha, sigma),
        Regime::Under => match family {
            SketchFamily::Orthogonal => {
                under_variance(&SpectralMeasure::point_mass(1.0)?, phi, psi, sigma)
            }
            SketchFamily::Iid => {
                if psi >= 1.0 {
                    // A square iid sketch is not the identity, but its limit
                    // is the ψ → 1 continuity value; fall back to the closed
                    // form because the Marchenko–Pastur law needs ψ < 1.
                    isotropic_limit(SketchFamily::Iid, phi, psi, 0.0, sigma)
                } else {
                    under_variance(&SpectralMeasure::marchenko_pastur(psi)?, phi, psi, sigma)
                }
            }
        },
    }
}

/// Which risk functional a fluctuation statement is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltStatistic {
    /// Risk averaged over the isotropic signal prior.
    IntegratedRisk,
    /// Risk conditional on the realized signal.
    ConditionalRisk,
}

/// The normalization applied to risk − centering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CltScale {
    P,
    SqrtP,
}

impl CltScale {
    pub fn name(&self) -> &'static str {
        match self {
            CltScale::P => "p",
            CltScale::SqrtP => "sqrt_p",
        }
    }
}

/// Gaussian fluctuation parameters: scale·(risk − centering) ⇒ N(mean,
/// variance). Centerings use the finite-sample ratios p/m (and p for the
/// √p-scaled statistic).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub mean: f64,
    pub variance: f64,
    pub centering: f64,
    pub scale: CltScale,
}

/// Fluctuation parameters for an orthogonal sketch with isotropic Σ; ν₄ is
/// the fourth moment of the standardized design entries (3 for Gaussian).
/// The under-parameterized statement covers the integrated risk only.
pub fn clt_params(
    stat: CltStatistic,
    alpha: f64,
    sigma: f64,
    nu4: f64,
    p: usize,
    m: usize,
) -> Result<CltParams> {
    check_scale("alpha", alpha)?;
    check_scale("sigma", sigma)?;
    if !nu4.is_finite() || nu4 < 1.0 {
        return Err(Error::Domain(format!(
            "fourth moment must be finite and at least 1, got {nu4}"
        )));
    }
    if p < 1 || m < 1 {
        return Err(Error::Domain(format!("p and m must be positive, got p = {p}, m = {m}")));
    }
    let r = p as f64 / m as f64;
    if (r - 1.0).abs() < THRESHOLD_GUARD {
        return Err(Error::Domain(format!(
            "aspect ratio p/m = {r} is within {THRESHOLD_GUARD} of the interpolation threshold"
        )));
    }
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let excess = nu4 - 3.0;
    if r < 1.0 {
        // Under-parameterized: only the integrated risk has a statement here.
        if stat != CltStatistic::IntegratedRisk {
            return Err(Error::Domain(
                "conditional-risk fluctuations are only available over-parameterized".into(),
            ));
        }
        let mean = s2 * r * r / ((r - 1.0) * (r - 1.0)) + s2 * r * r * excess / (1.0 - r);
        let variance = 2.0 * s4 * r.powi(3) / (r - 1.0).powi(4)
            + s4 * r.powi(3) * excess / ((1.0 - r) * (1.0 - r));
        let centering = s2 * r / (1.0 - r);
        return Ok(CltParams { mean, variance, centering, scale: CltScale::P });
    }
    // Over-parameterized moments of the p-scaled integrated risk.
    let mean_over = s2 * r / ((r - 1.0) * (r - 1.0)) + s2 * excess / (r - 1.0);
    let var_over = 2.0 * s4 * r.powi(3) / (r - 1.0).powi(4)
        + s4 * r * excess / ((r - 1.0) * (r - 1.0));
    let centering =
        alpha * alpha * (1.0 - 1.0 / r) + s2 / (r - 1.0);
    match stat {
        CltStatistic::IntegratedRisk => Ok(CltParams {
            mean: mean_over,
            variance: var_over,
            centering,
            scale: CltScale::P,
        }),
        CltStatistic::ConditionalRisk => {
            // √p scaling: the prior fluctuation of the bias dominates.
            let pf = p as f64;
            let a4 = alpha * alpha * alpha * alpha;
            let mean = mean_over / pf.sqrt();
            let variance = 2.0 * (1.0 - 1.0 / r) * a4 + var_over / pf;
            Ok(CltParams { mean, variance, centering, scale: CltScale::SqrtP })
        }
    }
}

/// Limiting variance of the p-scaled risk fluctuation at the optimal sketch
/// size: positive when a nontrivial sketch is optimal, zero when the null
/// estimator is, and the full-sample value otherwise (infinite at φ = 1).
pub fn optimal_clt_variance(alpha: f64, sigma: f64, phi: f64, nu4: f64) -> f64 {
    assert!(alpha.is_finite() && alpha > 0.0, "alpha must be positive");
    assert!(sigma.is_finite() && sigma > 0.0, "sigma must be positive");
    assert!(phi.is_finite() && phi > 0.0, "phi must be positive");
    assert!(nu4.is_finite() && nu4 >= 1.0, "nu4 must be at least 1");
    let snr = alpha / sigma;
    let excess = nu4 - 3.0;
    if snr > 1.0 && phi > 1.0 - sigma / (2.0 * alpha) && phi <= alpha / (alpha - sigma) {
        return 2.0 * alpha.powi(3) * (alpha - sigma) + sigma * sigma * excess * alpha * (alpha - sigma);
    }
    if snr <= 1.0 && phi > alpha * alpha / (alpha * alpha + sigma * sigma) {
        return 0.0;
    }
    // Full sample is optimal.
    let s4 = sigma.powi(4);
    if phi < 1.0 {
        2.0 * s4 * phi.powi(3) / (phi - 1.0).powi(4)
            + s4 * phi.powi(3) * excess / ((1.0 - phi) * (1.0 - phi))
    } else if phi > 1.0 {
        2.0 * s4 * phi.powi(5) / (phi - 1.0).powi(4)
            + s4 * phi.powi(3) * excess / ((phi - 1.0) * (phi - 1.0))
    } else {
        f64::INFINITY
    }
}

/// CSV schema for theory curves.
pub const THEORY_CSV_HEADER: &str = "phi,psi,kind,regime,bias,variance,risk,c0";

/// One theory-curve row; `c0` is blank when no root backs the value.
pub fn theory_csv_row(phi: f64, psi: f64, family: SketchFamily, r: &AsymptoticRisk) -> String {
    let c0 = r.c0.map(|c| format!("{c}")).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{}",
        phi,
        psi,
        family.name(),
        r.regime.name(),
        r.bias,
        r.variance,
        r.risk,
        c0
    )
}
