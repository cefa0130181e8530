//! Minimum-norm least-squares fitting, with and without sketching, and exact
//! finite-sample risk formulas for the sketched estimator.
//!
//! The fit is β̂ = X⁺Y computed through a thin SVD with singular values below
//! max(n, p)·ε·σ_max treated as zero; the sketched fit applies the same rule
//! to (S·X, S·Y), which equals the minimum-norm solution of the sketched
//! normal equations because (XᵀSᵀSX)⁺XᵀSᵀ = (SX)⁺S.
//!
//! For a fixed design X and sketch S the exact out-of-sample risk of the
//! sketched estimator splits into a bias term driven by the projector
//! P = (SX)⁺(SX) onto the row space of SX and a variance term driven by the
//! pseudoinverse itself:
//!
//! - conditional-on-β bias: ‖Σ^{1/2}(P − I)β‖²,
//! - isotropic-prior bias: (α²/p)·tr[(I − P)Σ],
//! - variance: σ²·tr[(SX)⁺(SSᵀ)((SX)⁺)ᵀΣ], which reduces to
//!   σ²·tr[(XᵀSᵀSX)⁺Σ] when the sketch rows are orthonormal.
//!
//! The orthonormal reduction is applied automatically whenever
//! ‖SSᵀ − I‖_max < 1e-8.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{SketchOperator, ORTHOGONALITY_TOL};

/// Relative cutoff for treating singular values as zero:
/// tol = max(rows, cols) · machine-ε · σ_max.
pub fn pinv_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Thin-SVD pseudoinverse of a matrix, retaining the factors so it can be
/// applied without materializing A⁺.
#[derive(Clone, Debug)]
pub struct PseudoInverse {
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    tol: f64,
    rank: usize,
    rows: usize,
    cols: usize,
}

impl PseudoInverse {
    /// Factorizes `a`; `tol_override` replaces the default cutoff when given.
    pub fn new(a: &DMatrix<f64>, tol_override: Option<f64>) -> Self {
        let (rows, cols) = a.shape();
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("SVD with u requested");
        let v_t = svd.v_t.expect("SVD with v_t requested");
        let singular = svd.singular_values;
        let sigma_max = singular.iter().fold(0.0_f64, |acc, s| acc.max(*s));
        let tol = tol_override.unwrap_or_else(|| pinv_tolerance(rows, cols, sigma_max));
        let rank = singular.iter().filter(|s| **s > tol).count();
        PseudoInverse { u, singular, v_t, tol, rank, rows, cols }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Retained singular values (descending).
    pub fn kept_singular(&self) -> impl Iterator<Item = f64> + '_ {
        self.singular.iter().copied().take(self.rank)
    }

    /// Right singular vector for retained index j (length = cols of A).
    pub fn v_col(&self, j: usize) -> DVector<f64> {
        self.v_t.row(j).transpose()
    }

    /// A⁺·b without forming A⁺.
    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.rows, "pseudoinverse input length mismatch");
        let mut c = self.u.tr_mul(b);
        for j in 0..c.len() {
            if j < self.rank {
                c[j] /= self.singular[j];
            } else {
                c[j] = 0.0;
            }
        }
        self.v_t.tr_mul(&c)
    }

    /// Materializes A⁺ (cols × rows).
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut v = self.v_t.transpose();
        for j in 0..v.ncols() {
            let scale = if j < self.rank { 1.0 / self.singular[j] } else { 0.0 };
            v.column_mut(j).scale_mut(scale);
        }
        v * self.u.transpose()
    }

    /// The projector P = A⁺A onto the row space of A (cols × cols).
    pub fn row_space_projector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.cols, self.cols);
        for j in 0..self.rank {
            let v = self.v_col(j);
            p.ger(1.0, &v, &v, 1.0);
        }
        p
    }

    /// P·b for the row-space projector without materializing P.
    pub fn project_row_space(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.cols, "projector input length mismatch");
        let mut out = DVector::zeros(self.cols);
        for j in 0..self.rank {
            let v = self.v_col(j);
            out.axpy(v.dot(b), &v, 1.0);
        }
        out
    }
}

/// Minimum-norm least-squares fit β̂ = X⁺Y.
pub fn minnorm_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    minnorm_fit_with_tol(x, y, None)
}

/// Minimum-norm fit with an explicit rank cutoff in place of the default.
pub fn minnorm_fit_with_tol(x: &DMatrix<f64>, y: &DVector<f64>, tol: Option<f64>) -> DVector<f64> {
    assert_eq!(x.nrows(), y.len(), "design and response row counts differ");
    PseudoInverse::new(x, tol).apply(y)
}

/// Sketched minimum-norm fit β̂ = (SX)⁺(SY).
pub fn sketched_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    s: &SketchOperator,
) -> Result<DVector<f64>> {
    let (sx, sy) = s.apply(x, y)?;
    Ok(minnorm_fit(&sx, &sy))
}

fn check_sigma(x: &DMatrix<f64>, sigma_eigs: &DVector<f64>) -> Result<()> {
    if sigma_eigs.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "covariance diagonal has length {}, expected p = {}",
            sigma_eigs.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Σ-weighted quadratic form vᵀΣv for diagonal Σ.
fn sigma_quadratic(v: &DVector<f64>, sigma_eigs: &DVector<f64>) -> f64 {
    v.iter().zip(sigma_eigs.iter()).map(|(vi, li)| li * vi * vi).sum()
}

/// Exact bias for a fixed signal: ‖Σ^{1/2}(P − I)β‖² with P the projector
/// onto the row space of SX.
pub fn exact_conditional_bias(
    beta: &DVector<f64>,
    s: &SketchOperator,
    x: &DMatrix<f64>,
    sigma_eigs: &DVector<f64>,
) -> Result<f64> {
    check_sigma(x, sigma_eigs)?;
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, expected p = {}",
            beta.len(),
            x.ncols()
        )));
    }
    let sx = s.apply_matrix(x)?;
    let pinv = PseudoInverse::new(&sx, None);
    let diff = pinv.project_row_space(beta) - beta;
    Ok(sigma_quadratic(&diff, sigma_eigs))
}

/// Exact bias averaged over an isotropic signal prior with E‖β‖² = α²:
/// (α²/p)·tr[(I − P)Σ].
pub fn exact_integrated_bias(
    s: &SketchOperator,
    x: &DMatrix<f64>,
    sigma_eigs: &DVector<f64>,
    alpha: f64,
) -> Result<f64> {
    check_sigma(x, sigma_eigs)?;
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Domain(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    let sx = s.apply_matrix(x)?;
    let pinv = PseudoInverse::new(&sx, None);
    let trace_sigma: f64 = sigma_eigs.iter().sum();
    let mut projected = 0.0;
    for j in 0..pinv.rank() {
        projected += sigma_quadratic(&pinv.v_col(j), sigma_eigs);
    }
    let p = x.ncols() as f64;
    // tr[(I − P)Σ] is a trace of a positive semidefinite product; clamp tiny
    // negative rounding residue.
    Ok((alpha * alpha / p) * (trace_sigma - projected).max(0.0))
}

/// Exact noise variance σ²·tr[(SX)⁺(SSᵀ)((SX)⁺)ᵀΣ]. When the sketch rows are
/// orthonormal (‖SSᵀ − I‖_max < 1e-8) this reduces to σ²·tr[(XᵀSᵀSX)⁺Σ] and
/// the Gram factor is skipped.
pub fn exact_variance(
    s: &SketchOperator,
    x: &DMatrix<f64>,
    sigma_eigs: &DVector<f64>,
    sigma_noise: f64,
) -> Result<f64> {
    check_sigma(x, sigma_eigs)?;
    if !sigma_noise.is_finite() || sigma_noise < 0.0 {
        return Err(Error::Domain(format!(
            "noise standard deviation must be finite and nonnegative, got {sigma_noise}"
        )));
    }
    let sx = s.apply_matrix(x)?;
    let pinv = PseudoInverse::new(&sx, None);
    let gram = s.gram();
    let mut dev: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    let value = if dev < ORTHOGONALITY_TOL {
        variance_orthonormal(&pinv, sigma_eigs)
    } else {
        variance_general(&pinv, &gram, sigma_eigs)
    };
    Ok(sigma_noise * sigma_noise * value)
}

/// tr[(XᵀSᵀSX)⁺Σ] = Σ_j σ_j⁻²·v_jᵀΣv_j over retained singular triplets.
fn variance_orthonormal(pinv: &PseudoInverse, sigma_eigs: &DVector<f64>) -> f64 {
    pinv.kept_singular()
        .enumerate()
        .map(|(j, d)| sigma_quadratic(&pinv.v_col(j), sigma_eigs) / (d * d))
        .sum()
}

/// tr[A⁺ G (A⁺)ᵀ Σ] with A = SX and G = SSᵀ, for general (non-orthonormal)
/// sketches.
fn variance_general(pinv: &PseudoInverse, gram: &DMatrix<f64>, sigma_eigs: &DVector<f64>) -> f64 {
    let w = pinv.matrix();
    let wg = &w * gram;
    let mut total = 0.0;
    for i in 0..w.nrows() {
        total += sigma_eigs[i] * wg.row(i).dot(&w.row(i));
    }
    total
}

/// Mean squared prediction gap (1/rows)·‖X_eval(β̂ − β)‖² on fresh points.
pub fn empirical_risk(beta_hat: &DVector<f64>, beta: &DVector<f64>, x_eval: &DMatrix<f64>) -> f64 {
    assert_eq!(beta_hat.len(), beta.len(), "coefficient lengths differ");
    assert_eq!(x_eval.ncols(), beta.len(), "evaluation design width mismatch");
    let diff = beta_hat - beta;
    (x_eval * diff).norm_squared() / x_eval.nrows() as f64
}

/// Mean squared residual (1/rows)·‖Y_eval − X_eval·β̂‖² against observed
/// labels.
pub fn label_risk(beta_hat: &DVector<f64>, x_eval: &DMatrix<f64>, y_eval: &DVector<f64>) -> f64 {
    assert_eq!(x_eval.ncols(), beta_hat.len(), "evaluation design width mismatch");
    assert_eq!(x_eval.nrows(), y_eval.len(), "evaluation rows mismatch");
    let residual = y_eval - x_eval * beta_hat;
    residual.norm_squared() / x_eval.nrows() as f64
}

/// Whether a risk value conditions on the realized signal or averages over
/// the isotropic prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    ConditionalOnBeta,
    BetaIntegrated,
}

impl RiskKind {
    pub fn name(&self) -> &'static str {
        match self {
            RiskKind::ConditionalOnBeta => "conditional_on_beta",
            RiskKind::BetaIntegrated => "beta_integrated",
        }
    }
}

/// How a risk value was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskOrigin {
    ExactFormula,
    MonteCarlo,
    AsymptoticLimit,
}

impl RiskOrigin {
    pub fn name(&self) -> &'static str {
        match self {
            RiskOrigin::ExactFormula => "exact_formula",
            RiskOrigin::MonteCarlo => "monte_carlo",
            RiskOrigin::AsymptoticLimit => "asymptotic_limit",
        }
    }
}

/// One evaluated risk value with its provenance; serializes to a fixed CSV
/// schema shared by all experiment outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub kind: RiskKind,
    pub origin: RiskOrigin,
    /// Bias component when the origin separates it (exact formulas, limits).
    pub bias: Option<f64>,
    /// Variance component when the origin separates it.
    pub variance: Option<f64>,
    pub risk: f64,
    /// Monte-Carlo standard error of `risk`, when applicable.
    pub se: Option<f64>,
    /// Number of Monte-Carlo replications behind `risk` (0 for formulas).
    pub reps: usize,
    pub seed: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl RiskReport {
    pub const CSV_HEADER: &'static str =
        "n,p,m,phi,psi,kind,origin,bias,variance,risk,reps,seed,se";

    pub fn phi(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn psi(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.p,
            self.m,
            self.phi(),
            self.psi(),
            self.kind.name(),
            self.origin.name(),
            fmt_opt(self.bias),
            fmt_opt(self.variance),
            self.risk,
            self.reps,
            self.seed,
            fmt_opt(self.se),
        )
    }

    /// For exact formulas the decomposition risk = bias + variance must hold
    /// to rounding.
    pub fn validate(&self) -> Result<()> {
        if !self.risk.is_finite() {
            return Err(Error::NonFinite("risk is not finite".into()));
        }
        if self.origin == RiskOrigin::ExactFormula {
            let (Some(b), Some(v)) = (self.bias, self.variance) else {
                return Err(Error::Config(
                    "exact-formula reports must carry bias and variance".into(),
                ));
            };
            let sum = b + v;
            let scale = self.risk.abs().max(sum.abs()).max(1.0);
            if (sum - self.risk).abs() > 1e-9 * scale {
                return Err(Error::Config(format!(
                    "risk {} does not equal bias {} + variance {}",
                    self.risk, b, v
                )));
            }
        }
        Ok(())
    }
}
