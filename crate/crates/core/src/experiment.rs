//! Seeded Monte-Carlo experiment harness: risk sweeps over the sketch-size
//! grid, figure-scale reproduction protocols, fluctuation replications, and
//! wall-clock benchmarks.
//!
//! Reproducibility contract: every random object is a pure function of the
//! base seed and its structural indices via [`crate::derive_seed`], all
//! parallel reductions collect into index order before summing, and sums use
//! pairwise reduction — so outputs are byte-identical across runs and worker
//! counts.
//!
//! Sweep protocol: the design X and the sketching matrices are generated once
//! and held fixed across replications; each replication draws a fresh signal
//! and fresh noise, refits, and evaluates the empirical risk on a fresh test
//! design.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::estimator::{
    empirical_risk, exact_integrated_bias, exact_variance, PseudoInverse, RiskKind, RiskOrigin,
    RiskReport,
};
use crate::measures::SpectralMeasure;
use crate::model::{
    covariance_eigs, esd, sample_beta, sample_design, sample_noise, vesd, BetaMode, ModelConfig,
    SigmaSpec,
};
use crate::sketch::{SketchKind, SketchOperator, SketchSpec};
use crate::theory::{
    deterministic_bias_over, full_sample_limit, limit_for, theory_csv_row, AsymptoticRisk, Regime,
    SketchFamily, THEORY_CSV_HEADER,
};
use crate::tuning::{m_of_psi, optimal_m_closed, optimal_m_grid, psi_grid};

/// Experiment scale: `Desk` finishes on a laptop, `Full` matches the 500-
/// replication protocol of the original studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    pub fn replications(&self) -> usize {
        match self {
            Scale::Desk => 100,
            Scale::Full => 500,
        }
    }

    /// Number of points on the geometric φ-grids of the aspect-ratio figures.
    fn phi_points(&self) -> usize {
        match self {
            Scale::Desk => 16,
            Scale::Full => 40,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }
}

/// Numerically stable pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean and standard error of a replication sample (se = 0 for fewer than
/// two values).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Configuration of one Monte-Carlo sweep over sketch sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: ModelConfig,
    pub sketch: SketchKind,
    /// Downsampling ratios to visit; each must lie in (0, 1].
    pub psi_grid: Vec<f64>,
    pub replications: usize,
    /// Rows in the fresh test design of each replication.
    pub n_test: usize,
    pub base_seed: u64,
    /// Redraw X every replication instead of fixing it (slow path: one SVD
    /// per replication).
    #[serde(default)]
    pub redraw_x: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.psi_grid.is_empty() {
            return Err(Error::Config("psi grid is empty".into()));
        }
        for &psi in &self.psi_grid {
            if !psi.is_finite() || psi <= 0.0 || psi > 1.0 {
                return Err(Error::Config(format!("psi values must lie in (0, 1], got {psi}")));
            }
            if m_of_psi(psi, self.model.n) < 1 {
                return Err(Error::Config(format!(
                    "psi = {psi} yields an empty sketch at n = {}",
                    self.model.n
                )));
            }
        }
        if self.replications < 1 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if self.n_test < 1 {
            return Err(Error::Config("need at least one test row".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("sweep config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep config serializes")
    }
}

/// One evaluated grid point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub m: usize,
    pub psi: f64,
    pub mean_risk: f64,
    pub se_risk: f64,
    pub replications: usize,
    /// The matching limit, when one exists away from the threshold.
    pub limit: Option<AsymptoticRisk>,
}

/// Sweep output: Monte-Carlo estimates and limits per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub n: usize,
    pub p: usize,
    pub sketch: SketchKind,
    pub risk_kind: RiskKind,
    pub base_seed: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Two CSV rows per grid point (Monte-Carlo, then the limit when it
    /// exists) in the shared risk-report schema.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RiskReport::CSV_HEADER);
        out.push('\n');
        for point in &self.points {
            let mc = RiskReport {
                n: self.n,
                p: self.p,
                m: point.m,
                kind: self.risk_kind,
                origin: RiskOrigin::MonteCarlo,
                bias: None,
                variance: None,
                risk: point.mean_risk,
                se: Some(point.se_risk),
                reps: point.replications,
                seed: self.base_seed,
            };
            out.push_str(&mc.csv_row());
            out.push('\n');
            if let Some(limit) = &point.limit {
                let row = RiskReport {
                    n: self.n,
                    p: self.p,
                    m: point.m,
                    kind: self.risk_kind,
                    origin: RiskOrigin::AsymptoticLimit,
                    bias: Some(limit.bias),
                    variance: Some(limit.variance),
                    risk: limit.risk,
                    se: None,
                    reps: 0,
                    seed: self.base_seed,
                };
                out.push_str(&row.csv_row());
                out.push('\n');
            }
        }
        out
    }
}

/// The limiting spectral distribution H implied by a covariance
/// specification.
fn spectrum_of(sigma: &SigmaSpec, p: usize) -> Result<SpectralMeasure> {
    match sigma {
        SigmaSpec::Spectrum(measure) => Ok(measure.clone()),
        SigmaSpec::Eigenvalues(_) => esd(&covariance_eigs(sigma, p)?),
    }
}

/// The limit family a sketch kind belongs to.
pub fn family_of(kind: SketchKind) -> SketchFamily {
    match kind {
        SketchKind::HaarOrthogonal | SketchKind::Srht => SketchFamily::Orthogonal,
        SketchKind::IidGaussian => SketchFamily::Iid,
    }
}

/// The limit matching a sweep's signal mode: integrated risk for random
/// signals, conditional risk (fixed-signal bias) for deterministic ones.
fn limit_with_beta(
    h: &SpectralMeasure,
    family: SketchFamily,
    phi: f64,
    psi: f64,
    sigma_noise: f64,
    beta_mode: &BetaMode,
    g_and_norm: Option<&(SpectralMeasure, f64)>,
) -> Result<AsymptoticRisk> {
    match beta_mode {
        BetaMode::RandomIsotropic { alpha } => {
            limit_for(h, family, phi, psi, *alpha, sigma_noise)
        }
        BetaMode::Deterministic { .. } => {
            let base = limit_for(h, family, phi, psi, 0.0, sigma_noise)?;
            match base.regime {
                Regime::Under => Ok(base),
                Regime::Over => {
                    let (g, norm_sq) = g_and_norm.ok_or_else(|| {
                        Error::Config("deterministic limits need the signal spectrum".into())
                    })?;
                    let bias = deterministic_bias_over(h, g, phi, psi, *norm_sq)?;
                    Ok(AsymptoticRisk {
                        bias,
                        variance: base.variance,
                        risk: bias + base.variance,
                        regime: Regime::Over,
                        c0: base.c0,
                    })
                }
            }
        }
    }
}

const SKETCH_TAG: u64 = 0xF0;
const TEST_TAG: u64 = 0xF1;
const REDRAW_TAG: u64 = 0xF2;
const VAL_TAG: u64 = 0xF3;

/// Runs a full sweep; parallel over grid points, deterministic in the seed.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let model = &config.model;
    let (n, p) = (model.n, model.p);
    let eigs = covariance_eigs(&model.sigma, p)?;
    let x0 = sample_design(n, &eigs, model.seed);
    let h = spectrum_of(&model.sigma, p)?;
    let family = family_of(config.sketch);
    let phi_n = p as f64 / n as f64;
    let risk_kind = match &model.beta {
        BetaMode::RandomIsotropic { .. } => RiskKind::BetaIntegrated,
        BetaMode::Deterministic { .. } => RiskKind::ConditionalOnBeta,
    };
    // Deterministic signals need their weighted spectrum for the bias limit.
    let g_and_norm = match &model.beta {
        BetaMode::Deterministic { .. } => {
            let beta = sample_beta(&model.beta, p, model.seed)?;
            let g = vesd(&beta, &eigs)?;
            Some((g, beta.norm_squared()))
        }
        BetaMode::RandomIsotropic { .. } => None,
    };

    let points: Result<Vec<SweepPoint>> = config
        .psi_grid
        .par_iter()
        .enumerate()
        .map(|(i, &psi)| {
            let m = m_of_psi(psi, n);
            let sketch_seed = derive_seed(config.base_seed, i as u64, SKETCH_TAG);
            let spec = SketchSpec { kind: config.sketch, m, n, seed: sketch_seed };
            let sketch = SketchOperator::from_spec(&spec)?;

            let fixed_pinv = if config.redraw_x {
                None
            } else {
                Some(PseudoInverse::new(&sketch.apply_matrix(&x0)?, None))
            };

            let mut risks = Vec::with_capacity(config.replications);
            for r in 0..config.replications {
                let rep_seed = derive_seed(config.base_seed, i as u64, r as u64);
                let beta = sample_beta(&model.beta, p, rep_seed)?;
                let noise = sample_noise(n, model.sigma_noise, rep_seed);
                let beta_hat = match &fixed_pinv {
                    Some(pinv) => {
                        let y = &x0 * &beta + &noise;
                        pinv.apply(&sketch.apply_vector(&y)?)
                    }
                    None => {
                        let x_r =
                            sample_design(n, &eigs, derive_seed(rep_seed, REDRAW_TAG, 0));
                        let y = &x_r * &beta + &noise;
                        let sx = sketch.apply_matrix(&x_r)?;
                        PseudoInverse::new(&sx, None).apply(&sketch.apply_vector(&y)?)
                    }
                };
                let x_test =
                    sample_design(config.n_test, &eigs, derive_seed(rep_seed, TEST_TAG, 0));
                risks.push(empirical_risk(&beta_hat, &beta, &x_test));
            }
            let (mean_risk, se_risk) = mean_se(&risks);

            let psi_limit = m as f64 / n as f64;
            let limit = limit_with_beta(
                &h,
                family,
                phi_n,
                psi_limit,
                model.sigma_noise,
                &model.beta,
                g_and_norm.as_ref(),
            )
            .ok();
            Ok(SweepPoint {
                m,
                psi,
                mean_risk,
                se_risk,
                replications: config.replications,
                limit,
            })
        })
        .collect();

    Ok(SweepResult { n, p, sketch: config.sketch, risk_kind, base_seed: config.base_seed, points: points? })
}

/// Per-replication exact integrated risks of a freshly drawn isotropic
/// problem and sketch, for fluctuation studies: each value is
/// bias + variance from the exact finite-sample formulas.
pub fn clt_replication_risks(
    n: usize,
    p: usize,
    m: usize,
    kind: SketchKind,
    alpha: f64,
    sigma_noise: f64,
    replications: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    if n < 1 || p < 1 || m < 1 || m > n {
        return Err(Error::Config(format!(
            "need 1 <= m <= n and p >= 1, got n = {n}, p = {p}, m = {m}"
        )));
    }
    if replications < 1 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let eigs = DVector::from_element(p, 1.0);
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(base_seed, r as u64, 0xC1);
            let x = sample_design(n, &eigs, rep_seed);
            let spec =
                SketchSpec { kind, m, n, seed: derive_seed(rep_seed, 1, 0xC1) };
            let sketch = SketchOperator::from_spec(&spec)?;
            let bias = exact_integrated_bias(&sketch, &x, &eigs, alpha)?;
            let variance = exact_variance(&sketch, &x, &eigs, sigma_noise)?;
            Ok(bias + variance)
        })
        .collect()
}

/// A named output file produced by a figure reproduction.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureArtifact {
    pub name: String,
    pub contents: String,
}

/// Geometric grid of `k` aspect ratios spanning [0.1, 10].
pub fn phi_grid_geometric(k: usize) -> Vec<f64> {
    assert!(k >= 2);
    (0..k)
        .map(|i| 0.1 * 100f64.powf(i as f64 / (k as f64 - 1.0)))
        .collect()
}

fn two_atom_spectrum() -> SpectralMeasure {
    SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).expect("valid two-atom spectrum")
}

/// ψ-grid for the ψ-sweep figures: δ = 0.05 over (0, 1), open at 1.
fn figure_psi_grid() -> Vec<f64> {
    let mut grid = psi_grid(0.05).expect("valid grid step");
    grid.pop(); // drop ψ = 1: these protocols sweep ψ within (0, 1)
    grid
}

/// Reproduces the numbered experiment protocols. Artifacts are CSV files in
/// the shared schemas; the same seed yields byte-identical output.
pub fn reproduce_figure(id: u8, scale: Scale, base_seed: u64) -> Result<Vec<FigureArtifact>> {
    match id {
        1 => figure_psi_sweep(1, SpectralMeasure::point_mass(1.0)?, &[(5.0, 5.0), (15.0, 5.0)], scale, base_seed),
        2 => figure_full_vs_closed_optimal(scale, base_seed),
        3 => figure_psi_sweep(3, two_atom_spectrum(), &[(3.0, 3.0), (9.0, 3.0)], scale, base_seed),
        4 => figure_full_vs_grid_optimal(scale, base_seed),
        5 => figure_theory_curves(),
        6 => figure_validation_selection(scale, base_seed),
        _ => Err(Error::Config(format!("unknown figure id {id}; expected 1-6"))),
    }
}

/// Figures 1 and 3: risk vs ψ at fixed p = 200, SRHT + iid sketches, two
/// (α, σ) panels.
fn figure_psi_sweep(
    id: u8,
    spectrum: SpectralMeasure,
    panels: &[(f64, f64)],
    scale: Scale,
    base_seed: u64,
) -> Result<Vec<FigureArtifact>> {
    let mut artifacts = Vec::new();
    let psi_grid = figure_psi_grid();
    for (panel_idx, &(alpha, sigma)) in panels.iter().enumerate() {
        for (kind_idx, kind) in [SketchKind::Srht, SketchKind::IidGaussian].iter().enumerate() {
            let seed = derive_seed(base_seed, id as u64 * 10 + panel_idx as u64, kind_idx as u64);
            let config = SweepConfig {
                model: ModelConfig {
                    n: 400,
                    p: 200,
                    sigma: SigmaSpec::Spectrum(spectrum.clone()),
                    beta: BetaMode::RandomIsotropic { alpha },
                    sigma_noise: sigma,
                    seed,
                },
                sketch: *kind,
                psi_grid: psi_grid.clone(),
                replications: scale.replications(),
                n_test: 100,
                base_seed: seed,
                redraw_x: false,
            };
            let result = run_sweep(&config)?;
            artifacts.push(FigureArtifact {
                name: format!("figure{id}_a{alpha:.0}s{sigma:.0}_{}.csv", kind.name()),
                contents: result.to_csv(),
            });
        }
    }
    Ok(artifacts)
}

/// Shared Monte-Carlo runner for the φ-sweep figures: given a prepared fit
/// operator, estimates the mean test risk over replications with fresh
/// signal, noise, and test design each time.
struct PreparedFit<'a> {
    sketch: Option<&'a SketchOperator>,
    pinv: Option<&'a PseudoInverse>,
}

impl PreparedFit<'_> {
    fn fit(&self, y: &DVector<f64>, p: usize) -> Result<DVector<f64>> {
        match (self.sketch, self.pinv) {
            (Some(s), Some(pinv)) => Ok(pinv.apply(&s.apply_vector(y)?)),
            (None, Some(pinv)) => Ok(pinv.apply(y)),
            (None, None) => Ok(DVector::zeros(p)), // null estimator
            (Some(_), None) => unreachable!("sketch without factorization"),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn mc_point(
    fit: &PreparedFit<'_>,
    x0: &nalgebra::DMatrix<f64>,
    eigs: &DVector<f64>,
    alpha: f64,
    sigma_noise: f64,
    n_test: usize,
    replications: usize,
    point_seed: u64,
) -> Result<(f64, f64)> {
    let (n, p) = x0.shape();
    let mode = BetaMode::RandomIsotropic { alpha };
    let mut risks = Vec::with_capacity(replications);
    for r in 0..replications {
        let rep_seed = derive_seed(point_seed, r as u64, 0);
        let beta = sample_beta(&mode, p, rep_seed)?;
        let noise = sample_noise(n, sigma_noise, rep_seed);
        let y = x0 * &beta + &noise;
        let beta_hat = fit.fit(&y, p)?;
        let x_test = sample_design(n_test, eigs, derive_seed(rep_seed, TEST_TAG, 0));
        risks.push(empirical_risk(&beta_hat, &beta, &x_test));
    }
    Ok(mean_se(&risks))
}

fn report_mc(n: usize, p: usize, m: usize, mean: f64, se: f64, reps: usize, seed: u64) -> RiskReport {
    RiskReport {
        n,
        p,
        m,
        kind: RiskKind::BetaIntegrated,
        origin: RiskOrigin::MonteCarlo,
        bias: None,
        variance: None,
        risk: mean,
        se: Some(se),
        reps,
        seed,
    }
}

fn report_limit(n: usize, p: usize, m: usize, limit: &AsymptoticRisk, seed: u64) -> RiskReport {
    RiskReport {
        n,
        p,
        m,
        kind: RiskKind::BetaIntegrated,
        origin: RiskOrigin::AsymptoticLimit,
        bias: Some(limit.bias),
        variance: Some(limit.variance),
        risk: limit.risk,
        se: None,
        reps: 0,
        seed,
    }
}

/// The limit attained at a closed-form optimal size, split into bias and
/// variance.
fn closed_optimal_limit(alpha: f64, sigma: f64, phi: f64, m_star: usize, n: usize) -> Result<AsymptoticRisk> {
    if m_star == 0 {
        return Ok(AsymptoticRisk {
            bias: alpha * alpha,
            variance: 0.0,
            risk: alpha * alpha,
            regime: Regime::Over,
            c0: None,
        });
    }
    if m_star == n {
        return full_sample_limit(phi, alpha, sigma);
    }
    crate::theory::isotropic_limit(
        SketchFamily::Orthogonal,
        phi,
        m_star as f64 / n as f64,
        alpha,
        sigma,
    )
}

/// Figure 2: full-sample vs closed-form optimally sketched estimator across
/// the aspect-ratio grid, isotropic features, two SNR panels.
fn figure_full_vs_closed_optimal(scale: Scale, base_seed: u64) -> Result<Vec<FigureArtifact>> {
    let n = 400usize;
    let n_test = 100usize;
    let reps = scale.replications();
    let phis = phi_grid_geometric(scale.phi_points());
    let mut artifacts = Vec::new();
    for (panel_idx, &(alpha, sigma)) in [(3.0f64, 4.0f64), (6.0, 2.0)].iter().enumerate() {
        let rows: Result<Vec<(String, String)>> = phis
            .par_iter()
            .enumerate()
            .map(|(i, &phi)| {
                let p = m_of_psi(phi, n); // p = ⌊nφ⌋, same rounding as m
                let phi_n = p as f64 / n as f64;
                let seed = derive_seed(base_seed, 20 + panel_idx as u64, i as u64);
                let eigs = DVector::from_element(p, 1.0);
                let x0 = sample_design(n, &eigs, seed);

                // Full-sample estimator.
                let full_pinv = PseudoInverse::new(&x0, None);
                let full_fit = PreparedFit { sketch: None, pinv: Some(&full_pinv) };
                let (mean, se) =
                    mc_point(&full_fit, &x0, &eigs, alpha, sigma, n_test, reps, derive_seed(seed, 1, 0))?;
                let mut full_rows = report_mc(n, p, n, mean, se, reps, seed).csv_row();
                full_rows.push('\n');
                if let Ok(limit) = full_sample_limit(phi_n, alpha, sigma) {
                    full_rows.push_str(&report_limit(n, p, n, &limit, seed).csv_row());
                    full_rows.push('\n');
                }

                // Closed-form optimally sketched estimator.
                let choice = optimal_m_closed(alpha, sigma, phi_n, n)?;
                let m_star = choice.m_star;
                let sketch;
                let sketch_pinv;
                let optimal_fit = if m_star == 0 {
                    PreparedFit { sketch: None, pinv: None }
                } else if m_star == n {
                    PreparedFit { sketch: None, pinv: Some(&full_pinv) }
                } else {
                    sketch = SketchOperator::srht(m_star, n, derive_seed(seed, SKETCH_TAG, 0))?;
                    sketch_pinv = PseudoInverse::new(&sketch.apply_matrix(&x0)?, None);
                    PreparedFit { sketch: Some(&sketch), pinv: Some(&sketch_pinv) }
                };
                let (mean, se) =
                    mc_point(&optimal_fit, &x0, &eigs, alpha, sigma, n_test, reps, derive_seed(seed, 2, 0))?;
                let mut opt_rows = report_mc(n, p, m_star, mean, se, reps, seed).csv_row();
                opt_rows.push('\n');
                if let Ok(limit) = closed_optimal_limit(alpha, sigma, phi_n, m_star, n) {
                    opt_rows.push_str(&report_limit(n, p, m_star, &limit, seed).csv_row());
                    opt_rows.push('\n');
                }
                Ok((full_rows, opt_rows))
            })
            .collect();
        let rows = rows?;
        let panel = format!("a{alpha:.0}s{sigma:.0}");
        let mut full_csv = String::from(RiskReport::CSV_HEADER);
        full_csv.push('\n');
        let mut opt_csv = full_csv.clone();
        for (full_rows, opt_rows) in rows {
            full_csv.push_str(&full_rows);
            opt_csv.push_str(&opt_rows);
        }
        artifacts.push(FigureArtifact { name: format!("figure2_{panel}_full.csv"), contents: full_csv });
        artifacts.push(FigureArtifact { name: format!("figure2_{panel}_optimal.csv"), contents: opt_csv });
    }
    Ok(artifacts)
}

/// Figure 4: full-sample vs grid-optimally sketched estimators (SRHT and
/// iid) across the aspect-ratio grid, correlated features, (α, σ) = (6, 3).
fn figure_full_vs_grid_optimal(scale: Scale, base_seed: u64) -> Result<Vec<FigureArtifact>> {
    let n = 400usize;
    let n_test = 100usize;
    let reps = scale.replications();
    let (alpha, sigma) = (6.0f64, 3.0f64);
    let h = two_atom_spectrum();
    let phis = phi_grid_geometric(scale.phi_points());

    let rows: Result<Vec<(String, String, String)>> = phis
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| {
            let p = m_of_psi(phi, n);
            let phi_n = p as f64 / n as f64;
            let seed = derive_seed(base_seed, 40, i as u64);
            let eigs = covariance_eigs(&SigmaSpec::Spectrum(h.clone()), p)?;
            let x0 = sample_design(n, &eigs, seed);
            let full_pinv = PseudoInverse::new(&x0, None);

            let full_fit = PreparedFit { sketch: None, pinv: Some(&full_pinv) };
            let (mean, se) =
                mc_point(&full_fit, &x0, &eigs, alpha, sigma, n_test, reps, derive_seed(seed, 1, 0))?;
            let mut full_rows = report_mc(n, p, n, mean, se, reps, seed).csv_row();
            full_rows.push('\n');
            if let Ok(limit) = limit_for(&h, SketchFamily::Orthogonal, phi_n, 1.0, alpha, sigma) {
                full_rows.push_str(&report_limit(n, p, n, &limit, seed).csv_row());
                full_rows.push('\n');
            }

            let mut per_kind = Vec::new();
            for (kind_idx, kind) in [SketchKind::Srht, SketchKind::IidGaussian].iter().enumerate() {
                let family = family_of(*kind);
                let choice = optimal_m_grid(&h, family, alpha, sigma, phi_n, n, 0.05)?;
                let m_star = choice.m_star;
                let sketch;
                let sketch_pinv;
                let fit = if m_star == n {
                    PreparedFit { sketch: None, pinv: Some(&full_pinv) }
                } else {
                    let spec = SketchSpec {
                        kind: *kind,
                        m: m_star,
                        n,
                        seed: derive_seed(seed, SKETCH_TAG, kind_idx as u64),
                    };
                    sketch = SketchOperator::from_spec(&spec)?;
                    sketch_pinv = PseudoInverse::new(&sketch.apply_matrix(&x0)?, None);
                    PreparedFit { sketch: Some(&sketch), pinv: Some(&sketch_pinv) }
                };
                let (mean, se) = mc_point(
                    &fit,
                    &x0,
                    &eigs,
                    alpha,
                    sigma,
                    n_test,
                    reps,
                    derive_seed(seed, 2 + kind_idx as u64, 0),
                )?;
                let mut rows = report_mc(n, p, m_star, mean, se, reps, seed).csv_row();
                rows.push('\n');
                let limit = if m_star == n {
                    limit_for(&h, SketchFamily::Orthogonal, phi_n, 1.0, alpha, sigma)
                } else {
                    limit_for(&h, family, phi_n, m_star as f64 / n as f64, alpha, sigma)
                };
                if let Ok(limit) = limit {
                    rows.push_str(&report_limit(n, p, m_star, &limit, seed).csv_row());
                    rows.push('\n');
                }
                per_kind.push(rows);
            }
            let iid_rows = per_kind.pop().unwrap();
            let srht_rows = per_kind.pop().unwrap();
            Ok((full_rows, srht_rows, iid_rows))
        })
        .collect();
    let rows = rows?;

    let mut full_csv = String::from(RiskReport::CSV_HEADER);
    full_csv.push('\n');
    let mut srht_csv = full_csv.clone();
    let mut iid_csv = full_csv.clone();
    for (f, s, i) in rows {
        full_csv.push_str(&f);
        srht_csv.push_str(&s);
        iid_csv.push_str(&i);
    }
    Ok(vec![
        FigureArtifact { name: "figure4_full.csv".into(), contents: full_csv },
        FigureArtifact { name: "figure4_srht.csv".into(), contents: srht_csv },
        FigureArtifact { name: "figure4_iid.csv".into(), contents: iid_csv },
    ])
}

/// Figure 5: theory-only risk curves vs ψ for the correlated spectrum at
/// p = 200 and p = 424, with the fine-grid minimizer marked.
fn figure_theory_curves() -> Result<Vec<FigureArtifact>> {
    let n = 400usize;
    let (alpha, sigma) = (6.0f64, 3.0f64);
    let h = two_atom_spectrum();
    let mut artifacts = Vec::new();
    for p in [200usize, 424] {
        let phi_n = p as f64 / n as f64;
        let mut curve = String::from(THEORY_CSV_HEADER);
        curve.push('\n');
        for psi in psi_grid(0.0025)? {
            match limit_for(&h, SketchFamily::Orthogonal, phi_n, psi, alpha, sigma) {
                Ok(limit) => {
                    curve.push_str(&theory_csv_row(phi_n, psi, SketchFamily::Orthogonal, &limit));
                    curve.push('\n');
                }
                // Points at the interpolation threshold have no finite limit.
                Err(_) => continue,
            }
        }
        let choice =
            optimal_m_grid(&h, SketchFamily::Orthogonal, alpha, sigma, phi_n, n, 0.0025)?;
        artifacts.push(FigureArtifact { name: format!("figure5_p{p}_curve.csv"), contents: curve });
        artifacts.push(FigureArtifact {
            name: format!("figure5_p{p}_selection.csv"),
            contents: choice.trace_csv(),
        });
    }
    Ok(artifacts)
}

/// Figure 6: test risk of the SRHT-sketched estimator at the theoretically
/// optimal size m* and at validation-selected sizes m̂ (n_val ∈ {20, 100,
/// 200}), across the aspect-ratio grid, isotropic and correlated panels.
///
/// Per replication, every candidate fit reuses factorizations precomputed
/// once per (φ, m): the design and sketches are fixed across replications.
fn figure_validation_selection(scale: Scale, base_seed: u64) -> Result<Vec<FigureArtifact>> {
    let n = 400usize;
    let n_test = 100usize;
    let n_vals = [20usize, 100, 200];
    let reps = scale.replications();
    let (alpha, sigma) = (6.0f64, 3.0f64);
    let phis = phi_grid_geometric(scale.phi_points());
    let mut artifacts = Vec::new();

    for (panel_idx, (panel, h)) in [
        ("isotropic", SpectralMeasure::point_mass(1.0)?),
        ("correlated", two_atom_spectrum()),
    ]
    .into_iter()
    .enumerate()
    {
        // Theory curve for the full-sample estimator.
        let mut theory = String::from(THEORY_CSV_HEADER);
        theory.push('\n');
        for &phi in &phis {
            if let Ok(limit) = limit_for(&h, SketchFamily::Orthogonal, phi, 1.0, alpha, sigma) {
                theory.push_str(&theory_csv_row(phi, 1.0, SketchFamily::Orthogonal, &limit));
                theory.push('\n');
            }
        }

        struct PointOut {
            mstar_rows: String,
            val_rows: Vec<String>, // one per n_val
        }

        let computed: Result<Vec<PointOut>> = phis
            .par_iter()
            .enumerate()
            .map(|(i, &phi)| {
                let p = m_of_psi(phi, n);
                let phi_n = p as f64 / n as f64;
                let seed = derive_seed(base_seed, 60 + panel_idx as u64, i as u64);
                let eigs = covariance_eigs(&SigmaSpec::Spectrum(h.clone()), p)?;
                let x0 = sample_design(n, &eigs, seed);

                // Candidate sizes and their fixed factorizations.
                let mut candidates: Vec<(usize, Option<SketchOperator>, PseudoInverse)> =
                    Vec::new();
                for (ci, psi) in psi_grid(0.05)?.into_iter().enumerate() {
                    let m = m_of_psi(psi, n);
                    if m < 1 || candidates.iter().any(|(cm, _, _)| *cm == m) {
                        continue;
                    }
                    if m == n {
                        candidates.push((m, None, PseudoInverse::new(&x0, None)));
                    } else {
                        let s = SketchOperator::srht(m, n, derive_seed(seed, SKETCH_TAG, ci as u64))?;
                        let pinv = PseudoInverse::new(&s.apply_matrix(&x0)?, None);
                        candidates.push((m, Some(s), pinv));
                    }
                }

                // The theoretically optimal candidate on the same grid.
                let choice =
                    optimal_m_grid(&h, SketchFamily::Orthogonal, alpha, sigma, phi_n, n, 0.05)?;
                let m_star = choice.m_star;
                let star_idx = candidates
                    .iter()
                    .position(|(m, _, _)| *m == m_star)
                    .ok_or_else(|| Error::Config(format!("m* = {m_star} missing from grid")))?;

                let mode = BetaMode::RandomIsotropic { alpha };
                let mut star_risks = Vec::with_capacity(reps);
                let mut val_risks: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); n_vals.len()];
                let mut val_sizes: Vec<Vec<usize>> = vec![Vec::with_capacity(reps); n_vals.len()];
                for r in 0..reps {
                    let rep_seed = derive_seed(seed, r as u64, 0);
                    let beta = sample_beta(&mode, p, rep_seed)?;
                    let noise = sample_noise(n, sigma, rep_seed);
                    let y = &x0 * &beta + &noise;
                    // One fit per candidate, shared by every validation size.
                    let fits: Result<Vec<DVector<f64>>> = candidates
                        .iter()
                        .map(|(_, s, pinv)| match s {
                            Some(s) => Ok(pinv.apply(&s.apply_vector(&y)?)),
                            None => Ok(pinv.apply(&y)),
                        })
                        .collect();
                    let fits = fits?;
                    let x_test =
                        sample_design(n_test, &eigs, derive_seed(rep_seed, TEST_TAG, 0));
                    star_risks.push(empirical_risk(&fits[star_idx], &beta, &x_test));
                    for (vi, &n_val) in n_vals.iter().enumerate() {
                        let x_val = sample_design(
                            n_val,
                            &eigs,
                            derive_seed(rep_seed, VAL_TAG, n_val as u64),
                        );
                        // Minimize the oracle validation risk; ties toward
                        // larger m (candidates are in increasing-m order).
                        let mut best = 0usize;
                        let mut best_risk = f64::INFINITY;
                        for (ci, fit) in fits.iter().enumerate() {
                            let risk = empirical_risk(fit, &beta, &x_val);
                            if risk <= best_risk {
                                best_risk = risk;
                                best = ci;
                            }
                        }
                        val_sizes[vi].push(candidates[best].0);
                        val_risks[vi].push(empirical_risk(&fits[best], &beta, &x_test));
                    }
                }

                let (mean, se) = mean_se(&star_risks);
                let mut mstar_rows = report_mc(n, p, m_star, mean, se, reps, seed).csv_row();
                mstar_rows.push('\n');
                let star_limit = if m_star == n {
                    limit_for(&h, SketchFamily::Orthogonal, phi_n, 1.0, alpha, sigma)
                } else {
                    limit_for(&h, SketchFamily::Orthogonal, phi_n, m_star as f64 / n as f64, alpha, sigma)
                };
                if let Ok(limit) = star_limit {
                    mstar_rows.push_str(&report_limit(n, p, m_star, &limit, seed).csv_row());
                    mstar_rows.push('\n');
                }

                let mut val_rows = Vec::new();
                for (vi, _) in n_vals.iter().enumerate() {
                    let (mean, se) = mean_se(&val_risks[vi]);
                    let mut sizes = val_sizes[vi].clone();
                    sizes.sort_unstable();
                    let median_m = sizes[sizes.len() / 2];
                    let mut row = report_mc(n, p, median_m, mean, se, reps, seed).csv_row();
                    row.push('\n');
                    val_rows.push(row);
                }
                Ok(PointOut { mstar_rows, val_rows })
            })
            .collect();
        let computed = computed?;

        let mut mstar_csv = String::from(RiskReport::CSV_HEADER);
        mstar_csv.push('\n');
        let mut val_csvs: Vec<String> = n_vals.iter().map(|_| mstar_csv.clone()).collect();
        for point in computed {
            mstar_csv.push_str(&point.mstar_rows);
            for (vi, row) in point.val_rows.iter().enumerate() {
                val_csvs[vi].push_str(row);
            }
        }
        artifacts.push(FigureArtifact {
            name: format!("figure6_{panel}_theory.csv"),
            contents: theory,
        });
        artifacts.push(FigureArtifact {
            name: format!("figure6_{panel}_mstar.csv"),
            contents: mstar_csv,
        });
        for (vi, &n_val) in n_vals.iter().enumerate() {
            artifacts.push(FigureArtifact {
                name: format!("figure6_{panel}_val{n_val}.csv"),
                contents: val_csvs[vi].clone(),
            });
        }
    }
    Ok(artifacts)
}

/// CSV schema for timing runs.
pub const BENCH_CSV_HEADER: &str = "n,p,m,kind,seconds";

/// Median-of-five wall-clock timings for the full fit and for sketched fits
/// (sketch application + solve) at each requested size.
pub fn bench_time(
    n: usize,
    p: usize,
    psi_list: &[f64],
    kind: SketchKind,
    seed: u64,
) -> Result<String> {
    if n < 1 || p < 1 {
        return Err(Error::Config("n and p must be positive".into()));
    }
    let eigs = DVector::from_element(p, 1.0);
    let x = sample_design(n, &eigs, seed);
    let beta = sample_beta(&BetaMode::RandomIsotropic { alpha: 1.0 }, p, seed)?;
    let y = &x * &beta + sample_noise(n, 1.0, seed);

    fn median_of_five(mut run: impl FnMut() -> Result<()>) -> Result<f64> {
        let mut times = Vec::with_capacity(5);
        for _ in 0..5 {
            let start = std::time::Instant::now();
            run()?;
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        Ok(times[2])
    }

    // Untimed warm-up so the first measured row does not absorb one-time
    // costs (allocator growth, CPU frequency ramp) and skew comparisons.
    for _ in 0..2 {
        std::hint::black_box(crate::estimator::minnorm_fit(&x, &y));
    }

    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    let full_time = median_of_five(|| {
        let fit = crate::estimator::minnorm_fit(&x, &y);
        std::hint::black_box(&fit);
        Ok(())
    })?;
    out.push_str(&format!("{n},{p},{n},full,{full_time}\n"));

    for (i, &psi) in psi_list.iter().enumerate() {
        if !psi.is_finite() || psi <= 0.0 || psi > 1.0 {
            return Err(Error::Config(format!("psi values must lie in (0, 1], got {psi}")));
        }
        let m = m_of_psi(psi, n).max(1);
        let spec = SketchSpec { kind, m, n, seed: derive_seed(seed, i as u64, SKETCH_TAG) };
        let sketch = SketchOperator::from_spec(&spec)?;
        let time = median_of_five(|| {
            let (sx, sy) = sketch.apply(&x, &y)?;
            let fit = crate::estimator::minnorm_fit(&sx, &sy);
            std::hint::black_box(&fit);
            Ok(())
        })?;
        out.push_str(&format!("{n},{p},{m},{},{time}\n", kind.name()));
    }
    Ok(out)
}
