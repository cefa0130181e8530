//! Acceptance gate: one test per shipped guarantee, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see them all).
//!
//! Every tolerance is pinned in code next to the check it guards. The
//! Monte-Carlo criteria fix the documented experiment protocol (design and
//! sketches generated once, then held fixed across replications) and a pinned
//! seed, so they are deterministic: identical machines reproduce identical
//! numbers.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use sketched_ridgeless::derive_seed;
use sketched_ridgeless::estimator::{exact_conditional_bias, exact_variance, PseudoInverse};
use sketched_ridgeless::experiment::{clt_replication_risks, run_sweep, SweepConfig, SweepResult};
use sketched_ridgeless::measures::SpectralMeasure;
use sketched_ridgeless::model::{sample_design, sample_noise, BetaMode, ModelConfig, SigmaSpec};
use sketched_ridgeless::sketch::{SketchKind, SketchOperator, SketchSpec};
use sketched_ridgeless::theory::{
    clt_params, deterministic_bias_over, full_sample_limit, optimal_clt_variance, solve_c0,
    solve_c0_tilde, under_variance, CltStatistic, SketchFamily,
};
use sketched_ridgeless::tuning::{optimal_m_closed, optimal_m_grid, psi_grid};

/// Seed of every seeded acceptance computation.
const ACCEPT_SEED: u64 = 20250827;

/// Prints the per-criterion verdict line, then enforces it.
fn verdict(id: &str, description: &str, started: Instant, budget_s: f64, pass: bool, detail: &str) {
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "{id} {}: {description} [{elapsed:.2}s / {budget_s:.0}s] {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{id} failed: {detail}");
    assert!(
        elapsed <= budget_s,
        "{id} exceeded its runtime budget: {elapsed:.2}s > {budget_s}s"
    );
}

fn delta1() -> SpectralMeasure {
    SpectralMeasure::point_mass(1.0).unwrap()
}

fn two_atom() -> SpectralMeasure {
    SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).unwrap()
}

/// 25-point geometric grid over [lo, hi].
fn geometric_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| lo * (hi / lo).powf(i as f64 / (k as f64 - 1.0)))
        .collect()
}

#[test]
fn ac01_self_consistent_roots_match_closed_forms() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    // Over-parameterized root: with an isotropic spectrum the negative root
    // of the self-consistent equation is ψ/φ − 1.
    for ratio in geometric_grid(1.1, 10.0, 25) {
        let psi = 0.5;
        let phi = ratio * psi;
        let c0 = solve_c0(&delta1(), phi, psi).unwrap();
        worst = worst.max((c0 - (psi / phi - 1.0)).abs());
    }
    let pass_c0 = worst <= 1e-10;
    // Under-parameterized root: B = δ₁ gives φ − ψ; B = MP(ψ) gives
    // −ψ − φ² + φ + ψφ.
    let mut worst_tilde = 0.0f64;
    for ratio in geometric_grid(0.1, 0.9, 25) {
        let psi = 0.5;
        let phi = ratio * psi;
        let t1 = solve_c0_tilde(&delta1(), phi, psi).unwrap();
        worst_tilde = worst_tilde.max((t1 - (phi - psi)).abs());
        let t2 = solve_c0_tilde(&SpectralMeasure::marchenko_pastur(psi).unwrap(), phi, psi)
            .unwrap();
        worst_tilde = worst_tilde.max((t2 - (-psi - phi * phi + phi + psi * phi)).abs());
    }
    let pass_tilde = worst_tilde <= 1e-8;
    verdict(
        "AC1",
        "self-consistent roots match closed forms (1e-10 / 1e-8)",
        start,
        1.0,
        pass_c0 && pass_tilde,
        &format!("max |c0 err| = {worst:.2e}, max |c0~ err| = {worst_tilde:.2e}"),
    );
}

#[test]
fn ac02_under_variance_matches_closed_forms() {
    let start = Instant::now();
    let sigma = 5.0;
    let mut worst = 0.0f64;
    for ratio in geometric_grid(0.1, 0.9, 25) {
        let psi = 0.5;
        let phi = ratio * psi;
        let r = phi / psi;
        // Exactly orthonormal rows: point-mass B, closed form σ²r/(1−r).
        let v1 = under_variance(&delta1(), phi, psi, sigma).unwrap().variance;
        let closed1 = sigma * sigma * r / (1.0 - r);
        worst = worst.max((v1 - closed1).abs() / closed1);
        // i.i.d. rows: Marchenko–Pastur B through the quadrature path,
        // closed form σ²φ/(1−φ) + σ²r/(1−r).
        let v2 = under_variance(&SpectralMeasure::marchenko_pastur(psi).unwrap(), phi, psi, sigma)
            .unwrap()
            .variance;
        let closed2 = sigma * sigma * phi / (1.0 - phi) + closed1;
        worst = worst.max((v2 - closed2).abs() / closed2);
    }
    let pass = worst <= 1e-6;
    verdict(
        "AC2",
        "under-parameterized variance matches closed forms (1e-6 rel)",
        start,
        5.0,
        pass,
        &format!("max rel err = {worst:.2e}"),
    );
}

/// ψ-grid of the risk-sweep protocols: δ = 0.05 over (0, 1).
fn sweep_psi_grid() -> Vec<f64> {
    let mut grid = psi_grid(0.05).unwrap();
    grid.pop(); // the sweeps vary ψ within (0, 1)
    grid
}

fn sweep_config(
    sigma: SigmaSpec,
    alpha: f64,
    noise: f64,
    kind: SketchKind,
    seed: u64,
) -> SweepConfig {
    SweepConfig {
        model: ModelConfig {
            n: 400,
            p: 200,
            sigma,
            beta: BetaMode::RandomIsotropic { alpha },
            sigma_noise: noise,
            seed,
        },
        sketch: kind,
        psi_grid: sweep_psi_grid(),
        replications: 100,
        n_test: 100,
        base_seed: seed,
        redraw_x: false,
    }
}

/// Checks the asymptotic-agreement band at every retained grid point:
/// |mean − limit| ≤ max(3·SE, 7% relative) wherever |φψ⁻¹ − 1| > 0.2.
fn band_failures(result: &SweepResult, label: &str) -> (usize, Vec<String>) {
    let phi = result.p as f64 / result.n as f64;
    let mut checked = 0;
    let mut failures = Vec::new();
    for point in &result.points {
        let limit = match &point.limit {
            Some(limit) => limit,
            None => continue, // interpolation threshold
        };
        let psi = point.m as f64 / result.n as f64;
        if (phi / psi - 1.0).abs() <= 0.2 {
            continue; // threshold neighborhood is plotted but not asserted
        }
        checked += 1;
        let tol = (3.0 * point.se_risk).max(0.07 * limit.risk);
        let dev = (point.mean_risk - limit.risk).abs();
        if dev > tol {
            failures.push(format!(
                "{label} m={}: mean {:.3} vs limit {:.3} (dev {dev:.3} > tol {tol:.3})",
                point.m, point.mean_risk, limit.risk
            ));
        }
    }
    (checked, failures)
}

fn run_band_criterion(id: &str, description: &str, sigma: SigmaSpec, pairs: &[(f64, f64)]) {
    let start = Instant::now();
    let mut checked = 0;
    let mut failures: Vec<String> = Vec::new();
    for (pair_idx, &(alpha, noise)) in pairs.iter().enumerate() {
        for (kind_idx, kind) in [SketchKind::HaarOrthogonal, SketchKind::IidGaussian]
            .into_iter()
            .enumerate()
        {
            let seed = derive_seed(ACCEPT_SEED, pair_idx as u64, kind_idx as u64);
            let config = sweep_config(sigma.clone(), alpha, noise, kind, seed);
            let result = run_sweep(&config).unwrap();
            let label = format!("({alpha},{noise}) {}", kind.name());
            let (c, f) = band_failures(&result, &label);
            checked += c;
            failures.extend(f);
        }
    }
    let pass = failures.is_empty();
    verdict(
        id,
        description,
        start,
        300.0,
        pass,
        &format!("{checked} retained points, failures: {:?}", failures),
    );
}

#[test]
fn ac03_isotropic_sweep_tracks_limits() {
    run_band_criterion(
        "AC3",
        "isotropic n=400 sweeps track limits within max(3 SE, 7%)",
        SigmaSpec::Spectrum(delta1()),
        &[(5.0, 5.0), (15.0, 5.0)],
    );
}

#[test]
fn ac04_correlated_sweep_tracks_limits() {
    run_band_criterion(
        "AC4",
        "correlated-spectrum n=400 sweeps track solved-root limits within max(3 SE, 7%)",
        SigmaSpec::Spectrum(two_atom()),
        &[(3.0, 3.0), (9.0, 3.0)],
    );
}

#[test]
fn ac05_optimal_size_values() {
    let start = Instant::now();
    let closed = optimal_m_closed(6.0, 2.0, 1.15, 400).unwrap();
    let pass_closed = closed.m_star == 306;
    let grid = optimal_m_grid(
        &two_atom(),
        SketchFamily::Orthogonal,
        6.0,
        3.0,
        424.0 / 400.0,
        400,
        0.05,
    )
    .unwrap();
    // One δ = 0.05 grid step at n = 400 is 20 sample rows.
    let pass_grid = (grid.m_star as i64 - 247).unsigned_abs() <= 20;
    verdict(
        "AC5",
        "optimal sizes: closed m*=306; grid m* within one step of 247",
        start,
        10.0,
        pass_closed && pass_grid,
        &format!("closed m* = {}, grid m* = {}", closed.m_star, grid.m_star),
    );
}

#[test]
fn ac06_optimal_sketching_eliminates_risk_peak() {
    let start = Instant::now();
    let phis: Vec<f64> = (1..=100)
        .map(|i| i as f64 / 10.0)
        .filter(|&phi| !(phi > 0.9 + 1e-12 && phi < 1.1 - 1e-12))
        .collect();
    let mut pass = true;
    let mut detail = String::new();
    for &(alpha, sigma) in &[(4.0, 2.0), (6.0, 2.0)] {
        let mut max_full = f64::NEG_INFINITY;
        let mut max_opt = f64::NEG_INFINITY;
        for &phi in &phis {
            let full = full_sample_limit(phi, alpha, sigma).unwrap().risk;
            let opt = optimal_m_closed(alpha, sigma, phi, 400).unwrap().attained_risk;
            if opt > full + 1e-9 {
                pass = false;
                detail.push_str(&format!("phi {phi}: opt {opt} > full {full}; "));
            }
            max_full = max_full.max(full);
            max_opt = max_opt.max(opt);
        }
        if max_opt >= max_full {
            pass = false;
        }
        detail.push_str(&format!(
            "SNR {}: max opt {max_opt:.3} vs max full {max_full:.3}; ",
            alpha / sigma
        ));
    }
    verdict(
        "AC6",
        "optimally sketched risk never exceeds full-sample risk and flattens its peak",
        start,
        10.0,
        pass,
        &detail,
    );
}

#[test]
fn ac07_exact_risk_formulas_match_heavy_monte_carlo() {
    let start = Instant::now();
    let draws = 50_000usize;
    let results: Vec<(f64, f64, f64, String)> = (0..20u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(ACCEPT_SEED, 7, inst));
            let n = rng.random_range(24..=64usize);
            let p = rng.random_range(8..=48usize);
            let m = rng.random_range(4..=n);
            let kind = match rng.random_range(0..3u8) {
                0 => SketchKind::HaarOrthogonal,
                1 => SketchKind::Srht,
                _ => SketchKind::IidGaussian,
            };
            let sigma_noise = 1.5f64;
            let eigs = DVector::from_fn(p, |_, _| rng.random_range(0.5..2.5f64));
            let beta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0f64));
            let inst_seed = derive_seed(ACCEPT_SEED, 70, inst);
            let x = sample_design(n, &eigs, inst_seed);
            let s = SketchOperator::from_spec(&SketchSpec {
                kind,
                m,
                n,
                seed: derive_seed(inst_seed, 1, 0),
            })
            .unwrap();

            let exact = exact_conditional_bias(&beta, &s, &x, &eigs).unwrap()
                + exact_variance(&s, &x, &eigs, sigma_noise).unwrap();

            // β̂ − β = A·ε + b₀ with A = (SX)⁺S and b₀ = (A·X − I)β; the
            // new-point expectation is the Σ-quadratic form, evaluated
            // exactly, so the Monte-Carlo averages over noise draws only.
            let pinv = PseudoInverse::new(&s.apply_matrix(&x).unwrap(), None);
            let a = pinv.matrix() * s.dense();
            let b0 = &a * (&x * &beta) - &beta;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for r in 0..draws {
                let eps = sample_noise(n, sigma_noise, derive_seed(inst_seed, 2, r as u64));
                let z = &a * eps + &b0;
                let risk: f64 = z.iter().zip(eigs.iter()).map(|(v, l)| l * v * v).sum();
                sum += risk;
                sum_sq += risk * risk;
            }
            let mean = sum / draws as f64;
            let var = (sum_sq - sum * sum / draws as f64) / (draws as f64 - 1.0);
            let se = (var / draws as f64).sqrt();
            (exact, mean, se, format!("inst {inst} ({:?} n={n} p={p} m={m})", kind))
        })
        .collect();

    let mut failures = Vec::new();
    for (exact, mean, se, label) in &results {
        if (exact - mean).abs() > 3.0 * se {
            failures.push(format!("{label}: exact {exact:.5} vs MC {mean:.5} ± {se:.5}"));
        }
    }
    let pass = failures.is_empty();
    verdict(
        "AC7",
        "exact conditional risk matches 50,000-draw Monte-Carlo (3 SE, 20 instances)",
        start,
        120.0,
        pass,
        &format!("failures: {:?}", failures),
    );
}

#[test]
fn ac08_deterministic_bias_reduces_to_isotropic_form() {
    let start = Instant::now();
    let alpha = 2.0f64;
    let mut worst = 0.0f64;
    for i in 0..10 {
        let ratio = 1.2 + 6.8 * i as f64 / 9.0; // φ/ψ over [1.2, 8]
        let psi = 0.5;
        let phi = ratio * psi;
        let bias =
            deterministic_bias_over(&delta1(), &delta1(), phi, psi, alpha * alpha).unwrap();
        let closed = alpha * alpha * (1.0 - psi / phi);
        worst = worst.max((bias - closed).abs());
    }
    let pass = worst <= 1e-10;
    verdict(
        "AC8",
        "fixed-signal bias with point-mass spectra reduces to α²(1−ψφ⁻¹) (1e-10)",
        start,
        1.0,
        pass,
        &format!("max err = {worst:.2e}"),
    );
}

#[test]
fn ac09_point_mass_gram_spectrum_minimizes_variance() {
    let start = Instant::now();
    let sigma = 3.0f64;
    let settings = [(0.2, 0.5), (0.1, 0.3), (0.3, 0.9), (0.5, 0.8), (0.6, 0.95)];
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(ACCEPT_SEED, 9, 0));
    let mut failures = Vec::new();
    for &(phi, psi) in &settings {
        for trial in 0..50 {
            let k = rng.random_range(2..=6usize);
            let locations: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..3.0f64)).collect();
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0f64)).collect();
            let total: f64 = raw.iter().sum();
            let atoms: Vec<(f64, f64)> = locations
                .iter()
                .zip(&raw)
                .map(|(&x, &w)| (x, w / total))
                .collect();
            let b = SpectralMeasure::discrete(&atoms).unwrap();
            let spread = under_variance(&b, phi, psi, sigma).unwrap().variance;
            let a = b.integrate(|x| x).unwrap();
            let point = under_variance(&SpectralMeasure::point_mass(a).unwrap(), phi, psi, sigma)
                .unwrap()
                .variance;
            if point > spread + 1e-9 {
                failures.push(format!(
                    "(phi {phi}, psi {psi}) trial {trial}: point-mass {point} > spread {spread}"
                ));
            }
        }
    }
    let pass = failures.is_empty();
    verdict(
        "AC9",
        "point-mass gram spectrum minimizes under-parameterized variance (250 random B)",
        start,
        10.0,
        pass,
        &format!("failures: {:?}", failures),
    );
}

#[test]
fn ac10_fluctuation_parameters_plug_in_values() {
    let start = Instant::now();
    // r = p/m = 0.5, σ = 5, Gaussian design: mean 25, variance 2500,
    // centering 25 under the integrated-risk statement.
    let params = clt_params(CltStatistic::IntegratedRisk, 5.0, 5.0, 3.0, 200, 400).unwrap();
    let pass_params = (params.mean - 25.0).abs() <= 1e-9
        && (params.variance - 2500.0).abs() <= 1e-9
        && (params.centering - 25.0).abs() <= 1e-9;
    // Optimally sketched fluctuation variance, nontrivial-sketch case:
    // 2α³(α−σ) = 1728 at (α, σ) = (6, 2), Gaussian ν₄.
    let v = optimal_clt_variance(6.0, 2.0, 1.2, 3.0);
    let pass_optimal = (v - 1728.0).abs() <= 1e-9;
    verdict(
        "AC10",
        "fluctuation parameters reproduce plug-in values (1e-9)",
        start,
        15.0,
        pass_params && pass_optimal,
        &format!(
            "mean {} variance {} centering {} optimal {v}",
            params.mean, params.variance, params.centering
        ),
    );
}

/// Slow distributional spot check of the fluctuation variance; run with
/// `cargo test -p sketched-ridgeless-cli --test acceptance -- --ignored`.
#[test]
#[ignore = "slow distributional check (~minutes); the plug-in values above run by default"]
fn ac10_distributional_variance_bracket() {
    let start = Instant::now();
    let (n, p, m) = (600usize, 250usize, 500usize);
    let sigma = 5.0f64;
    let reps = 1000usize;
    let risks = clt_replication_risks(
        n,
        p,
        m,
        SketchKind::HaarOrthogonal,
        1.0,
        sigma,
        reps,
        derive_seed(ACCEPT_SEED, 10, 0),
    )
    .unwrap();
    let r = p as f64 / m as f64;
    let centering = sigma * sigma * r / (1.0 - r);
    let scaled: Vec<f64> = risks.iter().map(|x| p as f64 * (x - centering)).collect();
    let mean = scaled.iter().sum::<f64>() / reps as f64;
    let sample_var =
        scaled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps as f64 - 1.0);
    let sigma1_sq = 2500.0;
    let ratio = sample_var / sigma1_sq;
    let pass = (0.5..=2.0).contains(&ratio);
    verdict(
        "AC10b",
        "sample variance of p·(risk − centering) brackets the predicted 2500",
        start,
        900.0,
        pass,
        &format!("sample variance {sample_var:.1} ({ratio:.2}× predicted), mean {mean:.2}"),
    );
}

#[test]
fn ac11_figure_reproduction_is_byte_deterministic() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_sketched-ridgeless");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = std::process::Command::new(bin)
            .args([
                "--out",
                out.to_str().unwrap(),
                "reproduce-figure",
                "1",
                "--scale",
                "desk",
                "--seed",
                &ACCEPT_SEED.to_string(),
            ])
            .status()
            .unwrap();
        assert!(status.success(), "reproduce-figure run {run} failed");
        let mut files: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        let contents: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        outputs.push(contents);
    }
    let pass = outputs[0] == outputs[1] && !outputs[0].is_empty();
    verdict(
        "AC11",
        "reproduce-figure 1 desk twice with one seed gives byte-identical CSVs",
        start,
        600.0,
        pass,
        &format!("{} CSV files compared", outputs[0].len()),
    );
}
