//! Checks that exact finite-sample risks at n = 400 already sit close to
//! their asymptotic limits, for both sketch families, both regimes, and both
//! an isotropic and a two-point covariance spectrum.
//!
//! Tolerances are loose (single instance, no replication averaging): the
//! point is to catch structurally wrong limit formulas, not to re-prove
//! convergence rates.

use nalgebra::DVector;
use sketched_ridgeless::estimator::{exact_integrated_bias, exact_variance};
use sketched_ridgeless::measures::SpectralMeasure;
use sketched_ridgeless::model::{covariance_eigs, sample_design, SigmaSpec};
use sketched_ridgeless::sketch::{SketchKind, SketchOperator, SketchSpec};
use sketched_ridgeless::theory::{limit_for, SketchFamily};

fn single_instance_gap(kind: SketchKind, family: SketchFamily, h: &SpectralMeasure, psi: f64) {
    let n = 400usize;
    let p = 200usize;
    let m = (psi * n as f64).round() as usize;
    let (alpha, sigma) = (5.0f64, 5.0f64);
    let phi = p as f64 / n as f64;

    let eigs = covariance_eigs(&SigmaSpec::Spectrum(h.clone()), p).unwrap();
    let x = sample_design(n, &eigs, 2024);
    let s = SketchOperator::from_spec(&SketchSpec { kind, m, n, seed: 11 }).unwrap();
    let exact = exact_integrated_bias(&s, &x, &eigs, alpha).unwrap()
        + exact_variance(&s, &x, &eigs, sigma).unwrap();

    let limit = limit_for(h, family, phi, m as f64 / n as f64, alpha, sigma).unwrap();
    let rel = (exact - limit.risk).abs() / limit.risk;
    assert!(
        rel <= 0.10,
        "{:?} psi = {psi}: exact {exact:.4} vs limit {:.4} (rel {rel:.4})",
        kind,
        limit.risk
    );
}

fn isotropic() -> SpectralMeasure {
    SpectralMeasure::point_mass(1.0).unwrap()
}

fn two_atom() -> SpectralMeasure {
    SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).unwrap()
}

#[test]
fn haar_isotropic_over() {
    single_instance_gap(SketchKind::HaarOrthogonal, SketchFamily::Orthogonal, &isotropic(), 0.25);
}

#[test]
fn haar_isotropic_under() {
    single_instance_gap(SketchKind::HaarOrthogonal, SketchFamily::Orthogonal, &isotropic(), 0.75);
}

#[test]
fn haar_two_atom_over() {
    single_instance_gap(SketchKind::HaarOrthogonal, SketchFamily::Orthogonal, &two_atom(), 0.25);
}

#[test]
fn haar_two_atom_under() {
    single_instance_gap(SketchKind::HaarOrthogonal, SketchFamily::Orthogonal, &two_atom(), 0.75);
}

#[test]
fn iid_isotropic_over() {
    single_instance_gap(SketchKind::IidGaussian, SketchFamily::Iid, &isotropic(), 0.25);
}

#[test]
fn iid_isotropic_under() {
    single_instance_gap(SketchKind::IidGaussian, SketchFamily::Iid, &isotropic(), 0.75);
}

#[test]
fn iid_two_atom_over() {
    single_instance_gap(SketchKind::IidGaussian, SketchFamily::Iid, &two_atom(), 0.25);
}

#[test]
fn iid_two_atom_under() {
    single_instance_gap(SketchKind::IidGaussian, SketchFamily::Iid, &two_atom(), 0.75);
}

/// Zero-padding 400 → 512 makes the SRHT gram S·Sᵀ a projected corner of an
/// orthogonal matrix rather than the identity, so the right under-regime
/// limit uses the empirical gram spectrum, not a point mass at 1.
#[test]
fn srht_under_matches_empirical_gram_limit() {
    let n = 400usize;
    let p = 200usize;
    let m = 300usize;
    let sigma = 5.0f64;
    let phi = p as f64 / n as f64;
    let psi = m as f64 / n as f64;

    let eigs = DVector::from_element(p, 1.0);
    let x = sample_design(n, &eigs, 2024);
    let s = SketchOperator::from_spec(&SketchSpec { kind: SketchKind::Srht, m, n, seed: 11 })
        .unwrap();
    let exact = exact_integrated_bias(&s, &x, &eigs, 5.0).unwrap()
        + exact_variance(&s, &x, &eigs, sigma).unwrap();

    let gram_eigs = nalgebra::SymmetricEigen::new(s.gram()).eigenvalues;
    let b_hat = sketched_ridgeless::model::esd(&gram_eigs).unwrap();
    let corrected = sketched_ridgeless::theory::under_variance(&b_hat, phi, psi, sigma).unwrap();

    let rel = (exact - corrected.risk).abs() / corrected.risk;
    assert!(
        rel <= 0.10,
        "exact {exact:.4} vs gram-spectrum limit {:.4} (rel {rel:.4})",
        corrected.risk
    );
}

/// In the over-parameterized regime the limit does not depend on the sketch
/// family at all, so padded SRHT should match it like the others.
#[test]
fn srht_two_atom_over() {
    single_instance_gap(SketchKind::Srht, SketchFamily::Orthogonal, &two_atom(), 0.25);
}
