//! Properties of the optimal sketch-size selection: the closed-form choice
//! really minimizes the limiting risk, never loses to the full-sample
//! estimator, and agrees with brute-force grid search.

use sketched_ridgeless::measures::SpectralMeasure;
use sketched_ridgeless::theory::{full_sample_limit, isotropic_limit, SketchFamily};
use sketched_ridgeless::tuning::{optimal_m_closed, optimal_m_grid, SizeCase};

const N: usize = 4000;

fn phi_values() -> Vec<f64> {
    // Geometric sweep over [0.1, 10] avoiding the interpolation threshold.
    (0..40)
        .map(|i| 0.1 * 100f64.powf(i as f64 / 39.0))
        .filter(|phi| (phi - 1.0).abs() > 0.05)
        .collect()
}

/// Risk of the closed-form choice, evaluated through the independent limit
/// calculators rather than the value the tuner reports.
fn risk_at(m: usize, phi: f64, alpha: f64, sigma: f64) -> f64 {
    if m == 0 {
        return alpha * alpha;
    }
    let psi = m as f64 / N as f64;
    if psi >= 1.0 {
        return full_sample_limit(phi, alpha, sigma).unwrap().risk;
    }
    isotropic_limit(SketchFamily::Orthogonal, phi, psi, alpha, sigma)
        .map(|l| l.risk)
        .unwrap_or(f64::INFINITY)
}

#[test]
fn closed_choice_never_loses_to_full_sample() {
    for &(alpha, sigma) in &[(3.0, 4.0), (6.0, 2.0), (2.0, 1.0), (1.0, 3.0)] {
        for phi in phi_values() {
            let choice = optimal_m_closed(alpha, sigma, phi, N).unwrap();
            let full = full_sample_limit(phi, alpha, sigma).unwrap().risk;
            assert!(
                choice.attained_risk <= full + 1e-9,
                "alpha {alpha} sigma {sigma} phi {phi:.3}: m* risk {} > full {full}",
                choice.attained_risk
            );
        }
    }
}

#[test]
fn closed_risk_matches_independent_evaluation() {
    for &(alpha, sigma) in &[(3.0, 4.0), (6.0, 2.0), (1.0, 3.0)] {
        for phi in phi_values() {
            let choice = optimal_m_closed(alpha, sigma, phi, N).unwrap();
            let re_evaluated = risk_at(choice.m_star, phi, alpha, sigma);
            // ⌊ψ*n⌋ rounding moves the attained risk by O(1/n).
            assert!(
                (re_evaluated - choice.attained_risk).abs()
                    <= 1e-6 * choice.attained_risk.max(1.0) + 2e-2,
                "phi {phi:.3}: reported {} vs re-evaluated {re_evaluated}",
                choice.attained_risk
            );
        }
    }
}

#[test]
fn closed_choice_beats_every_grid_point() {
    let delta = 0.02;
    for &(alpha, sigma) in &[(3.0, 4.0), (6.0, 2.0)] {
        for phi in phi_values() {
            let choice = optimal_m_closed(alpha, sigma, phi, N).unwrap();
            let steps = (1.0 / delta) as usize;
            for i in 1..=steps {
                let m = ((i as f64 * delta) * N as f64).floor() as usize;
                assert!(
                    choice.attained_risk <= risk_at(m, phi, alpha, sigma) + 2e-2,
                    "phi {phi:.3}: grid m = {m} beats closed m* = {}",
                    choice.m_star
                );
            }
        }
    }
}

#[test]
fn grid_search_matches_closed_form_isotropic() {
    let h = SpectralMeasure::point_mass(1.0).unwrap();
    for &(alpha, sigma) in &[(5.0, 5.0), (6.0, 2.0)] {
        for &phi in &[0.3, 0.5, 0.8, 1.5, 3.0] {
            let closed = optimal_m_closed(alpha, sigma, phi, N).unwrap();
            let grid =
                optimal_m_grid(&h, SketchFamily::Orthogonal, alpha, sigma, phi, N, 0.005).unwrap();
            let dm = (closed.m_star as i64 - grid.m_star as i64).unsigned_abs() as usize;
            assert!(
                dm <= (0.005 * N as f64) as usize + 1,
                "phi {phi}: closed {} vs grid {}",
                closed.m_star,
                grid.m_star
            );
            assert!(
                (closed.attained_risk - grid.attained_risk).abs()
                    <= 0.01 * closed.attained_risk.max(1.0)
            );
        }
    }
}

#[test]
fn null_estimator_when_noise_dominates() {
    // SNR ≤ 1 and φ large: fitting is worse than predicting zero.
    let choice = optimal_m_closed(1.0, 3.0, 5.0, N).unwrap();
    assert_eq!(choice.m_star, 0);
    assert_eq!(choice.case, SizeCase::NullEstimator);
    assert!((choice.attained_risk - 1.0).abs() <= 1e-12);
}
