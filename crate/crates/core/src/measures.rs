//! Probability measures on the positive reals and their integrals.
//!
//! Every asymptotic formula in this crate is driven by one of three spectral
//! measures: the limiting spectral distribution of the feature covariance, the
//! limiting spectral distribution of the sketch Gram matrix S·Sᵀ, and the
//! eigenvector-weighted spectral distribution of the signal. Two variants
//! cover all uses: finitely many atoms, and the Marchenko–Pastur law.
//!
//! Discrete measures integrate exactly; Marchenko–Pastur integrals use
//! adaptive Gauss–Legendre quadrature after a sin² substitution that removes
//! the square-root vanishing of the density at the support endpoints. The
//! closed-form Stieltjes transform [`mp_stieltjes`] is provided as an
//! independent cross-check of the quadrature, not as the primary path.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Relative gap under which two atom locations are considered duplicates and
/// merged; keeps downstream root-finding away from ill-conditioned
/// near-duplicate poles.
const ATOM_MERGE_REL_TOL: f64 = 1e-12;

/// Largest deviation of an atom weight sum from 1 that is silently
/// renormalized; anything worse is rejected as a malformed measure.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Target relative accuracy of the adaptive Marchenko–Pastur quadrature.
const QUAD_REL_TOL: f64 = 1e-10;

/// Panel size of the Gauss–Legendre rule.
const GL_POINTS: usize = 256;

/// Hard cap on the adaptive bisection depth (2^12 panels of 256 points is far
/// beyond anything a smooth integrand needs).
const MAX_BISECT_DEPTH: u32 = 12;

/// A probability measure on the positive reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralMeasure {
    /// Finitely many atoms `(location, weight)`; locations are positive,
    /// weights are positive and sum to one.
    Discrete { atoms: Vec<(f64, f64)> },
    /// Marchenko–Pastur law with ratio `psi` in (0,1): density
    /// √((b−x)(x−a)) / (2πψx) on [a,b], a = (1−√ψ)², b = (1+√ψ)².
    #[serde(rename = "mp")]
    MarchenkoPastur { psi: f64 },
}

impl SpectralMeasure {
    /// Builds a discrete measure from `(location, weight)` pairs.
    ///
    /// Weights within `1e-9` of summing to one are renormalized; duplicate
    /// locations (relative gap below `1e-12`) are merged by weight addition.
    pub fn discrete(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("empty atom list".into()));
        }
        for &(x, w) in atoms {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidMeasure(format!("non-positive location {x}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidMeasure(format!("non-positive weight {w}")));
            }
        }
        let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let mut sorted: Vec<(f64, f64)> = atoms.iter().map(|&(x, w)| (x, w / total)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for (x, w) in sorted {
            match merged.last_mut() {
                Some(last) if (x - last.0).abs() <= ATOM_MERGE_REL_TOL * x.abs().max(last.0.abs()) => {
                    last.1 += w;
                }
                _ => merged.push((x, w)),
            }
        }
        Ok(SpectralMeasure::Discrete { atoms: merged })
    }

    /// The point mass at `location` (must be positive).
    pub fn point_mass(location: f64) -> Result<Self> {
        Self::discrete(&[(location, 1.0)])
    }

    /// Builds a Marchenko–Pastur law with ratio `psi` strictly inside (0,1).
    pub fn marchenko_pastur(psi: f64) -> Result<Self> {
        if !(psi.is_finite() && psi > 0.0 && psi < 1.0) {
            return Err(Error::InvalidMeasure(format!(
                "Marchenko-Pastur ratio {psi} outside (0,1)"
            )));
        }
        Ok(SpectralMeasure::MarchenkoPastur { psi })
    }

    /// Support of the measure as `(min, max)`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            SpectralMeasure::Discrete { atoms } => {
                // Constructors keep atoms sorted; recompute defensively for
                // directly constructed values.
                let lo = atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
                let hi = atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            SpectralMeasure::MarchenkoPastur { psi } => {
                let s = psi.sqrt();
                ((1.0 - s).powi(2), (1.0 + s).powi(2))
            }
        }
    }

    /// Largest point of the support.
    pub fn support_max(&self) -> f64 {
        self.support().1
    }

    /// Integrates `f` against the measure.
    ///
    /// Discrete measures evaluate the exact weighted sum. Marchenko–Pastur
    /// uses 256-point Gauss–Legendre panels, bisected adaptively until
    /// successive refinements agree to `1e-10` relative, after the
    /// substitution x = a + (b−a)·sin²θ.
    ///
    /// Fails if `f` is non-finite anywhere it is evaluated on the support.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        self.validate()?;
        match self {
            SpectralMeasure::Discrete { atoms } => {
                let mut total = 0.0;
                for &(x, w) in atoms {
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("integrand at atom {x}")));
                    }
                    total += w * v;
                }
                Ok(total)
            }
            SpectralMeasure::MarchenkoPastur { psi } => {
                let (a, b) = self.support();
                let width = b - a;
                let norm = width * width / (4.0 * std::f64::consts::PI * psi);
                // After x = a + (b−a)sin²θ the density and Jacobian combine to
                // a smooth integrand on [0, π/2]: f(x)·(b−a)²·sin²(2θ)/(4πψx).
                let g = |theta: f64| -> Result<f64> {
                    let s = theta.sin();
                    let x = a + width * s * s;
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("integrand at x={x}")));
                    }
                    let s2 = (2.0 * theta).sin();
                    Ok(v * norm * s2 * s2 / x)
                };
                let lo = 0.0;
                let hi = std::f64::consts::FRAC_PI_2;
                let whole = gl_panel(&g, lo, hi)?;
                adaptive_gl(&g, lo, hi, whole, 0)
            }
        }
    }

    /// Serializes to the canonical JSON form
    /// `{"kind":"discrete","atoms":[[x,w],…]}` or `{"kind":"mp","psi":ψ}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measure serialization is infallible")
    }

    /// Parses the canonical JSON form and validates the result.
    pub fn from_json(text: &str) -> Result<Self> {
        let measure: SpectralMeasure = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("measure JSON: {e}")))?;
        // Re-run the constructors so deserialized values get the same
        // normalization (sorting, merging) as directly built ones.
        match measure {
            SpectralMeasure::Discrete { atoms } => Self::discrete(&atoms),
            SpectralMeasure::MarchenkoPastur { psi } => Self::marchenko_pastur(psi),
        }
    }

    /// Checks the construction invariants; directly constructed enum values
    /// go through this before any integration.
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralMeasure::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidMeasure("empty atom list".into()));
                }
                let mut total = 0.0;
                for &(x, w) in atoms {
                    if !(x.is_finite() && x > 0.0) || !(w.is_finite() && w > 0.0) {
                        return Err(Error::InvalidMeasure(format!("bad atom ({x}, {w})")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidMeasure(format!(
                        "weights sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
            SpectralMeasure::MarchenkoPastur { psi } => {
                if !(psi.is_finite() && *psi > 0.0 && *psi < 1.0) {
                    return Err(Error::InvalidMeasure(format!("ratio {psi} outside (0,1)")));
                }
                Ok(())
            }
        }
    }
}

/// Stieltjes transform ∫ (x − z)⁻¹ dF_ψ(x) of the Marchenko–Pastur law at a
/// real point z < 0, standard branch (positive on the negative reals):
/// s(z) = (1 − ψ − z − √((z−1−ψ)² − 4ψ)) / (2ψz).
///
/// Serves as an independent cross-check of the quadrature path.
pub fn mp_stieltjes(psi: f64, z: f64) -> Result<f64> {
    if !(psi > 0.0 && psi < 1.0) {
        return Err(Error::Domain(format!("ratio {psi} outside (0,1)")));
    }
    if !(z < 0.0) {
        return Err(Error::Domain(format!("z = {z} not negative")));
    }
    let disc = (z - 1.0 - psi).powi(2) - 4.0 * psi;
    Ok((1.0 - psi - z - disc.sqrt()) / (2.0 * psi * z))
}

/// One 256-point Gauss–Legendre panel of `g` over `[lo, hi]`.
fn gl_panel(g: &impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    let (nodes, weights) = gl_nodes();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut acc = 0.0;
    for (&t, &w) in nodes.iter().zip(weights) {
        acc += w * g(mid + half * t)?;
    }
    Ok(acc * half)
}

/// Bisects panels until successive refinements agree to `QUAD_REL_TOL`.
fn adaptive_gl(
    g: &impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    whole: f64,
    depth: u32,
) -> Result<f64> {
    let mid = 0.5 * (lo + hi);
    let left = gl_panel(g, lo, mid)?;
    let right = gl_panel(g, mid, hi)?;
    let refined = left + right;
    if (refined - whole).abs() <= QUAD_REL_TOL * refined.abs().max(1.0) {
        Ok(refined)
    } else if depth >= MAX_BISECT_DEPTH {
        // Still disagreeing after bisecting this far means the integrand is
        // effectively singular on the panel; a silent value would be garbage.
        Err(Error::NonFinite(format!(
            "quadrature did not converge on [{lo}, {hi}]"
        )))
    } else {
        Ok(adaptive_gl(g, lo, mid, left, depth + 1)? + adaptive_gl(g, mid, hi, right, depth + 1)?)
    }
}

fn gl_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(GL_POINTS))
}

/// Nodes and weights of the k-point Gauss–Legendre rule on [−1,1]: Newton
/// iteration on P_k from the Chebyshev initial guess.
fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(k, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(k, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial P_k at `x` (Bonnet
/// recurrence; derivative from the standard identity, valid for |x| < 1).
fn legendre(k: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut curr) = (1.0, x);
    for j in 2..=k {
        let jf = j as f64;
        let next = ((2.0 * jf - 1.0) * x * curr - (jf - 1.0) * prev) / jf;
        prev = curr;
        curr = next;
    }
    let dp = k as f64 * (x * curr - prev) / (x * x - 1.0);
    (curr, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn point_mass_is_single_atom() {
        let d = SpectralMeasure::point_mass(1.0).unwrap();
        assert_eq!(d, SpectralMeasure::Discrete { atoms: vec![(1.0, 1.0)] });
    }

    #[test]
    fn two_atom_spectrum_keeps_both_atoms() {
        let m = SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).unwrap();
        // Sorted ascending by location.
        assert_eq!(m, SpectralMeasure::Discrete { atoms: vec![(1.0, 0.5), (2.0, 0.5)] });
    }

    #[test]
    fn duplicate_locations_merge() {
        let m = SpectralMeasure::discrete(&[(1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(m, SpectralMeasure::Discrete { atoms: vec![(1.0, 1.0)] });
    }

    #[test]
    fn near_duplicate_locations_merge() {
        let x = 1.0;
        let m = SpectralMeasure::discrete(&[(x, 0.25), (x * (1.0 + 1e-13), 0.75)]).unwrap();
        match m {
            SpectralMeasure::Discrete { atoms } => {
                assert_eq!(atoms.len(), 1);
                assert_relative_eq!(atoms[0].1, 1.0, max_relative = 1e-15);
            }
            _ => panic!("expected discrete"),
        }
    }

    #[test]
    fn weights_renormalize_within_tolerance() {
        let m = SpectralMeasure::discrete(&[(1.0, 0.5 + 2e-10), (2.0, 0.5)]).unwrap();
        assert_relative_eq!(m.integrate(|_| 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(SpectralMeasure::discrete(&[]).is_err());
        assert!(SpectralMeasure::discrete(&[(0.0, 1.0)]).is_err());
        assert!(SpectralMeasure::discrete(&[(-1.0, 1.0)]).is_err());
        assert!(SpectralMeasure::discrete(&[(1.0, 0.0)]).is_err());
        assert!(SpectralMeasure::discrete(&[(1.0, 0.9)]).is_err());
        assert!(SpectralMeasure::discrete(&[(1.0, -0.5), (2.0, 1.5)]).is_err());
    }

    #[test]
    fn rejects_bad_mp_ratio() {
        assert!(SpectralMeasure::marchenko_pastur(0.0).is_err());
        assert!(SpectralMeasure::marchenko_pastur(1.0).is_err());
        assert!(SpectralMeasure::marchenko_pastur(-0.2).is_err());
        assert!(SpectralMeasure::marchenko_pastur(1.7).is_err());
        assert!(SpectralMeasure::marchenko_pastur(f64::NAN).is_err());
    }

    #[test]
    fn mp_support_endpoints() {
        let m = SpectralMeasure::marchenko_pastur(0.5).unwrap();
        let (a, b) = m.support();
        assert_relative_eq!(a, 0.08578643762690492, epsilon = 1e-15);
        assert_relative_eq!(b, 2.914213562373095, epsilon = 1e-15);
    }

    #[test]
    fn discrete_integration_is_exact() {
        let m = SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(m.integrate(|x| x).unwrap(), 1.5);
        let d = SpectralMeasure::point_mass(1.0).unwrap();
        assert_eq!(d.integrate(|x| x * x).unwrap(), 1.0);
    }

    #[test]
    fn mp_total_mass_and_moments() {
        for &psi in &[0.1, 0.25, 0.5, 0.8, 0.95] {
            let m = SpectralMeasure::marchenko_pastur(psi).unwrap();
            assert_relative_eq!(m.integrate(|_| 1.0).unwrap(), 1.0, epsilon = 1e-8);
            assert_relative_eq!(m.integrate(|x| x).unwrap(), 1.0, epsilon = 1e-8);
            // Second moment of the law is 1 + ψ.
            assert_relative_eq!(
                m.integrate(|x| x * x).unwrap(),
                1.0 + psi,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn mp_quadrature_matches_stieltjes_closed_form() {
        let m = SpectralMeasure::marchenko_pastur(0.5).unwrap();
        let by_quad = m.integrate(|x| 1.0 / (x + 1.0)).unwrap();
        let closed = mp_stieltjes(0.5, -1.0).unwrap();
        assert_relative_eq!(closed, 0.5615528128088303, epsilon = 1e-14);
        assert_relative_eq!(by_quad, closed, epsilon = 1e-8);
        // A second point away from the support.
        for &(psi, z) in &[(0.3, -0.5), (0.7, -2.5), (0.9, -0.1)] {
            let m = SpectralMeasure::marchenko_pastur(psi).unwrap();
            let q = m.integrate(|x| 1.0 / (x - z)).unwrap();
            assert_relative_eq!(q, mp_stieltjes(psi, z).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn stieltjes_positive_on_negative_reals() {
        for &psi in &[0.1, 0.5, 0.9] {
            for &z in &[-10.0, -1.0, -0.01] {
                assert!(mp_stieltjes(psi, z).unwrap() > 0.0);
            }
        }
        assert!(mp_stieltjes(0.5, 0.5).is_err());
        assert!(mp_stieltjes(1.2, -1.0).is_err());
    }

    #[test]
    fn non_finite_integrand_is_signalled() {
        let d = SpectralMeasure::point_mass(1.0).unwrap();
        assert!(matches!(d.integrate(|x| (x - 1.0).recip()), Err(Error::NonFinite(_))));
        let m = SpectralMeasure::marchenko_pastur(0.5).unwrap();
        assert!(m.integrate(|x| 1.0 / (x - 1.0)).is_err());
    }

    #[test]
    fn directly_constructed_invalid_measure_fails_validation() {
        let bad = SpectralMeasure::Discrete { atoms: vec![(1.0, 0.25)] };
        assert!(bad.integrate(|x| x).is_err());
        let bad_mp = SpectralMeasure::MarchenkoPastur { psi: 1.5 };
        assert!(bad_mp.integrate(|x| x).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = SpectralMeasure::discrete(&[(2.0, 0.5), (1.0, 0.5)]).unwrap();
        let text = m.to_json();
        assert_eq!(text, r#"{"kind":"discrete","atoms":[[1.0,0.5],[2.0,0.5]]}"#);
        assert_eq!(SpectralMeasure::from_json(&text).unwrap(), m);

        let mp = SpectralMeasure::marchenko_pastur(0.5).unwrap();
        let text = mp.to_json();
        assert_eq!(text, r#"{"kind":"mp","psi":0.5}"#);
        assert_eq!(SpectralMeasure::from_json(&text).unwrap(), mp);

        assert!(SpectralMeasure::from_json(r#"{"kind":"mp","psi":1.5}"#).is_err());
        assert!(SpectralMeasure::from_json("not json").is_err());
    }

    #[test]
    fn gauss_legendre_small_rule_is_exact_for_polynomials() {
        // A k-point rule integrates degree ≤ 2k−1 exactly; spot-check k=256
        // against monomials on [−1,1].
        let (nodes, weights) = gl_nodes();
        let int_x2: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * x * x)
            .sum();
        assert_relative_eq!(int_x2, 2.0 / 3.0, epsilon = 1e-13);
        let int_x8: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * x.powi(8))
            .sum();
        assert_relative_eq!(int_x8, 2.0 / 9.0, epsilon = 1e-13);
        let total: f64 = weights.iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-13);
    }
}
