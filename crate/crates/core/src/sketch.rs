//! Sketching operators S ∈ R^{m×n} and their application to data.
//!
//! Three constructions are provided:
//! - Haar-orthogonal: the first m rows of a Haar-distributed n×n orthogonal
//!   matrix, built by orthonormalizing a Gaussian matrix with the
//!   positive-diagonal sign convention. Exactly orthogonal for every n.
//! - Subsampled randomized Hadamard transform: S = B·H·D·P with B sampling m
//!   rows without replacement, H the normalized Sylvester–Hadamard matrix, D a
//!   Rademacher diagonal, and P a uniform permutation. Applied implicitly via
//!   the fast Walsh–Hadamard transform; inputs whose row count is not a power
//!   of two are zero-padded, in which case the effective operator on the
//!   original rows is only approximately orthogonal.
//! - i.i.d. Gaussian: dense entries drawn from N(0, 1/n).
//!
//! Operators are immutable after construction, pure functions of
//! `(kind, m, n, seed)`, and safe to use from any number of threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entrywise deviation of S·Sᵀ from the identity below which an operator is
/// treated as exactly orthogonal by downstream fast paths.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// The family a sketching operator belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SketchKind {
    /// First m rows of a Haar-distributed orthogonal matrix.
    #[serde(rename = "haar")]
    HaarOrthogonal,
    /// Subsampled randomized Hadamard transform.
    #[serde(rename = "srht")]
    Srht,
    /// Dense i.i.d. N(0, 1/n) entries.
    #[serde(rename = "iid")]
    IidGaussian,
}

impl SketchKind {
    /// Stable lowercase name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            SketchKind::HaarOrthogonal => "haar",
            SketchKind::Srht => "srht",
            SketchKind::IidGaussian => "iid",
        }
    }
}

/// Serializable description of an operator; the dense realization is always
/// rebuilt from this, never serialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

/// A realized m×n sketching operator.
#[derive(Clone, Debug)]
pub struct SketchOperator {
    kind: SketchKind,
    m: usize,
    n: usize,
    seed: u64,
    repr: Repr,
}

#[derive(Clone, Debug)]
enum Repr {
    /// Explicit matrix (Haar, i.i.d. Gaussian).
    Dense(DMatrix<f64>),
    /// The identity operator (tests and no-sketch baselines).
    Identity,
    /// Implicit fast-transform state for the subsampled randomized Hadamard
    /// transform over the padded dimension.
    Srht {
        /// Padded dimension: next power of two ≥ n.
        padded: usize,
        /// Rademacher diagonal over the padded dimension.
        signs: Vec<f64>,
        /// Permutation of 0..padded applied first: out[i] = in[perm[i]].
        perm: Vec<usize>,
        /// m distinct rows sampled without replacement from 0..padded.
        rows: Vec<usize>,
    },
}

/// Independent RNG sub-stream `stream` of `seed`; components of a composite
/// operator draw from separate streams so each is reproducible on its own.
fn sub_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_shape(m: usize, n: usize) -> Result<()> {
    if m < 1 || n < 1 {
        return Err(Error::InvalidSketch(format!("sizes must be positive, got {m}x{n}")));
    }
    if m > n {
        return Err(Error::InvalidSketch(format!("m = {m} exceeds n = {n}")));
    }
    Ok(())
}

impl SketchOperator {
    /// First m rows of a Haar-distributed n×n orthogonal matrix: QR of an n×m
    /// standard Gaussian matrix, with column signs fixed so the triangular
    /// factor has a positive diagonal (making the factorization, and hence
    /// the law, unique).
    pub fn haar(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_shape(m, n)?;
        let mut rng = sub_rng(seed, 0);
        let g = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..m {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Ok(SketchOperator {
            kind: SketchKind::HaarOrthogonal,
            m,
            n,
            seed,
            repr: Repr::Dense(q.transpose()),
        })
    }

    /// Subsampled randomized Hadamard transform S = B·H·D·P over the padded
    /// dimension N = next power of two ≥ n. Application costs O(N·p·log N)
    /// per sketch via the fast Walsh–Hadamard transform.
    pub fn srht(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_shape(m, n)?;
        let padded = n.next_power_of_two();

        // Rademacher diagonal D.
        let mut rng = sub_rng(seed, 1);
        let signs: Vec<f64> = (0..padded)
            .map(|_| if rng.next_u32() & 1 == 0 { 1.0 } else { -1.0 })
            .collect();

        // Uniform permutation P (Fisher–Yates).
        let mut rng = sub_rng(seed, 2);
        let mut perm: Vec<usize> = (0..padded).collect();
        for i in (1..padded).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }

        // Row sample B: m of 0..padded without replacement (partial shuffle).
        let mut rng = sub_rng(seed, 3);
        let mut pool: Vec<usize> = (0..padded).collect();
        for i in 0..m {
            let j = rng.random_range(i..padded);
            pool.swap(i, j);
        }
        let rows = pool[..m].to_vec();

        Ok(SketchOperator {
            kind: SketchKind::Srht,
            m,
            n,
            seed,
            repr: Repr::Srht { padded, signs, perm, rows },
        })
    }

    /// Dense m×n matrix of i.i.d. N(0, 1/n) entries (column-major fill order).
    pub fn iid_gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_shape(m, n)?;
        let mut rng = sub_rng(seed, 0);
        let scale = 1.0 / (n as f64).sqrt();
        let entries = (0..m * n).map(|_| scale * rng.sample::<f64, _>(StandardNormal));
        let s = DMatrix::from_iterator(m, n, entries);
        Ok(SketchOperator { kind: SketchKind::IidGaussian, m, n, seed, repr: Repr::Dense(s) })
    }

    /// The identity operator on n rows; a deterministic stand-in used by
    /// tests and no-sketch baselines.
    pub fn identity(n: usize) -> Self {
        SketchOperator {
            kind: SketchKind::HaarOrthogonal,
            m: n,
            n,
            seed: 0,
            repr: Repr::Identity,
        }
    }

    /// Rebuilds the operator described by `spec`.
    pub fn from_spec(spec: &SketchSpec) -> Result<Self> {
        match spec.kind {
            SketchKind::HaarOrthogonal => Self::haar(spec.m, spec.n, spec.seed),
            SketchKind::Srht => Self::srht(spec.m, spec.n, spec.seed),
            SketchKind::IidGaussian => Self::iid_gaussian(spec.m, spec.n, spec.seed),
        }
    }

    /// The serializable description of this operator.
    pub fn spec(&self) -> SketchSpec {
        SketchSpec { kind: self.kind, m: self.m, n: self.n, seed: self.seed }
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Applies the sketch to a dataset: returns (S·X, S·Y).
    pub fn apply(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, sketch expects {}",
                y.len(),
                self.n
            )));
        }
        Ok((self.apply_matrix(x)?, self.apply_vector_checked(y)))
    }

    /// Applies the sketch to a matrix with n rows: returns S·X.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, sketch expects {}",
                x.nrows(),
                self.n
            )));
        }
        match &self.repr {
            Repr::Dense(s) => Ok(s * x),
            Repr::Identity => Ok(x.clone()),
            Repr::Srht { .. } => {
                let mut out = DMatrix::zeros(self.m, x.ncols());
                let mut buf = vec![0.0; self.padded_len()];
                for j in 0..x.ncols() {
                    let col = self.srht_column(x.column(j).iter().copied(), &mut buf);
                    for (i, v) in col.iter().enumerate() {
                        out[(i, j)] = *v;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Applies the sketch to a vector with n entries: returns S·y.
    pub fn apply_vector(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, sketch expects {}",
                y.len(),
                self.n
            )));
        }
        Ok(self.apply_vector_checked(y))
    }

    fn apply_vector_checked(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Dense(s) => s * y,
            Repr::Identity => y.clone(),
            Repr::Srht { .. } => {
                let mut buf = vec![0.0; self.padded_len()];
                DVector::from_vec(self.srht_column(y.iter().copied(), &mut buf))
            }
        }
    }

    fn padded_len(&self) -> usize {
        match &self.repr {
            Repr::Srht { padded, .. } => *padded,
            _ => self.n,
        }
    }

    /// Fast path for one column: zero-pad, permute, apply signs, run the
    /// Walsh–Hadamard butterfly, normalize, subsample rows.
    fn srht_column(&self, col: impl Iterator<Item = f64>, buf: &mut [f64]) -> Vec<f64> {
        let Repr::Srht { padded, signs, perm, rows } = &self.repr else {
            unreachable!("srht_column called on non-SRHT operator");
        };
        let mut input = vec![0.0; *padded];
        for (i, v) in col.enumerate() {
            input[i] = v;
        }
        for i in 0..*padded {
            buf[i] = signs[i] * input[perm[i]];
        }
        fwht(buf);
        let norm = 1.0 / (*padded as f64).sqrt();
        rows.iter().map(|&r| buf[r] * norm).collect()
    }

    /// Materializes the dense m×n matrix (columns are S·e_j).
    pub fn dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(s) => s.clone(),
            Repr::Identity => DMatrix::identity(self.m, self.n),
            Repr::Srht { .. } => {
                let mut out = DMatrix::zeros(self.m, self.n);
                let mut buf = vec![0.0; self.padded_len()];
                for j in 0..self.n {
                    let e_j = (0..self.n).map(|i| if i == j { 1.0 } else { 0.0 });
                    let col = self.srht_column(e_j, &mut buf);
                    for (i, v) in col.iter().enumerate() {
                        out[(i, j)] = *v;
                    }
                }
                out
            }
        }
    }

    /// The m×m Gram matrix S·Sᵀ.
    pub fn gram(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Identity => DMatrix::identity(self.m, self.m),
            _ => {
                let s = self.dense();
                &s * s.transpose()
            }
        }
    }

    /// Entrywise max deviation of S·Sᵀ from the identity.
    pub fn gram_deviation(&self) -> f64 {
        match &self.repr {
            Repr::Identity => 0.0,
            _ => {
                let g = self.gram();
                let mut dev: f64 = 0.0;
                for i in 0..self.m {
                    for j in 0..self.m {
                        let target = if i == j { 1.0 } else { 0.0 };
                        dev = dev.max((g[(i, j)] - target).abs());
                    }
                }
                dev
            }
        }
    }
}

/// In-place unnormalized fast Walsh–Hadamard transform; length must be a
/// power of two.
fn fwht(x: &mut [f64]) {
    let n = x.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(h * 2) {
            for j in i..i + h {
                let (a, b) = (x[j], x[j + h]);
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
        h *= 2;
    }
}
