//! Hermitian solves with a documented near-singularity policy.

use nalgebra::Cholesky;

use crate::types::{C64, CMat, CVec};
use crate::{Error, Result};

/// Behavior when a Hermitian system is not positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnSingular {
    /// Fail with a diagnostic. Used where singularity signals a modeling
    /// error (e.g. zero-noise MMSE combining of rank-deficient signals).
    Error,
    /// Retry with diagonal loading `ε = 1e-12 · trace/n`, escalating by
    /// ×100 up to three times before failing.
    Load,
}

/// Cached Cholesky factorization of a Hermitian positive-(semi)definite
/// matrix, reusable across right-hand sides.
pub struct HermitianSolver {
    chol: Cholesky<C64, nalgebra::Dyn>,
    /// Diagonal load that was actually applied (0 when none).
    pub loading: f64,
}

impl HermitianSolver {
    pub fn new(a: CMat, on_singular: OnSingular) -> Result<Self> {
        debug_assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self { chol, loading: 0.0 });
        }
        if on_singular == OnSingular::Error {
            return Err(Error::Numerical(
                "matrix is not positive definite (singular system)".into(),
            ));
        }
        let trace: f64 = (0..n).map(|i| a[(i, i)].re).sum();
        let scale = if trace > 0.0 { trace / n as f64 } else { 1.0 };
        let mut eps = 1e-12 * scale;
        for _ in 0..4 {
            let mut loaded = a.clone();
            for i in 0..n {
                loaded[(i, i)] += C64::new(eps, 0.0);
            }
            if let Some(chol) = Cholesky::new(loaded) {
                return Ok(Self { chol, loading: eps });
            }
            eps *= 100.0;
        }
        Err(Error::Numerical(
            "matrix stayed singular after diagonal loading".into(),
        ))
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        self.chol.solve(b)
    }
}

/// One-shot Hermitian solve `a x = b`.
pub fn solve_hermitian(a: CMat, b: &CVec, on_singular: OnSingular) -> Result<CVec> {
    Ok(HermitianSolver::new(a, on_singular)?.solve_vec(b))
}

/// `Re⟨x, y⟩ = Re(x^H y)`, the real inner product on C^n viewed as R^{2n}.
pub fn re_inner(x: &CVec, y: &CVec) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Rank-one Hermitian accumulation `a += c · v v^H`.
pub fn add_outer(a: &mut CMat, v: &CVec, c: f64) {
    let n = v.len();
    debug_assert_eq!(a.nrows(), n);
    for j in 0..n {
        let vj = v[j].conj() * c;
        for i in 0..n {
            a[(i, j)] += v[i] * vj;
        }
    }
}
