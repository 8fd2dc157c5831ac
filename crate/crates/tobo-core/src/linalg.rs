//! Dense symmetric linear algebra helpers shared by the surrogate models:
//! Cholesky with a jitter ladder, log-determinants, spectral norms.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::numerical_err;
use crate::Result;

/// Jitter ladder added to the diagonal when a factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-6, 1e-4];

/// A Cholesky factorization obtained after at most the full jitter ladder.
pub struct SymFactor {
    chol: Cholesky<f64, Dyn>,
    /// Jitter that was actually added to the diagonal (0.0 if none).
    pub jitter: f64,
}

impl SymFactor {
    /// Factorizes a symmetric positive (semi-)definite matrix, escalating
    /// through the jitter ladder on failure.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = Cholesky::new(mat.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let n = mat.nrows();
        for &jit in &JITTER_LADDER {
            let mut jittered = mat.clone();
            for i in 0..n {
                jittered[(i, i)] += jit;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(Self { chol, jitter: jit });
            }
        }
        Err(numerical_err(format!(
            "Cholesky failed on a {n}x{n} matrix after jitter up to {:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Explicit inverse; used by the likelihood gradient where every
    /// hyperparameter needs `tr(S^{-1} dS)`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower-triangular factor `L` with `L L^T` equal to the (jittered)
    /// matrix.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log det` of the factorized matrix (including any jitter).
    pub fn log_det(&self) -> f64 {
        use num_traits::Float;
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|&d| Float::ln(d))
            .sum::<f64>()
    }
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn sym_eigenvalues(mat: &DMatrix<f64>) -> Vec<f64> {
    let eig = mat.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

/// Largest eigenvalue of a symmetric PSD matrix, clamped at zero.
pub fn spectral_norm_psd(mat: &DMatrix<f64>) -> f64 {
    let eig = mat.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |acc, &v| acc.max(v))
}

/// Checks symmetry within `tol` (max absolute asymmetry).
pub fn max_asymmetry(mat: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            worst = worst.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    worst
}

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// Kronecker product, row/column blocks indexed by the first factor.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn factor_solves_and_logdet() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SymFactor::new(m.clone()).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert_abs_diff_eq!(f.log_det(), (4.0f64 * 3.0 - 1.0).ln(), epsilon = 1e-12);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let x = f.solve_vec(&b);
        let back = &m * &x;
        assert_abs_diff_eq!(back[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn jitter_ladder_rescues_semidefinite() {
        // Rank-1 PSD matrix: exact Cholesky fails, jitter succeeds.
        let v = DVector::from_column_slice(&[1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let f = SymFactor::new(m).unwrap();
        assert!(f.jitter > 0.0);
    }

    #[test]
    fn spectral_norm_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(spectral_norm_psd(&m), 4.0, epsilon = 1e-12);
    }
}
