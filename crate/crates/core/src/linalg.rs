//! Dense symmetric linear algebra: the cyclic Jacobi eigensolver behind
//! [`SymmetricOperator`], plus the handful of matrix helpers the rest of the
//! crate needs (operator norm, Cholesky, least squares).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on `off(A) / ||A||_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;
/// Relative tolerance used when deciding that two eigenvector entries tie for
/// the largest magnitude.
const SIGN_TIE_REL_TOL: f64 = 1e-9;

/// A real symmetric matrix together with its eigendecomposition
/// `A = U diag(lambda) U^T`, eigenvalues sorted in descending order.
///
/// The decomposition is computed once at construction and never mutated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetricOperator {
    entries: Array2<f64>,
    eigvecs: Array2<f64>,
    eigvals: Array1<f64>,
}

impl SymmetricOperator {
    /// Symmetrizes `matrix` as `(A + A^T) / 2` and eigendecomposes it.
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        eigendecompose(matrix.view())
    }

    /// Builds an operator from a known orthonormal basis and spectrum. The
    /// entries are recomposed as `U diag(lambda) U^T`; eigenpairs are sorted
    /// descending but signs are taken as given.
    pub fn from_spectrum(eigvecs: Array2<f64>, eigvals: Array1<f64>) -> Result<Self> {
        let m = eigvals.len();
        if eigvecs.dim() != (m, m) {
            return Err(Error::DimensionError { expected: m, got: eigvecs.nrows() });
        }
        if eigvals.iter().chain(eigvecs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite spectrum".into()));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]).then(a.cmp(&b)));
        let vals = Array1::from_iter(order.iter().map(|&i| eigvals[i]));
        let mut vecs = Array2::zeros((m, m));
        for (dst, &src) in order.iter().enumerate() {
            vecs.column_mut(dst).assign(&eigvecs.column(src));
        }
        let scaled = &vecs * &vals;
        let mut entries = scaled.dot(&vecs.t());
        symmetrize_in_place(&mut entries);
        Ok(Self { entries, eigvecs: vecs, eigvals: vals })
    }

    pub(crate) fn from_parts_unchecked(entries: Array2<f64>, eigvecs: Array2<f64>, eigvals: Array1<f64>) -> Self {
        Self { entries, eigvecs, eigvals }
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Orthonormal eigenvectors as columns, ordered to match [`Self::eigvals`].
    pub fn eigvecs(&self) -> &Array2<f64> {
        &self.eigvecs
    }

    /// Eigenvalues in descending order.
    pub fn eigvals(&self) -> &Array1<f64> {
        &self.eigvals
    }

    /// Largest eigenvalue magnitude, i.e. the spectral norm.
    pub fn spectral_radius(&self) -> f64 {
        self.eigvals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// `U diag(lambda) U^T`.
    pub fn recompose(&self) -> Array2<f64> {
        let scaled = &self.eigvecs * &self.eigvals;
        scaled.dot(&self.eigvecs.t())
    }
}

fn symmetrize_in_place(a: &mut Array2<f64>) {
    let m = a.nrows();
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized first. Iteration stops once the Frobenius norm of
/// the off-diagonal part falls below `1e-12 * ||A||_F`, or fails after
/// [`JACOBI_MAX_SWEEPS`] sweeps. Eigenpairs come back sorted by descending
/// eigenvalue (ties keep the original diagonal order) and each eigenvector is
/// oriented so that its largest-magnitude entry is positive, the lowest index
/// winning ties.
pub fn eigendecompose(matrix: ArrayView2<'_, f64>) -> Result<SymmetricOperator> {
    let (rows, cols) = matrix.dim();
    if rows != cols {
        return Err(Error::InvalidMatrix(format!("not square: {rows}x{cols}")));
    }
    if rows == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    let m = rows;
    let mut entries = matrix.to_owned();
    symmetrize_in_place(&mut entries);

    // Row-major scratch copies; the rotation loops are index-heavy and this
    // keeps them free of bounds-check overhead from 2-D indexing.
    let mut a: Vec<f64> = entries.iter().copied().collect();
    let mut v = vec![0.0; m * m];
    for i in 0..m {
        v[i * m + i] = 1.0;
    }

    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = JACOBI_REL_TOL * frob;
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    s += a[i * m + j] * a[i * m + j];
                }
            }
        }
        s.sqrt()
    };

    let mut off = off_norm(&a);
    let mut sweeps = 0;
    while off > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::EigenNoConvergence { sweeps, off_norm: off });
        }
        for p in 0..m {
            for q in (p + 1)..m {
                let apq = a[p * m + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * m + p];
                let aqq = a[q * m + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..m {
                    let akp = a[k * m + p];
                    let akq = a[k * m + q];
                    a[k * m + p] = c * akp - s * akq;
                    a[k * m + q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p * m + k];
                    let aqk = a[q * m + k];
                    a[p * m + k] = c * apk - s * aqk;
                    a[q * m + k] = s * apk + c * aqk;
                }
                a[p * m + q] = 0.0;
                a[q * m + p] = 0.0;

                for k in 0..m {
                    let vkp = v[k * m + p];
                    let vkq = v[k * m + q];
                    v[k * m + p] = c * vkp - s * vkq;
                    v[k * m + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_norm(&a);
    }

    let diag: Vec<f64> = (0..m).map(|i| a[i * m + i]).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]).then(i.cmp(&j)));

    let eigvals = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut eigvecs = Array2::zeros((m, m));
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..m).map(|k| v[k * m + src]).collect();
        orient(&mut col);
        for (k, val) in col.into_iter().enumerate() {
            eigvecs[[k, dst]] = val;
        }
    }

    Ok(SymmetricOperator { entries, eigvecs, eigvals })
}

/// Flips `vec` so that its largest-magnitude entry is positive; among entries
/// within a relative `1e-9` of the maximum the lowest index decides.
fn orient(vec: &mut [f64]) {
    let max = vec.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = vec.iter().position(|x| x.abs() >= max * (1.0 - SIGN_TIE_REL_TOL)).expect("max entry exists");
    if vec[pivot] < 0.0 {
        vec.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Spectral norm of a symmetric matrix: the largest eigenvalue magnitude.
pub fn symmetric_operator_norm(matrix: ArrayView2<'_, f64>) -> Result<f64> {
    Ok(eigendecompose(matrix)?.spectral_radius())
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when a non-positive pivot is encountered.
pub fn cholesky(matrix: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let m = matrix.nrows();
    let mut l = Array2::<f64>::zeros((m, m));
    for j in 0..m {
        let mut d = matrix[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..m {
            let mut s = matrix[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solves the symmetric positive definite system `A x = b` by Cholesky.
pub fn solve_spd(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let l = cholesky(a)?;
    let m = b.len();
    let mut y = Array1::zeros(m);
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::zeros(m);
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in (i + 1)..m {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// Largest absolute entry.
pub fn max_abs(matrix: ArrayView2<'_, f64>) -> f64 {
    matrix.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
