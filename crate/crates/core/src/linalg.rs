//! Small dense linear-algebra helpers shared by the filters and samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative jitter added to the diagonal when a factorization fails.
pub const JITTER: f64 = 1e-9;

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// On failure the diagonal is lifted once by `JITTER * mean(diag)` and the
/// factorization retried; a second failure returns `None`.
pub fn spd_factor(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = a.clone().cholesky() {
        return Some(c);
    }
    let n = a.nrows();
    if n == 0 {
        return None;
    }
    let mean_diag = a.diagonal().iter().sum::<f64>() / n as f64;
    let eps = JITTER * mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut lifted = a.clone();
    for i in 0..n {
        lifted[(i, i)] += eps;
    }
    lifted.cholesky()
}

pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Symmetric PSD up to `tol * trace` on the smallest eigenvalue.
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    if a.nrows() == 0 {
        return true;
    }
    let scale = a.trace().abs().max(1e-300);
    for i in 0..a.nrows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return false;
            }
        }
    }
    let eig = a.clone().symmetric_eigen();
    eig.eigenvalues.iter().all(|&l| l >= -tol * scale)
}

/// A matrix `L` with `L L' = cov`; falls back to a clipped eigen-square-root
/// when `cov` is only semidefinite.
pub fn cov_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = cov.clone().cholesky() {
        return c.unpack();
    }
    let eig = cov.clone().symmetric_eigen();
    let mut u = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        u.column_mut(j).scale_mut(s);
    }
    u
}

/// One draw of `mean + L z`, `z` standard normal.
pub fn draw_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, sqrt: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(sqrt.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt * z
}

pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_sub(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn is_diagonal(a: &DMatrix<f64>) -> bool {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if i != j && a[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}
