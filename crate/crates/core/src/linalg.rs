//! Small dense linear-algebra helpers shared by the estimators and generators.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Columns whose norm after projection falls below this fraction of their
/// original norm are treated as linearly dependent and dropped.
pub const DEPENDENT_COLUMN_TOL: f64 = 1e-10;

/// Orthonormal basis for the column span of `y` (Householder QR). Dependent or
/// zero columns are dropped, so the result may have fewer columns than `y`.
pub fn orthonormal_basis(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = y.shape();
    if k == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let col_norms: Vec<f64> = (0..k).map(|j| y.column(j).norm()).collect();
    let qr = y.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let keep: Vec<usize> = (0..k.min(n))
        .filter(|&j| col_norms[j] > 0.0 && r[(j, j)].abs() >= DEPENDENT_COLUMN_TOL * col_norms[j])
        .collect();
    q.select_columns(&keep)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Schatten-p norm of a symmetric matrix (its singular values are |eigenvalues|).
pub fn schatten_norm_symmetric(m: &DMatrix<f64>, p: f64) -> f64 {
    schatten_norm_of_spectrum(&symmetric_eigenvalues(m), p)
}

pub fn schatten_norm_of_spectrum(eigenvalues: &[f64], p: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|l| l.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `U diag(lambda) U^T`.
pub fn compose_spectrum(u: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (j, &l) in lambda.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
    }
    scaled * u.transpose()
}
