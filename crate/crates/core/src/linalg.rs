//! Shared dense linear-algebra helpers.
//!
//! All rank decisions across the crate go through [`RANK_TOL`] and all PSD
//! checks through [`PSD_TOL`], both relative to the spectral norm, so that
//! different modules agree on the rank of the same matrix.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold for rank decisions and pseudo-inverses.
pub const RANK_TOL: f64 = 1e-9;

/// Relative tolerance on the minimum eigenvalue for PSD checks.
pub const PSD_TOL: f64 = 1e-10;

/// (X + X')/2. Applied after every arithmetic step that should stay symmetric.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(x: &DMatrix<f64>) -> SymEig {
    let eig = symmetrize(x).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    SymEig { values, vectors }
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let eig = sym_eig(x);
    eig.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(x: &DMatrix<f64>) -> f64 {
    let eig = sym_eig(x);
    eig.values[eig.values.len() - 1]
}

/// Margin by which X fails to be PSD, relative to the allowed slack.
/// Returns the minimum eigenvalue; callers compare against `-PSD_TOL * norm`.
pub fn psd_margin(x: &DMatrix<f64>) -> f64 {
    min_eig(x)
}

pub fn is_psd(x: &DMatrix<f64>) -> bool {
    let norm = spectral_norm(x);
    psd_margin(x) >= -PSD_TOL * norm.max(1.0)
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pinv_psd(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eig(x);
    let tol = RANK_TOL * eig.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = eig.values[i];
        if v > tol && v > 0.0 {
            let u = eig.vectors.column(i);
            out += u * u.transpose() / v;
        }
    }
    out
}

/// Symmetric PSD square root with negative eigenvalues clipped to zero.
pub fn sqrt_psd(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eig(x);
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = eig.values[i].max(0.0);
        if v > 0.0 {
            let u = eig.vectors.column(i);
            out += u * u.transpose() * v.sqrt();
        }
    }
    out
}

/// Cholesky factor usable for sampling: eigenvalue-clipped factor F with
/// F F' = X for PSD X, valid also when X is singular.
pub fn sampling_factor(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eig(x);
    let n = x.nrows();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = eig.values[i].max(0.0).sqrt();
        f.column_mut(i).copy_from(&(eig.vectors.column(i) * v));
    }
    f
}

pub fn frob(x: &DMatrix<f64>) -> f64 {
    x.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_eig_sorted_and_reconstructs() {
        let x = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let e = sym_eig(&x);
        assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2]);
        let rec = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((rec - &x).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_singular() {
        // rank-1 projector scaled by 2
        let u = DVector::from_row_slice(&[1.0, 1.0]).normalize();
        let x = &u * u.transpose() * 2.0;
        let p = pinv_psd(&x);
        assert!((&x * &p * &x - &x).norm() < 1e-12);
    }
}
