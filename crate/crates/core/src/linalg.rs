//! Small dense helpers on symmetric matrices shared by the solver modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(m))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigen(m).eigenvalues.max()
}

/// Rebuild `V diag(g(λ)) Vᵀ` from the eigen-decomposition of the symmetric part of `m`.
pub fn spectral_map(m: &DMatrix<f64>, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let mapped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| g(l)));
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * mapped[c]);
    symmetrize(&(scaled * v.transpose()))
}

/// Frobenius-nearest positive semidefinite matrix (eigenvalue clamp at zero).
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0))
}

/// Hermitian square root with negative eigenvalues clamped to zero first.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = sym_eigen(m);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    Some(spectral_map(m, |l| 1.0 / l.sqrt()))
}

pub fn spd_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = sym_eigen(m);
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        return None;
    }
    Some(spectral_map(m, f64::sqrt))
}

/// Kronecker product `I_blocks ⊗ m`.
pub fn block_diag_repeat(m: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * blocks, c * blocks);
    for b in 0..blocks {
        out.view_mut((b * r, b * c), (r, c)).copy_from(m);
    }
    out
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_clamps_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = project_psd(&m);
        assert!((p - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = psd_sqrt(&m);
        assert!((&s * &s - m).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(spd_inv_sqrt(&m).is_none());
    }
}
