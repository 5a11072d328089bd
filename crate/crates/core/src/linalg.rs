//! Small dense linear-algebra helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerical column rank from a column-pivoted QR factorisation.
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let k = x.ncols();
    if k == 0 {
        return 0;
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return 0;
    }
    let tol = 1e-10 * lead;
    (0..k.min(x.nrows())).filter(|&j| r[(j, j)].abs() > tol).count()
}

/// XᵀWX for diagonal weights `w`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    x.tr_mul(&xw)
}

/// Ordinary least squares via QR.
pub fn least_squares(x: &DMatrix<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(z);
    solve_spd(gram, &rhs)
}

/// Weighted least squares (XᵀWX)⁻¹XᵀWz.
pub fn weighted_least_squares(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = weighted_gram(x, w);
    let rhs = x.tr_mul(&w.component_mul(z));
    solve_spd(gram, &rhs)
}

/// Solve a symmetric positive definite system by Cholesky.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let k = a.ncols();
    a.cholesky()
        .map(|c| c.solve(b))
        .ok_or(Error::RankDeficient { rank: k.saturating_sub(1), cols: k })
}

/// Symmetric square root and inverse square root of a positive definite
/// matrix via its eigendecomposition. Fails when the smallest eigenvalue is
/// at or below `floor`.
pub fn sym_sqrt_pair(a: &DMatrix<f64>, floor: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > floor) {
        return Err(Error::NotPositiveDefinite(min));
    }
    let q = &eig.eigenvectors;
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let half = q * sqrt * q.transpose();
    let neg_half = q * inv_sqrt * q.transpose();
    Ok(((&half + half.transpose()) * 0.5, (&neg_half + neg_half.transpose()) * 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_pair_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let (h, nh) = sym_sqrt_pair(&a, 1e-10).unwrap();
        assert!((&h * &h - &a).amax() < 1e-12);
        assert!((&h * &nh - DMatrix::identity(3, 3)).amax() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(sym_sqrt_pair(&bad, 1e-10), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn rank_detects_duplicate() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 1.0, 0.5, 0.5, 1.0, -1.0, -1.0, 1.0, 3.0, 3.0]);
        assert_eq!(numerical_rank(&x), 2);
    }
}
