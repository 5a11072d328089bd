use nalgebra::{DMatrix, DVector};

use super::bars::BarQuantities;
use super::m1::M1Operator;
use crate::error::{Error, Result};
use crate::linalg::sym_sqrt_pair;

/// Eigenvalues of Ξ at or below this are treated as singular.
pub const XI_EIGEN_FLOOR: f64 = 1e-10;

/// Scaling and semi-orthogonalisation of the barred designs.
///
/// Z̄₁ = X̄₁Δ₁ and Z̄₂ = X̄₂Δ₂Ξ^{-1/2}, chosen so that Z̄₂ᵀM̄₁Z̄₂/n = I.
/// Unbarred counterparts Z₁, Z₂ use the same column transforms.
#[derive(Debug, Clone)]
pub struct TransformState {
    pub delta1: DVector<f64>,
    pub delta2: DVector<f64>,
    pub xi: DMatrix<f64>,
    pub xi_half: DMatrix<f64>,
    pub xi_neg_half: DMatrix<f64>,
    /// Δ₂Ξ^{-1/2}, maps γ₂ back to β₂.
    pub p2: DMatrix<f64>,
    pub z1_bar: DMatrix<f64>,
    pub z2_bar: DMatrix<f64>,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
    /// D̄ = (Z̄₁ᵀGZ̄₁)⁻¹ Z̄₁ᵀGZ̄₂
    pub d_bar: DMatrix<f64>,
    /// Z₁ᵀq̄
    pub qz1: DVector<f64>,
    /// Z₂ᵀq̄
    pub qz2: DVector<f64>,
    pub(crate) op: M1Operator,
}

fn inv_sqrt_diag(diag: impl Iterator<Item = f64>, n: f64) -> Result<DVector<f64>> {
    let v: Vec<f64> = diag.collect();
    let mut out = DVector::zeros(v.len());
    for (j, d) in v.into_iter().enumerate() {
        let scaled = d / n;
        if !(scaled > 0.0 && scaled.is_finite()) {
            return Err(Error::NotPositiveDefinite(scaled));
        }
        out[j] = scaled.sqrt().recip();
    }
    Ok(out)
}

fn scale_cols(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, &dj) in out.column_iter_mut().zip(d.iter()) {
        col *= dj;
    }
    out
}

pub fn build_transforms(x1: &DMatrix<f64>, x2: &DMatrix<f64>, bars: &BarQuantities) -> Result<TransformState> {
    let n = bars.n() as f64;
    if x1.nrows() != bars.n() || x2.nrows() != bars.n() {
        return Err(Error::DimensionMismatch("design rows differ from barred quantities".into()));
    }
    let op = M1Operator::new(bars)?;

    let x1_bar = &bars.x1_bar;
    let x2_bar = &bars.x2_bar;
    let delta1 = inv_sqrt_diag(x1_bar.column_iter().map(|c| c.norm_squared()), n)?;

    let s22 = op.quadratic_form(x2_bar, x2_bar)?;
    let delta2 = inv_sqrt_diag(s22.diagonal().iter().copied(), n)?;
    let mut xi = DMatrix::zeros(delta2.len(), delta2.len());
    for i in 0..xi.nrows() {
        for j in 0..xi.ncols() {
            xi[(i, j)] = delta2[i] * s22[(i, j)] * delta2[j] / n;
        }
    }
    let (xi_half, xi_neg_half) = sym_sqrt_pair(&xi, XI_EIGEN_FLOOR)?;
    let p2 = DMatrix::from_diagonal(&delta2) * &xi_neg_half;

    let z1_bar = scale_cols(x1_bar, &delta1);
    let z1 = scale_cols(x1, &delta1);
    let z2_bar = x2_bar * &p2;
    let z2 = x2 * &p2;

    // (Z̄₁ᵀGZ̄₁)⁻¹Z̄₁ᵀGZ̄₂ = Δ₁⁻¹ (X̄₁ᵀGX̄₁)⁻¹ X̄₁ᵀGZ̄₂
    let mut d_bar = op.focus_solve(&op.cross_focus(&z2_bar).transpose());
    for (mut row, &d) in d_bar.row_iter_mut().zip(delta1.iter()) {
        row /= d;
    }

    let qz1 = z1.tr_mul(&bars.q_bar);
    let qz2 = z2.tr_mul(&bars.q_bar);
    Ok(TransformState {
        delta1,
        delta2,
        xi,
        xi_half,
        xi_neg_half,
        p2,
        z1_bar,
        z2_bar,
        z1,
        z2,
        d_bar,
        qz1,
        qz2,
        op,
    })
}

impl TransformState {
    pub fn k1(&self) -> usize {
        self.delta1.len()
    }

    pub fn k2(&self) -> usize {
        self.delta2.len()
    }

    /// β₁ = Δ₁γ₁
    pub fn beta1_from_gamma(&self, gamma1: &DVector<f64>) -> DVector<f64> {
        gamma1.component_mul(&self.delta1)
    }

    /// β₂ = Δ₂Ξ^{-1/2}γ₂
    pub fn beta2_from_gamma(&self, gamma2: &DVector<f64>) -> DVector<f64> {
        &self.p2 * gamma2
    }

    /// γ₁ = Δ₁⁻¹β₁
    pub fn gamma1_from_beta(&self, beta1: &DVector<f64>) -> DVector<f64> {
        beta1.component_div(&self.delta1)
    }

    /// γ₂ = Ξ^{1/2}Δ₂⁻¹β₂
    pub fn gamma2_from_beta(&self, beta2: &DVector<f64>) -> DVector<f64> {
        &self.xi_half * beta2.component_div(&self.delta2)
    }

    pub fn m1(&self) -> &M1Operator {
        &self.op
    }
}
