use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::bars::BarQuantities;
use crate::error::{Error, Result};

/// Implicit representation of
///
///   M̄₁ = G − G X̄₁ (X̄₁ᵀ G X̄₁)⁻¹ X̄₁ᵀ G,   G = I + ḡε̄ s sᵀ,
///
/// never materialised as an n×n matrix. The focus block inverse is formed
/// by Sherman–Morrison–Woodbury on top of a Cholesky factor of X̄₁ᵀX̄₁.
#[derive(Debug, Clone)]
pub struct M1Operator {
    x1_bar: DMatrix<f64>,
    s: DVector<f64>,
    c: f64,
    chol: Cholesky<f64, Dyn>,
    /// a = X̄₁ᵀ s
    a: DVector<f64>,
    /// F a where F = (X̄₁ᵀX̄₁)⁻¹
    fa: DVector<f64>,
    smw_denom: f64,
}

impl M1Operator {
    pub fn new(bars: &BarQuantities) -> Result<Self> {
        Self::with_focus(bars.x1_bar.clone(), bars.s.clone(), bars.g_eps())
    }

    pub(crate) fn with_focus(x1_bar: DMatrix<f64>, s: DVector<f64>, c: f64) -> Result<Self> {
        let gram = x1_bar.tr_mul(&x1_bar);
        let chol = Cholesky::new(gram).ok_or(Error::SingularFocusBlock)?;
        let a = x1_bar.tr_mul(&s);
        let fa = chol.solve(&a);
        let smw_denom = 1.0 + c * a.dot(&fa);
        if !(smw_denom.abs() > 1e-12) || !smw_denom.is_finite() {
            return Err(Error::SmwDenominatorZero(smw_denom));
        }
        Ok(Self { x1_bar, s, c, chol, a, fa, smw_denom })
    }

    /// (X̄₁ᵀ G X̄₁)⁻¹ B for a k₁-row right-hand side.
    pub fn focus_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let fb = self.chol.solve(b);
        // F − c F a aᵀ F / (1 + c aᵀ F a)
        let at_fb = self.fa.tr_mul(b);
        fb - &self.fa * (at_fb * (self.c / self.smw_denom))
    }

    /// Aᵀ G X̄₁ for an n-row A.
    pub fn cross_focus(&self, a_mat: &DMatrix<f64>) -> DMatrix<f64> {
        let a_s = a_mat.tr_mul(&self.s);
        a_mat.tr_mul(&self.x1_bar) + a_s * self.a.transpose() * self.c
    }

    /// Aᵀ G B.
    pub fn g_form(&self, a_mat: &DMatrix<f64>, b_mat: &DMatrix<f64>) -> DMatrix<f64> {
        let a_s = a_mat.tr_mul(&self.s);
        let s_b = self.s.tr_mul(b_mat);
        a_mat.tr_mul(b_mat) + a_s * s_b * self.c
    }

    /// Aᵀ M̄₁ B.
    pub fn quadratic_form(&self, a_mat: &DMatrix<f64>, b_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.x1_bar.nrows();
        if a_mat.nrows() != n || b_mat.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form operands have {} and {} rows, expected {n}",
                a_mat.nrows(),
                b_mat.nrows()
            )));
        }
        let agx = self.cross_focus(a_mat);
        let xgb = self.cross_focus(b_mat).transpose();
        Ok(self.g_form(a_mat, b_mat) - agx * self.focus_solve(&xgb))
    }

    pub fn smw_denominator(&self) -> f64 {
        self.smw_denom
    }
}

/// Aᵀ M̄₁ B using the barred focus design and rank-1 vector in `bars`.
pub fn m1_quadratic_form(bars: &BarQuantities, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    M1Operator::new(bars)?.quadratic_form(a, b)
}
