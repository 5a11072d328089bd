use nalgebra::{DMatrix, DVector};

use super::bars::BarQuantities;
use super::transform::TransformState;
use crate::data::RestrictionMatrix;
use crate::error::{Error, Result};

/// One-step coefficients in both the transformed and original bases.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepEstimate {
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    pub alpha: f64,
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
}

/// Quantities of the unrestricted one-step solution that every restricted
/// model and the WALS average reuse.
#[derive(Debug, Clone)]
pub struct UnrestrictedStep {
    /// ŷ = ȳ₀ − t̄ε̄ Ψ̄^{-1/2} q̄
    pub y_hat: DVector<f64>,
    /// Fully restricted focus estimate γ̃₁r.
    pub gamma1_r: DVector<f64>,
    pub gamma2_u: DVector<f64>,
    pub estimate: OneStepEstimate,
}

/// α from the linearised dispersion equation at transformed coefficients.
pub fn alpha_from_gamma(bars: &BarQuantities, tr: &TransformState, gamma1: &DVector<f64>, gamma2: &DVector<f64>) -> f64 {
    bars.alpha_given_q_dot(tr.qz1.dot(gamma1) + tr.qz2.dot(gamma2))
}

fn finish(bars: &BarQuantities, tr: &TransformState, gamma1: DVector<f64>, gamma2: DVector<f64>) -> OneStepEstimate {
    let alpha = alpha_from_gamma(bars, tr, &gamma1, &gamma2);
    OneStepEstimate { beta1: tr.beta1_from_gamma(&gamma1), beta2: tr.beta2_from_gamma(&gamma2), gamma1, gamma2, alpha }
}

pub fn one_step_unrestricted(bars: &BarQuantities, tr: &TransformState) -> Result<UnrestrictedStep> {
    let n = bars.n() as f64;
    let op = tr.m1();
    let y_hat = &bars.y0_bar - &bars.s * (bars.t_bar * bars.eps_bar);
    let y_hat_m = DMatrix::from_column_slice(y_hat.len(), 1, y_hat.as_slice());

    // (X̄₁ᵀGX̄₁)⁻¹X̄₁ᵀŷ; the Δ₁ factors cancel except for one Δ₁⁻¹.
    let focus_fit = op.focus_solve(&bars.x1_bar.tr_mul(&y_hat_m));
    let gamma1_r = focus_fit.column(0).component_div(&tr.delta1);
    let cross = op.cross_focus(&tr.z2_bar);
    let gamma2_u = (tr.z2_bar.tr_mul(&y_hat) - cross * focus_fit.column(0)) / n;
    let gamma1_u = &gamma1_r - &tr.d_bar * &gamma2_u;
    if gamma1_u.iter().chain(gamma2_u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("unrestricted one-step coefficients".into()));
    }
    let estimate = finish(bars, tr, gamma1_u, gamma2_u.clone());
    Ok(UnrestrictedStep { y_hat, gamma1_r, gamma2_u, estimate })
}

/// One-step estimate of the model that drops the auxiliary columns listed
/// in `restriction`: γ̃₂ⱼ = Wⱼγ̃₂u and γ̃₁ⱼ = γ̃₁r − D̄γ̃₂ⱼ.
pub fn one_step_restricted_j(
    bars: &BarQuantities,
    tr: &TransformState,
    step: &UnrestrictedStep,
    restriction: &RestrictionMatrix,
) -> Result<OneStepEstimate> {
    if restriction.k2() != tr.k2() {
        return Err(Error::DimensionMismatch(format!(
            "restriction is for k2 = {}, model has k2 = {}",
            restriction.k2(),
            tr.k2()
        )));
    }
    let keep = DVector::from_vec(restriction.keep_diagonal());
    let gamma2 = step.gamma2_u.component_mul(&keep);
    let gamma1 = &step.gamma1_r - &tr.d_bar * &gamma2;
    Ok(finish(bars, tr, gamma1, gamma2))
}

/// Assemble from an arbitrary transformed auxiliary vector γ₂:
/// γ₁ = γ̃₁r − D̄γ₂ and α from the dispersion equation.
pub fn assemble_from_gamma2(
    bars: &BarQuantities,
    tr: &TransformState,
    step: &UnrestrictedStep,
    gamma2: DVector<f64>,
) -> OneStepEstimate {
    let gamma1 = &step.gamma1_r - &tr.d_bar * &gamma2;
    finish(bars, tr, gamma1, gamma2)
}
