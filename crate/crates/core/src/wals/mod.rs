//! Weighted-average least squares for the NB2 model.
//!
//! The estimator linearises the score equations around a starting value,
//! transforms the auxiliary block so the restricted one-step estimators are
//! simple masks of the unrestricted one, and replaces the combinatorial model
//! average by coordinatewise Bayesian shrinkage of √n γ̃₂u.

mod bars;
mod m1;
mod onestep;
mod transform;

pub use bars::{compute_bars, BarQuantities};
pub use m1::{m1_quadratic_form, M1Operator};
pub use onestep::{
    alpha_from_gamma, assemble_from_gamma2, one_step_restricted_j, one_step_unrestricted, OneStepEstimate,
    UnrestrictedStep,
};
pub use transform::{build_transforms, TransformState, XI_EIGEN_FLOOR};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RestrictionMatrix};
use crate::error::{Error, Result};
use crate::kernels::Nb2Params;
use crate::ml::MlFit;
use crate::shrinkage::PriorSpec;

/// How the auxiliary weights are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// wₕ = m(xₕ)/xₕ with m the posterior mean and xₕ = √n γ̃₂u,ₕ.
    Prior(PriorSpec),
    /// Fixed diagonal weights in [0, 1]; ones reproduce the unrestricted
    /// one-step fit and zeros the fully restricted one.
    Fixed(Vec<f64>),
}

/// Starting values, barred quantities, transforms and the unrestricted
/// one-step solution, i.e. everything before the weights are chosen.
#[derive(Debug, Clone)]
pub struct WalsPrepared {
    pub bars: BarQuantities,
    pub transforms: TransformState,
    pub step: UnrestrictedStep,
    pub start: Nb2Params,
}

impl WalsPrepared {
    pub fn new(data: &Dataset, start: &Nb2Params) -> Result<Self> {
        if data.k2() == 0 {
            return Err(Error::Domain("model averaging needs at least one auxiliary regressor".into()));
        }
        let bars = compute_bars(data, start)?;
        let transforms = build_transforms(data.x1(), data.x2(), &bars)?;
        let step = one_step_unrestricted(&bars, &transforms)?;
        Ok(Self { bars, transforms, step, start: start.clone() })
    }

    pub fn n(&self) -> usize {
        self.bars.n()
    }

    pub fn restricted(&self, restriction: &RestrictionMatrix) -> Result<OneStepEstimate> {
        one_step_restricted_j(&self.bars, &self.transforms, &self.step, restriction)
    }

    /// Diagonal weights under `rule`.
    pub fn weights(&self, rule: &WeightRule) -> Result<Vec<f64>> {
        let k2 = self.transforms.k2();
        match rule {
            WeightRule::Fixed(w) => {
                if w.len() != k2 {
                    return Err(Error::DimensionMismatch(format!("{} weights for k2 = {k2}", w.len())));
                }
                if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Domain(format!("weight {bad} outside [0, 1]")));
                }
                Ok(w.clone())
            }
            WeightRule::Prior(prior) => {
                let root_n = (self.n() as f64).sqrt();
                self.step
                    .gamma2_u
                    .iter()
                    .map(|&g| {
                        let x = root_n * g;
                        if x == 0.0 {
                            return Ok(0.0);
                        }
                        Ok(prior.posterior_mean(x)? / x)
                    })
                    .collect()
            }
        }
    }

    pub fn assemble(&self, weights: &[f64]) -> Result<OneStepEstimate> {
        if weights.len() != self.transforms.k2() {
            return Err(Error::DimensionMismatch("weight vector length".into()));
        }
        let gamma2 = self.step.gamma2_u.component_mul(&DVector::from_column_slice(weights));
        Ok(assemble_from_gamma2(&self.bars, &self.transforms, &self.step, gamma2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalsFit {
    pub gamma1_hat: DVector<f64>,
    pub gamma2_hat: DVector<f64>,
    pub w_diag: Vec<f64>,
    pub gamma2_tilde_u: DVector<f64>,
    pub gamma1_tilde_r: DVector<f64>,
    pub alpha_hat: f64,
    pub rho_hat: f64,
    pub beta1_hat: DVector<f64>,
    pub beta2_hat: DVector<f64>,
    pub rule: WeightRule,
    pub start: Nb2Params,
}

impl WalsFit {
    /// Coefficients stacked as [β̂₁; β̂₂] with the log dispersion.
    pub fn params(&self) -> Nb2Params {
        let k1 = self.beta1_hat.len();
        let mut beta = DVector::zeros(k1 + self.beta2_hat.len());
        beta.rows_mut(0, k1).copy_from(&self.beta1_hat);
        beta.rows_mut(k1, self.beta2_hat.len()).copy_from(&self.beta2_hat);
        Nb2Params::new(beta, self.alpha_hat)
    }
}

/// WALS fit using the converged ML estimate of the full model as the
/// starting value.
pub fn fit_walsnb(data: &Dataset, prior: &PriorSpec, start: &MlFit) -> Result<WalsFit> {
    if !start.converged {
        return Err(Error::NonConvergence {
            outer_iterations: start.outer_iterations,
            inner_iterations: start.inner_iterations,
            reason: "starting fit did not converge".into(),
        });
    }
    fit_walsnb_with(data, &WeightRule::Prior(*prior), &start.params)
}

/// WALS fit from arbitrary starting values and weight rule.
pub fn fit_walsnb_with(data: &Dataset, rule: &WeightRule, start: &Nb2Params) -> Result<WalsFit> {
    let prep = WalsPrepared::new(data, start)?;
    let w = prep.weights(rule)?;
    let est = prep.assemble(&w)?;
    let rho_hat = est.alpha.exp();
    if !(rho_hat > 0.0 && rho_hat.is_finite()) {
        return Err(Error::NumericOverflow(format!("dispersion exp({})", est.alpha)));
    }
    Ok(WalsFit {
        gamma1_hat: est.gamma1,
        gamma2_hat: est.gamma2,
        w_diag: w,
        gamma2_tilde_u: prep.step.gamma2_u.clone(),
        gamma1_tilde_r: prep.step.gamma1_r.clone(),
        alpha_hat: est.alpha,
        rho_hat,
        beta1_hat: est.beta1,
        beta2_hat: est.beta2,
        rule: rule.clone(),
        start: start.clone(),
    })
}

/// exp(X₁β̂₁ + X₂β̂₂) for a new design laid out as [X₁ X₂].
pub fn predict_mean(fit: &WalsFit, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    let params = fit.params();
    crate::kernels::predict_mean(&params, x_new)
}
