//! RMSE and the log, Brier and spherical scores for NB2 predictive
//! distributions. Scores are penalties: lower is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_pmf_unchecked, Nb2Params};
use crate::sum::KahanSum;

/// Truncation point used for ‖p̂‖ in the simulation study.
pub const SIMULATION_TRUNCATION: u64 = 150;

/// NB2 law quoted for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    mu: f64,
    rho: f64,
}

impl PredictiveDistribution {
    pub fn new(mu: f64, rho: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("predictive mean must be positive and finite, got {mu}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Domain(format!("predictive dispersion must be positive and finite, got {rho}")));
        }
        Ok(Self { mu, rho })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn ln_pmf(&self, y: u64) -> f64 {
        log_pmf_unchecked(y, self.mu, self.rho)
    }

    pub fn pmf(&self, y: u64) -> f64 {
        self.ln_pmf(y).exp()
    }

    /// Σ_{r=0}^{R} p̂_r², built by the ratio recurrence
    /// p_{r+1}/p_r = (r + ρ)/(r + 1) · μ/(μ + ρ).
    pub fn norm_sq(&self, truncation: u64) -> f64 {
        let ln_ratio = (self.mu / (self.mu + self.rho)).ln();
        let mut lp = self.ln_pmf(0);
        let mut acc = KahanSum::default();
        for r in 0..=truncation {
            if r > 0 {
                let rf = (r - 1) as f64;
                lp += (rf + self.rho).ln() - (rf + 1.0).ln() + ln_ratio;
            }
            acc.add((2.0 * lp).exp());
        }
        acc.value()
    }
}

/// Predictive laws for each row of `x` under fitted coefficients.
pub fn predictive_distributions(params: &Nb2Params, x: &nalgebra::DMatrix<f64>) -> Result<Vec<PredictiveDistribution>> {
    let mu = crate::kernels::predict_mean(params, x)?;
    let rho = params.rho();
    mu.iter().map(|&m| PredictiveDistribution::new(m, rho)).collect()
}

pub fn rmse(mu_hat: &[f64], y: &[u64]) -> Result<f64> {
    if mu_hat.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} outcomes", mu_hat.len(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Domain("RMSE of an empty sample".into()));
    }
    let ss: KahanSum = mu_hat.iter().zip(y).map(|(m, &y)| (m - y as f64).powi(2)).collect();
    Ok((ss.value() / y.len() as f64).sqrt())
}

/// −log p̂_y
pub fn log_score(p: &PredictiveDistribution, y: u64) -> f64 {
    -p.ln_pmf(y)
}

/// −2p̂_y + Σ_{r≤R} p̂_r²
pub fn brier_score(p: &PredictiveDistribution, y: u64, truncation: u64) -> f64 {
    -2.0 * p.pmf(y) + p.norm_sq(truncation)
}

/// −p̂_y / ‖p̂‖ with the norm truncated at R.
pub fn spherical_score(p: &PredictiveDistribution, y: u64, truncation: u64) -> Result<f64> {
    let norm = p.norm_sq(truncation).sqrt();
    if !(norm > 0.0) {
        return Err(Error::DegenerateNorm);
    }
    Ok(-p.pmf(y) / norm)
}

/// Averages of each metric over an evaluation sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rmse: f64,
    pub log_score: f64,
    pub brier_score: f64,
    pub spherical_score: f64,
    pub truncation: u64,
}

pub fn score_report(preds: &[PredictiveDistribution], y: &[u64], truncation: u64) -> Result<ScoreReport> {
    if preds.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} outcomes", preds.len(), y.len())));
    }
    let mu: Vec<f64> = preds.iter().map(|p| p.mu()).collect();
    let rmse = rmse(&mu, y)?;
    let n = y.len() as f64;
    let (mut log, mut brier, mut sph) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
    for (p, &yi) in preds.iter().zip(y) {
        let lp = p.ln_pmf(yi);
        let pm = lp.exp();
        let norm_sq = p.norm_sq(truncation);
        if !(norm_sq > 0.0) {
            return Err(Error::DegenerateNorm);
        }
        log.add(-lp);
        brier.add(-2.0 * pm + norm_sq);
        sph.add(-pm / norm_sq.sqrt());
    }
    Ok(ScoreReport {
        rmse,
        log_score: log.value() / n,
        brier_score: brier.value() / n,
        spherical_score: sph.value() / n,
        truncation,
    })
}
