//! NB2 distribution and the per-observation building blocks of its score and
//! negative Hessian, written in exponential-family form with a log link on
//! both the mean and the dispersion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::special::{digamma_diff, ln_factorial, ln_gamma_ratio, trigamma_diff};

/// Inverse link for the conditional mean. Only the log link is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Log,
}

impl Link {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "log" => Ok(Link::Log),
            other => Err(Error::Unsupported(format!("link '{other}' (only 'log' is implemented)"))),
        }
    }

    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
        }
    }
}

/// Regression coefficients and log-dispersion. `rho` is always `exp(alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nb2Params {
    beta: DVector<f64>,
    alpha: f64,
}

impl Nb2Params {
    pub fn new(beta: DVector<f64>, alpha: f64) -> Self {
        Self { beta, alpha }
    }

    pub fn from_rho(beta: DVector<f64>, rho: f64) -> Result<Self> {
        check_positive("rho", rho)?;
        Ok(Self { beta, alpha: rho.ln() })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.alpha.exp()
    }

    pub fn into_parts(self) -> (DVector<f64>, f64) {
        (self.beta, self.alpha)
    }
}

/// Scalar kernel values at one observation. Derivatives are taken with
/// respect to the linear predictor η and the dispersion ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValues {
    /// Canonical parameter θ = log μ − log(μ + ρ).
    pub theta: f64,
    pub mu: f64,
    pub sigma2: f64,
    /// ∂θ/∂η
    pub v: f64,
    /// ∂²θ/∂η²
    pub omega: f64,
    /// Negative-Hessian weight for the coefficient block.
    pub psi: f64,
    /// ∂²θ/∂η∂ρ
    pub c: f64,
    /// Dispersion score term (∂ℓᵢ/∂ρ).
    pub kappa: f64,
    /// ∂κ/∂ρ
    pub k: f64,
    /// ∂ρ/∂α
    pub g: f64,
    /// ∂²ρ/∂α²
    pub varrho: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and > 0, got {x}")))
    }
}

/// log f(y | μ, ρ) for the NB2 law, including the −log y! constant.
pub fn nb2_log_pmf(y: u64, mu: f64, rho: f64) -> Result<f64> {
    check_positive("mu", mu)?;
    check_positive("rho", rho)?;
    Ok(log_pmf_unchecked(y, mu, rho))
}

#[inline]
pub(crate) fn log_pmf_unchecked(y: u64, mu: f64, rho: f64) -> f64 {
    // y log(μ/(μ+ρ)) + ρ log(ρ/(μ+ρ)), both written through log1p so that the
    // Poisson limit (ρ → ∞) and tiny means stay accurate.
    let y_term = if y == 0 { 0.0 } else { -(y as f64) * (rho / mu).ln_1p() };
    let rho_term = -rho * (mu / rho).ln_1p();
    ln_gamma_ratio(y, rho) - ln_factorial(y) + y_term + rho_term
}

/// Conditional variance μ + μ²/ρ.
pub fn nb2_variance(mu: f64, rho: f64) -> Result<f64> {
    check_positive("mu", mu)?;
    check_positive("rho", rho)?;
    Ok(mu + mu * mu / rho)
}

/// All kernel values at linear predictor `eta`, dispersion `rho` and count `y`
/// under the log link.
pub fn kernel_values(eta: f64, rho: f64, y: u64) -> Result<KernelValues> {
    check_positive("rho", rho)?;
    if !eta.is_finite() {
        return Err(Error::Domain(format!("eta must be finite, got {eta}")));
    }
    let mu = Link::Log.inverse(eta);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::NumericOverflow(format!("mean exp({eta}) is not representable")));
    }
    Ok(kernel_values_unchecked(eta, mu, rho, y))
}

#[inline]
pub(crate) fn kernel_values_unchecked(eta: f64, mu: f64, rho: f64, y: u64) -> KernelValues {
    let alpha = rho.ln();
    // v = ρ/(μ+ρ) and 1 − v = μ/(μ+ρ), both as logistic functions of η − α.
    let v = 1.0 / (1.0 + (eta - alpha).exp());
    let one_minus_v = 1.0 / (1.0 + (alpha - eta).exp());
    let sum = mu + rho;
    let yf = y as f64;
    let resid = yf - mu;

    let theta = -(rho / mu).ln_1p();
    let sigma2 = mu + mu * mu / rho;
    let omega = -v * one_minus_v;
    let psi = v * one_minus_v * (yf + rho);
    let c = one_minus_v / sum;
    let kappa = -resid / sum - (mu / rho).ln_1p() + digamma_diff(y, rho);
    let k = resid / (sum * sum) + one_minus_v / rho + trigamma_diff(y, rho);

    KernelValues {
        theta,
        mu,
        sigma2,
        v,
        omega,
        psi,
        c,
        kappa,
        k,
        g: rho,
        varrho: rho,
    }
}

/// Log-likelihood of NB2 regression at `params` using the full design
/// (X₁, X₂) of `data`.
pub fn log_likelihood(params: &Nb2Params, data: &Dataset) -> Result<f64> {
    let x = data.full_design();
    if params.beta().len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, design has {} columns",
            params.beta().len(),
            x.ncols()
        )));
    }
    let eta = &x * params.beta();
    let rho = params.rho();
    check_positive("rho", rho)?;
    let mut total = crate::sum::KahanSum::default();
    for (i, &y) in data.y().iter().enumerate() {
        let mu = eta[i].exp();
        check_positive("mu", mu).map_err(|_| Error::NumericOverflow(format!("mean at row {i}")))?;
        total.add(log_pmf_unchecked(y, mu, rho));
    }
    Ok(total.value())
}

/// Conditional means exp(Xβ) for a design with the same column layout as
/// the fitted coefficients.
pub fn predict_mean(params: &Nb2Params, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != params.beta().len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns, coefficients have {}",
            x.ncols(),
            params.beta().len()
        )));
    }
    let mu = (x * params.beta()).map(f64::exp);
    if let Some(i) = mu.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::NumericOverflow(format!("predicted mean at row {i}")));
    }
    Ok(mu)
}

/// Draw from NB2(μ, ρ) as a gamma–Poisson mixture.
pub fn sample_nb2<R: Rng + ?Sized>(mu: f64, rho: f64, rng: &mut R) -> Result<u64> {
    check_positive("mu", mu)?;
    check_positive("rho", rho)?;
    let gamma = Gamma::new(rho, mu / rho).map_err(|e| Error::Domain(e.to_string()))?;
    let lambda: f64 = gamma.sample(rng);
    if lambda <= 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(poisson.sample(rng) as u64)
}
