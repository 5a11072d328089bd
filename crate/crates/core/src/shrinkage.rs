//! Posterior means under symmetric shrinkage priors for a single
//! observation x ~ N(δ, 1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};
use crate::special::ln_norm_cdf;

const EMBEDDED_PRIORS: &str = include_str!("../data/priors.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Density (c/2) e^{-c|δ|}.
    Laplace { scale: f64 },
    /// Density (qc/2) |δ|^{q-1} e^{-c|δ|^q}.
    ReflectedWeibull { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceConstants {
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeibullConstants {
    pub shape: f64,
    pub scale: f64,
}

/// Versioned prior hyperparameters, shipped as `data/priors.toml`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConstants {
    pub version: u32,
    pub laplace: LaplaceConstants,
    pub reflected_weibull: WeibullConstants,
}

impl PriorConstants {
    pub fn embedded() -> Self {
        Self::parse(EMBEDDED_PRIORS).expect("embedded prior constants parse")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.laplace().validate()?;
        c.reflected_weibull().validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn laplace(&self) -> PriorSpec {
        PriorSpec::Laplace { scale: self.laplace.scale }
    }

    pub fn reflected_weibull(&self) -> PriorSpec {
        PriorSpec::ReflectedWeibull { shape: self.reflected_weibull.shape, scale: self.reflected_weibull.scale }
    }
}

impl PriorSpec {
    pub fn laplace_default() -> Self {
        PriorConstants::embedded().laplace()
    }

    pub fn weibull_default() -> Self {
        PriorConstants::embedded().reflected_weibull()
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Laplace { .. } => "laplace",
            PriorSpec::ReflectedWeibull { .. } => "reflected_weibull",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PriorSpec::Laplace { scale } => scale > 0.0 && scale.is_finite(),
            PriorSpec::ReflectedWeibull { shape, scale } => {
                shape > 0.0 && shape <= 1.0 && scale > 0.0 && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid prior hyperparameters {self:?}")))
        }
    }

    /// E[δ | x] for x ~ N(δ, 1).
    pub fn posterior_mean(&self, x: f64) -> Result<f64> {
        posterior_mean(x, self)
    }
}

pub fn posterior_mean(x: f64, prior: &PriorSpec) -> Result<f64> {
    prior.validate()?;
    if !x.is_finite() {
        return Err(Error::Domain(format!("posterior mean needs a finite observation, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let m = match *prior {
        PriorSpec::Laplace { scale } => laplace_positive(x.abs(), scale),
        PriorSpec::ReflectedWeibull { shape, scale } => {
            weibull_positive(x.abs(), shape, scale, &QuadratureOptions::default())?
        }
    };
    Ok(m.copysign(x))
}

/// Closed form for x > 0:
/// m(x) = x − c·h(x), h = (1 − R)/(1 + R),
/// R = e^{2cx} Φ(−x − c)/Φ(x − c).
fn laplace_positive(x: f64, c: f64) -> f64 {
    let ln_r = 2.0 * c * x + ln_norm_cdf(-x - c) - ln_norm_cdf(x - c);
    let r = ln_r.exp();
    let h = (1.0 - r) / (1.0 + r);
    x - c * h
}

/// Posterior mean under the reflected Weibull prior for x > 0 by adaptive
/// quadrature. With t = c δ^q the half-prior becomes e^{-t} dt, and
/// t = u/(1-u) maps the range to (0, 1). Both integrals are scaled by
/// exp((x²)/2 + c x^q) relative to the raw densities so the integrand peak
/// stays near one.
pub(crate) fn weibull_positive(x: f64, q: f64, c: f64, opts: &QuadratureOptions) -> Result<f64> {
    let offset = c * x.powf(q);
    let integrand = |u: f64| -> [f64; 2] {
        let one_minus = 1.0 - u;
        let t = u / one_minus;
        let d = (t / c).powf(1.0 / q);
        let jac = 1.0 / (one_minus * one_minus);
        let core = (-0.5 * (x - d) * (x - d) - t + offset).exp() * jac;
        if core == 0.0 || !core.is_finite() {
            return [0.0, 0.0];
        }
        let mirror = (-2.0 * x * d).exp();
        [core * (1.0 + mirror), core * d * -(-2.0 * x * d).exp_m1()]
    };
    let mut breaks = vec![0.0];
    for dd in [-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0] {
        let d = x + dd;
        if d > 0.0 {
            let t = c * d.powf(q);
            let u = t / (1.0 + t);
            if u > *breaks.last().expect("non-empty") && u < 1.0 {
                breaks.push(u);
            }
        }
    }
    breaks.push(1.0);
    let [den, num] = integrate(integrand, &breaks, opts)?;
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::QuadratureFailure { tolerance: opts.abs_tol, estimate: den });
    }
    Ok(num / den)
}
