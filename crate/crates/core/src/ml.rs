//! Fully iterated maximum likelihood for NB2 regression.
//!
//! The fit alternates between IRLS for β at fixed ρ and a one-dimensional
//! Newton search for α = log ρ at fixed β. Once the alternation has
//! stabilised, a few joint Newton steps on (β, α) with the exact negative
//! Hessian polish the solution to near machine precision.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_values_unchecked, log_pmf_unchecked, Nb2Params};
use crate::linalg;
use crate::sum::KahanSum;

/// Iteration limits and tolerances for [`fit_ml`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlOptions {
    /// Maximum number of IRLS / dispersion alternations.
    pub max_outer: usize,
    /// Maximum IRLS iterations per alternation.
    pub max_irls: usize,
    /// Relative change of −2ℓ that ends the alternation.
    pub tol: f64,
    /// Clipping range for the dispersion.
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for MlOptions {
    fn default() -> Self {
        ml_options_default()
    }
}

pub fn ml_options_default() -> MlOptions {
    MlOptions {
        max_outer: 2500,
        max_irls: 2500,
        tol: 1e-8,
        rho_min: 1e-8,
        rho_max: 1e10,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlFit {
    pub params: Nb2Params,
    pub loglik: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub failure_reason: Option<String>,
    /// Log-likelihood after each alternation.
    pub loglik_trace: Vec<f64>,
}

impl MlFit {
    /// Turn an unconverged fit into [`Error::NonConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                outer_iterations: self.outer_iterations,
                inner_iterations: self.inner_iterations,
                reason: self.failure_reason.unwrap_or_else(|| "iteration limit".into()),
            })
        }
    }
}

struct Problem<'a> {
    x: DMatrix<f64>,
    y: &'a [u64],
}

impl Problem<'_> {
    fn eta(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let eta = &self.x * beta;
        if let Some(i) = eta.iter().position(|e| !e.is_finite() || *e > 700.0) {
            return Err(Error::NumericOverflow(format!("linear predictor {} at row {i}", eta[i])));
        }
        Ok(eta)
    }

    fn loglik(&self, eta: &DVector<f64>, rho: f64) -> f64 {
        let s: KahanSum = self
            .y
            .iter()
            .zip(eta.iter())
            .map(|(&y, &e)| log_pmf_unchecked(y, e.exp(), rho))
            .collect();
        s.value()
    }
}

/// Maximum-likelihood NB2 fit on the full design (X₁, X₂) of `data`.
///
/// Hitting an iteration limit is not an error: the returned fit has
/// `converged == false` and a `failure_reason`.
pub fn fit_ml(data: &Dataset, options: &MlOptions) -> Result<MlFit> {
    let problem = Problem { x: data.full_design(), y: data.y() };
    let (n, k) = problem.x.shape();
    if n <= k {
        return Err(Error::Domain(format!("need n > k, got n = {n}, k = {k}")));
    }
    let rank = linalg::numerical_rank(&problem.x);
    if rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }

    let yf: Vec<f64> = data.response_f64();
    let mean = yf.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(Error::Domain("all counts are zero; the mean is not identified".into()));
    }
    let var = yf.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let mut rho = if var > mean { mean * mean / (var - mean) } else { f64::INFINITY };
    rho = rho.clamp(1e-3, 1e6).clamp(options.rho_min, options.rho_max);

    // Starting mean halfway between the counts and their average keeps log(μ) finite.
    let z0 = DVector::from_iterator(n, yf.iter().map(|y| (0.5 * (y + mean)).ln()));
    let mut beta = linalg::least_squares(&problem.x, &z0)?;

    let mut inner_total = 0usize;
    let mut trace = Vec::new();
    let mut eta = problem.eta(&beta)?;
    let mut ll = problem.loglik(&eta, rho);
    let mut converged = false;
    let mut outer = 0usize;
    let mut reason = None;

    while outer < options.max_outer {
        outer += 1;
        let (b, inner, irls_ok) = irls(&problem, beta, rho, options)?;
        beta = b;
        inner_total += inner;
        eta = problem.eta(&beta)?;
        rho = update_dispersion(&problem, &eta, rho, options);
        let ll_new = problem.loglik(&eta, rho);
        trace.push(ll_new);
        let rel = (ll_new - ll).abs() / (2.0 * ll_new.abs() + 0.1);
        ll = ll_new;
        if !irls_ok {
            reason = Some(format!("IRLS hit {} iterations", options.max_irls));
        }
        if rel < options.tol && irls_ok {
            converged = true;
            break;
        }
    }
    if !converged && reason.is_none() {
        reason = Some(format!("alternation hit {} iterations", options.max_outer));
    }

    let mut alpha = rho.ln();
    if converged {
        let (b, a) = polish_newton(&problem, beta, alpha, options)?;
        beta = b;
        alpha = a;
        eta = problem.eta(&beta)?;
        ll = problem.loglik(&eta, alpha.exp());
    }
    if !ll.is_finite() {
        return Err(Error::NumericOverflow("log-likelihood is not finite".into()));
    }

    Ok(MlFit {
        params: Nb2Params::new(beta, alpha),
        loglik: ll,
        converged,
        outer_iterations: outer,
        inner_iterations: inner_total,
        failure_reason: if converged { None } else { reason },
        loglik_trace: trace,
    })
}

fn nb2_deviance(y: &[u64], eta: &DVector<f64>, rho: f64) -> f64 {
    let s: KahanSum = y
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| {
            let mu = e.exp();
            let yf = y as f64;
            let sat = if y == 0 { 0.0 } else { yf * (yf / mu).ln() };
            2.0 * (sat - (yf + rho) * ((yf + rho) / (mu + rho)).ln())
        })
        .collect();
    s.value()
}

/// Fisher-scoring IRLS at fixed ρ, with step halving whenever the deviance
/// would increase.
fn irls(problem: &Problem, mut beta: DVector<f64>, rho: f64, options: &MlOptions) -> Result<(DVector<f64>, usize, bool)> {
    let n = problem.x.nrows();
    let mut eta = problem.eta(&beta)?;
    let mut dev = nb2_deviance(problem.y, &eta, rho);
    for it in 1..=options.max_irls {
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mu = eta[i].exp();
            w[i] = mu * rho / (mu + rho);
            z[i] = eta[i] + (problem.y[i] as f64 - mu) / mu;
        }
        let proposal = linalg::weighted_least_squares(&problem.x, &w, &z)?;
        let mut step = &proposal - &beta;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &step;
            if let Ok(e) = problem.eta(&cand) {
                let d = nb2_deviance(problem.y, &e, rho);
                if d.is_finite() && d <= dev + 1e-10 * dev.abs().max(1.0) {
                    accepted = Some((cand, e, d));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((b, e, d)) = accepted else {
            // No descent direction left: we are at the optimum up to rounding.
            return Ok((beta, it, true));
        };
        let rel = (d - dev).abs() / (d.abs() + 0.1);
        beta = b;
        eta = e;
        dev = d;
        if rel < options.tol {
            return Ok((beta, it, true));
        }
    }
    Ok((beta, options.max_irls, false))
}

/// Newton search on α = log ρ at fixed η; returns the new ρ.
fn update_dispersion(problem: &Problem, eta: &DVector<f64>, rho: f64, options: &MlOptions) -> f64 {
    let (lo, hi) = (options.rho_min.ln(), options.rho_max.ln());
    let mut alpha = rho.ln().clamp(lo, hi);
    let mut ll = problem.loglik(eta, alpha.exp());
    for _ in 0..100 {
        let r = alpha.exp();
        let (mut sk, mut skap) = (KahanSum::default(), KahanSum::default());
        for (&y, &e) in problem.y.iter().zip(eta.iter()) {
            let kv = kernel_values_unchecked(e, e.exp(), r, y);
            skap.add(kv.kappa);
            sk.add(kv.k);
        }
        let d1 = r * skap.value();
        let d2 = r * r * sk.value() + r * skap.value();
        let mut step = if d2 < 0.0 { -d1 / d2 } else { d1.signum() };
        step = step.clamp(-5.0, 5.0);
        let mut moved = false;
        for _ in 0..50 {
            let cand = (alpha + step).clamp(lo, hi);
            let l = problem.loglik(eta, cand.exp());
            if l >= ll {
                moved = (cand - alpha).abs() > 0.0;
                alpha = cand;
                ll = l;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.abs() < 1e-12 {
            break;
        }
    }
    alpha.exp()
}

/// Score vector (s_β, s_α) and negative Hessian at (β, α) for design `x`.
pub fn score_and_information(
    x: &DMatrix<f64>,
    y: &[u64],
    beta: &DVector<f64>,
    alpha: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, k) = x.shape();
    let eta = x * beta;
    let rho = alpha.exp();
    let mut u = DVector::zeros(n);
    let mut psi = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let (mut skap, mut sk) = (KahanSum::default(), KahanSum::default());
    let mut g = 0.0;
    let mut varrho = 0.0;
    for i in 0..n {
        let kv = kernel_values_unchecked(eta[i], eta[i].exp(), rho, y[i]);
        let resid = y[i] as f64 - kv.mu;
        u[i] = kv.v * resid;
        psi[i] = kv.psi;
        q[i] = kv.c * resid;
        skap.add(kv.kappa);
        sk.add(kv.k);
        g = kv.g;
        varrho = kv.varrho;
    }
    let mut score = DVector::zeros(k + 1);
    score.rows_mut(0, k).copy_from(&x.tr_mul(&u));
    score[k] = g * skap.value();

    let mut info = DMatrix::zeros(k + 1, k + 1);
    info.view_mut((0, 0), (k, k)).copy_from(&linalg::weighted_gram(x, &psi));
    let h_ba = -(x.tr_mul(&q)) * g;
    info.view_mut((0, k), (k, 1)).copy_from(&h_ba);
    info.view_mut((k, 0), (1, k)).copy_from(&h_ba.transpose());
    info[(k, k)] = -(g * g * sk.value() + varrho * skap.value());
    (score, info)
}

fn polish_newton(
    problem: &Problem,
    mut beta: DVector<f64>,
    mut alpha: f64,
    options: &MlOptions,
) -> Result<(DVector<f64>, f64)> {
    let k = beta.len();
    let (lo, hi) = (options.rho_min.ln(), options.rho_max.ln());
    let mut ll = problem.loglik(&problem.eta(&beta)?, alpha.exp());
    for _ in 0..8 {
        let (score, info) = score_and_information(&problem.x, problem.y, &beta, alpha);
        let Some(chol) = info.clone().cholesky() else { break };
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let b = &beta + step.rows(0, k) * t;
            let a = (alpha + step[k] * t).clamp(lo, hi);
            if let Ok(e) = problem.eta(&b) {
                let l = problem.loglik(&e, a.exp());
                if l >= ll {
                    improved = l > ll || step.amax() * t < 1e-14;
                    beta = b;
                    alpha = a;
                    ll = l;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved || step.amax() < 1e-13 {
            break;
        }
    }
    Ok((beta, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::log_likelihood;
    use crate::sim::{sample_design, simulate_response};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
        out.columns_mut(1, x.ncols()).copy_from(x);
        out
    }

    fn synthetic(n: usize, beta: &[f64], rho: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_design(n, beta.len() - 1, 0.0, &mut rng).unwrap();
        let x1 = with_intercept(&x);
        let y = simulate_response(&x1, &DVector::from_column_slice(beta), rho, &mut rng).unwrap();
        Dataset::new(y, x1, DMatrix::zeros(n, 0)).unwrap()
    }

    #[test]
    fn defaults() {
        let o = ml_options_default();
        assert_eq!(o.max_outer, 2500);
        assert_eq!(o.max_irls, 2500);
        assert_eq!(o.tol, 1e-8);
        let text = toml::to_string(&o).unwrap();
        let back: MlOptions = toml::from_str(&text).unwrap();
        assert_eq!(back, o);
    }

    #[test]
    fn intercept_only_constant_counts() {
        let n = 40;
        let data = Dataset::new(vec![4; n], DMatrix::from_element(n, 1, 1.0), DMatrix::zeros(n, 0)).unwrap();
        let fit = fit_ml(&data, &MlOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.params.beta()[0].exp() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let data = synthetic(200, &[0.3, 0.2, -0.1], 2.0, 3);
        let mut x1 = data.x1().clone();
        x1 = x1.insert_column(3, 0.0);
        let col = x1.column(1).clone_owned();
        x1.set_column(3, &col);
        let d = Dataset::new(data.y().to_vec(), x1, DMatrix::zeros(200, 0)).unwrap();
        assert!(matches!(fit_ml(&d, &MlOptions::default()), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn converged_fit_has_small_score_and_monotone_trace() {
        for seed in 0..5 {
            let data = synthetic(800, &[1.1, 0.2, -0.15, 0.05], 1.3, seed);
            let fit = fit_ml(&data, &MlOptions::default()).unwrap();
            assert!(fit.converged);
            let n = data.n() as f64;
            let (score, _) = score_and_information(&data.full_design(), data.y(), fit.params.beta(), fit.params.alpha());
            assert!(score.amax() < 1e-5 * n, "score {score}");
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs(), "trace not monotone: {:?}", fit.loglik_trace);
            }
            let ll = log_likelihood(&fit.params, &data).unwrap();
            assert!((ll - fit.loglik).abs() < 1e-9 * ll.abs());
        }
    }

    #[test]
    fn column_scaling_equivariance() {
        let data = synthetic(600, &[0.9, 0.3, -0.2], 0.8, 11);
        let fit = fit_ml(&data, &MlOptions::default()).unwrap();
        let scales = [1.0, 4.0, 0.1];
        let mut x = data.x1().clone();
        for (j, s) in scales.iter().enumerate() {
            x.column_mut(j).scale_mut(*s);
        }
        let scaled = Dataset::new(data.y().to_vec(), x, DMatrix::zeros(600, 0)).unwrap();
        let fit2 = fit_ml(&scaled, &MlOptions::default()).unwrap();
        for j in 0..3 {
            let a = fit.params.beta()[j];
            let b = fit2.params.beta()[j] * scales[j];
            assert!((a - b).abs() < 1e-8 * a.abs().max(1e-3), "coef {j}: {a} vs {b}");
        }
        assert!((fit.params.alpha() - fit2.params.alpha()).abs() < 1e-8);
    }
}
