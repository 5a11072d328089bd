use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_values_unchecked, Nb2Params};
use crate::sum::KahanSum;

/// Everything the one-step estimators need, evaluated once at the starting
/// values (β̄, ᾱ).
///
/// "Barred" designs are X̄ₚ = Ψ̄^{1/2} Xₚ. The rank-1 perturbation of M̄₁ is
/// carried by `s = Ψ̄^{-1/2} q̄`, so that Xₚᵀq̄ = X̄ₚᵀs.
#[derive(Debug, Clone)]
pub struct BarQuantities {
    pub beta_bar: DVector<f64>,
    pub alpha_bar: f64,
    pub eta_bar: DVector<f64>,
    pub mu_bar: DVector<f64>,
    /// Diagonal of Ψ̄.
    pub psi_bar: DVector<f64>,
    pub sqrt_psi: DVector<f64>,
    /// Diagonal of V̄.
    pub v_bar: DVector<f64>,
    /// Diagonal of C̄.
    pub c_bar: DVector<f64>,
    /// ū = Ψ̄^{-1/2} V̄ (y − μ̄)
    pub u_bar: DVector<f64>,
    /// ȳ = X̄₁β̄₁ + X̄₂β̄₂ + ū
    pub y_bar: DVector<f64>,
    /// ȳ₀ = ȳ − ḡ Ψ̄^{-1/2} q̄ ᾱ
    pub y0_bar: DVector<f64>,
    pub kappa_bar: DVector<f64>,
    pub k_bar: DVector<f64>,
    pub g_bar: f64,
    pub varrho_bar: f64,
    pub t_bar: f64,
    pub eps_bar: f64,
    /// q̄ = C̄ (y − μ̄)
    pub q_bar: DVector<f64>,
    /// Ψ̄^{-1/2} q̄
    pub s: DVector<f64>,
    /// ḡ²⟨k̄, 1⟩ + ϱ̄⟨κ̄, 1⟩
    pub denom: f64,
    pub x1_bar: DMatrix<f64>,
    pub x2_bar: DMatrix<f64>,
}

impl BarQuantities {
    /// ḡ ε̄, the weight on the rank-1 term.
    pub fn g_eps(&self) -> f64 {
        self.g_bar * self.eps_bar
    }

    pub fn n(&self) -> usize {
        self.eta_bar.len()
    }

    /// α from the linearised dispersion equation given a fitted linear
    /// predictor increment `lin = X₁β₁ + X₂β₂` (unbarred).
    pub fn alpha_given_q_dot(&self, q_dot_lin: f64) -> f64 {
        -(self.t_bar + self.g_bar * q_dot_lin) / self.denom
    }
}

fn scale_rows(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut row, &wi) in out.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    out
}

/// Evaluate all barred quantities at `start`, whose β must follow the
/// (X₁, X₂) column order of `data`.
pub fn compute_bars(data: &Dataset, start: &Nb2Params) -> Result<BarQuantities> {
    let n = data.n();
    let (k1, k2) = (data.k1(), data.k2());
    if start.beta().len() != k1 + k2 {
        return Err(Error::DimensionMismatch(format!(
            "starting beta has {} entries, design has {} columns",
            start.beta().len(),
            k1 + k2
        )));
    }
    let beta_bar = start.beta().clone();
    let alpha_bar = start.alpha();
    let rho = start.rho();
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("starting dispersion {rho} is not positive and finite")));
    }
    let eta_bar = data.x1() * beta_bar.rows(0, k1) + data.x2() * beta_bar.rows(k1, k2);

    let mut mu_bar = DVector::zeros(n);
    let mut psi_bar = DVector::zeros(n);
    let mut v_bar = DVector::zeros(n);
    let mut c_bar = DVector::zeros(n);
    let mut kappa_bar = DVector::zeros(n);
    let mut k_bar = DVector::zeros(n);
    let (mut g_bar, mut varrho_bar) = (rho, rho);
    for i in 0..n {
        let eta = eta_bar[i];
        let mu = eta.exp();
        if !(eta.is_finite() && mu > 0.0 && mu.is_finite()) {
            return Err(Error::NumericOverflow(format!("starting mean at row {i}")));
        }
        let kv = kernel_values_unchecked(eta, mu, rho, data.y()[i]);
        if !(kv.psi > 0.0 && kv.psi.is_finite()) {
            return Err(Error::Domain(format!("Hessian weight at row {i} is {}", kv.psi)));
        }
        mu_bar[i] = kv.mu;
        psi_bar[i] = kv.psi;
        v_bar[i] = kv.v;
        c_bar[i] = kv.c;
        kappa_bar[i] = kv.kappa;
        k_bar[i] = kv.k;
        g_bar = kv.g;
        varrho_bar = kv.varrho;
    }

    let resid = DVector::from_iterator(n, data.y().iter().zip(mu_bar.iter()).map(|(&y, &m)| y as f64 - m));
    let sqrt_psi = psi_bar.map(f64::sqrt);
    let q_bar = c_bar.component_mul(&resid);
    let s = q_bar.component_div(&sqrt_psi);
    let u_bar = v_bar.component_mul(&resid).component_div(&sqrt_psi);
    let y_bar = sqrt_psi.component_mul(&eta_bar) + &u_bar;
    let y0_bar = &y_bar - &s * (g_bar * alpha_bar);

    let sum_kappa: f64 = kappa_bar.iter().copied().collect::<KahanSum>().value();
    let sum_k: f64 = k_bar.iter().copied().collect::<KahanSum>().value();
    let denom = g_bar * g_bar * sum_k + varrho_bar * sum_kappa;
    if !(denom.abs() >= 1e-12 * n as f64) {
        return Err(Error::DegenerateDenominator(denom));
    }
    let q_dot_eta: f64 = q_bar.iter().zip(eta_bar.iter()).map(|(a, b)| a * b).collect::<KahanSum>().value();
    let t_bar = g_bar * sum_kappa - g_bar * q_dot_eta - denom * alpha_bar;
    let eps_bar = g_bar / denom;

    Ok(BarQuantities {
        x1_bar: scale_rows(data.x1(), &sqrt_psi),
        x2_bar: scale_rows(data.x2(), &sqrt_psi),
        beta_bar,
        alpha_bar,
        eta_bar,
        mu_bar,
        psi_bar,
        sqrt_psi,
        v_bar,
        c_bar,
        u_bar,
        y_bar,
        y0_bar,
        kappa_bar,
        k_bar,
        g_bar,
        varrho_bar,
        t_bar,
        eps_bar,
        q_bar,
        s,
        denom,
    })
}
