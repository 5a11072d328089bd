//! Random problem instances and dense reference computations shared by the
//! integration and acceptance tests. Everything here is built from the data
//! and the score/information of the full model, never from the estimator's
//! internal operators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use walsnb::kernels::kernel_values;
use walsnb::ml::score_and_information;
use walsnb::sim::{sample_design, simulate_response};
use walsnb::wals::BarQuantities;
use walsnb::{fit_ml, Dataset, MlOptions, Nb2Params};

pub struct Instance {
    pub data: Dataset,
    pub start: Nb2Params,
}

/// Synthetic NB2 data with a constant plus k₁ − 1 focus columns and k₂
/// auxiliary columns, all correlated normal draws.
pub fn synthetic(seed: u64, n: usize, k1: usize, k2: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = k1 + k2;
    let x = sample_design(n, k - 1, 0.3, &mut rng).unwrap();
    let mut full = DMatrix::from_element(n, k, 1.0);
    full.columns_mut(1, k - 1).copy_from(&x);
    let mut beta = DVector::from_fn(k, |_, _| rng.random_range(-0.25..0.25));
    beta[0] = rng.random_range(0.0..1.0);
    let rho = rng.random_range(0.5..3.0);
    let y = simulate_response(&full, &beta, rho, &mut rng).unwrap();
    Dataset::new(y, full.columns(0, k1).into_owned(), full.columns(k1, k2).into_owned()).unwrap()
}

/// Instance whose starting values are the converged ML fit.
pub fn ml_instance(seed: u64, n: usize, k1: usize, k2: usize) -> Instance {
    let data = synthetic(seed, n, k1, k2);
    let start = fit_ml(&data, &MlOptions::default()).unwrap().require_converged().unwrap().params;
    Instance { data, start }
}

/// Instance started away from the optimum: ML plus a small random shift.
pub fn perturbed_instance(seed: u64, n: usize, k1: usize, k2: usize) -> Instance {
    let Instance { data, start } = ml_instance(seed, n, k1, k2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let beta = start.beta().map(|b| b + rng.random_range(-0.05..0.05));
    let alpha = start.alpha() + rng.random_range(-0.1..0.1);
    Instance { data, start: Nb2Params::new(beta, alpha) }
}

/// Dimensions drawn uniformly from the given ranges.
pub fn random_dims(rng: &mut ChaCha8Rng, n: (usize, usize), k1: (usize, usize), k2: (usize, usize)) -> (usize, usize, usize) {
    (rng.random_range(n.0..=n.1), rng.random_range(k1.0..=k1.1), rng.random_range(k2.0..=k2.1))
}

/// G = I + ḡε̄ s sᵀ materialised.
pub fn dense_g(bars: &BarQuantities) -> DMatrix<f64> {
    let n = bars.n();
    DMatrix::identity(n, n) + &bars.s * bars.s.transpose() * bars.g_eps()
}

/// M̄₁ = G − GX̄₁(X̄₁ᵀGX̄₁)⁻¹X̄₁ᵀG by plain LU inversion.
pub fn dense_m1(bars: &BarQuantities) -> DMatrix<f64> {
    let g = dense_g(bars);
    let gx1 = &g * &bars.x1_bar;
    let inner = (bars.x1_bar.transpose() * &gx1).try_inverse().expect("focus block invertible");
    &g - &gx1 * inner * gx1.transpose()
}

/// Residual of the first-order expansion of the unrestricted score
/// equations, s̄ − H̄(θ − θ̄), with H̄ the negative Hessian at the start.
pub fn taylor_residual(data: &Dataset, start: &Nb2Params, beta: &DVector<f64>, alpha: f64) -> DVector<f64> {
    let x = data.full_design();
    let (score, info) = score_and_information(&x, data.y(), start.beta(), start.alpha());
    let k = beta.len();
    let mut step = DVector::zeros(k + 1);
    step.rows_mut(0, k).copy_from(&(beta - start.beta()));
    step[k] = alpha - start.alpha();
    score - info * step
}

/// The linearised system Āθ = b in original coordinates, assembled from
/// the kernel values rather than from the barred designs.
pub struct DenseSystem {
    pub a: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Xᵀq̄
    pub xq: DVector<f64>,
}

impl DenseSystem {
    /// α solving the linearised dispersion equation at coefficients β.
    pub fn alpha(&self, bars: &BarQuantities, beta: &DVector<f64>) -> f64 {
        -(bars.t_bar + bars.g_bar * self.xq.dot(beta)) / bars.denom
    }
}

pub fn dense_system(data: &Dataset, start: &Nb2Params, bars: &BarQuantities) -> DenseSystem {
    let x = data.full_design();
    let n = data.n();
    let eta = &x * start.beta();
    let mut psi = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let kv = kernel_values(eta[i], start.rho(), data.y()[i]).unwrap();
        psi[i] = kv.psi;
        q[i] = kv.c * (data.y()[i] as f64 - kv.mu);
    }
    let mut xpsi = x.clone();
    for (mut row, &p) in xpsi.row_iter_mut().zip(psi.iter()) {
        row *= p;
    }
    let xq = x.tr_mul(&q);
    let a = x.tr_mul(&xpsi) + &xq * xq.transpose() * bars.g_eps();
    let sqrt_psi = psi.map(f64::sqrt);
    let rhs = x.tr_mul(&sqrt_psi.component_mul(&bars.y0_bar)) - &xq * (bars.t_bar * bars.eps_bar);
    DenseSystem { a, rhs, xq }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
