//! Fixtures for the benchmarks: synthetic NB2 problems of a given shape.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use walsnb::sim::{sample_design, simulate_response};
use walsnb::{fit_ml, Dataset, MlOptions, Nb2Params};

/// Constant-only focus block, `k2` correlated auxiliary regressors with
/// small coefficients, ρ = 1.
pub fn problem(seed: u64, n: usize, k2: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = sample_design(n, k2, 0.3, &mut rng).expect("valid design parameters");
    let mut full = DMatrix::from_element(n, k2 + 1, 1.0);
    full.columns_mut(1, k2).copy_from(&x);
    let mut beta = DVector::from_fn(k2 + 1, |_, _| rng.random_range(-0.1..0.1));
    beta[0] = 0.5;
    let y = simulate_response(&full, &beta, 1.0, &mut rng).expect("finite means");
    Dataset::new(y, full.columns(0, 1).into_owned(), x).expect("consistent shapes")
}

/// ML starting values for [`problem`].
pub fn ml_start(data: &Dataset) -> Nb2Params {
    fit_ml(data, &MlOptions::default()).expect("ML runs").params
}
