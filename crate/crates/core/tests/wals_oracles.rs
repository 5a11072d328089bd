mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use walsnb::wals::{compute_bars, m1_quadratic_form};
use walsnb::{fit_walsnb_with, Dataset, Nb2Params, PriorSpec, RestrictionMatrix, WalsPrepared, WeightRule};

#[test]
fn transformed_auxiliary_block_is_orthonormal_under_m1() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let (n, k1, k2) = random_dims(&mut rng, (100, 300), (1, 5), (1, 20));
        let inst = ml_instance(1000 + case, n, k1, k2);
        let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
        let z2 = &prep.transforms.z2_bar;
        let ident = z2.transpose() * dense_m1(&prep.bars) * z2 / n as f64 - DMatrix::identity(k2, k2);
        assert!(max_abs(&ident) < 1e-8, "case {case}: {}", max_abs(&ident));
    }
}

#[test]
fn implicit_m1_matches_dense_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..20 {
        let (n, k1, k2) = random_dims(&mut rng, (30, 60), (1, 4), (1, 6));
        let inst = perturbed_instance(2000 + case, n, k1, k2);
        let bars = compute_bars(&inst.data, &inst.start).unwrap();
        let a = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let dense = a.transpose() * dense_m1(&bars) * &b;
        let fast = m1_quadratic_form(&bars, &a, &b).unwrap();
        let scale = max_abs(&dense).max(1.0);
        assert!(max_abs(&(dense - fast)) < 1e-10 * scale, "case {case}");
    }
}

#[test]
fn unrestricted_step_solves_the_linearised_score_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..20 {
        let (n, k1, k2) = random_dims(&mut rng, (100, 300), (1, 4), (1, 10));
        let inst = perturbed_instance(3000 + case, n, k1, k2);
        let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
        let est = &prep.step.estimate;
        let beta = stack(&est.beta1, &est.beta2);
        let r = taylor_residual(&inst.data, &inst.start, &beta, est.alpha);
        assert!(r.amax() < 1e-8 * n as f64, "case {case}: {}", r.amax());
        // the step is not trivial: the start was not a stationary point
        assert!((beta - inst.start.beta()).amax() > 1e-4);
    }
}

#[test]
fn ml_start_is_a_fixed_point_of_the_unrestricted_step() {
    let inst = ml_instance(7, 400, 2, 4);
    let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
    let est = &prep.step.estimate;
    let beta = stack(&est.beta1, &est.beta2);
    assert!((beta - inst.start.beta()).amax() < 1e-6);
    assert!((est.alpha - inst.start.alpha()).abs() < 1e-6);
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

#[test]
fn single_auxiliary_transformed_and_untransformed_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..20 {
        let (n, k1, _) = random_dims(&mut rng, (100, 300), (1, 5), (1, 1));
        let inst = perturbed_instance(4000 + case, n, k1, 1);
        let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
        let tr = &prep.transforms;
        let sys = dense_system(&inst.data, &inst.start, &prep.bars);

        let beta_u = sys.a.clone().lu().solve(&sys.rhs).unwrap();
        let g1u = beta_u.rows(0, k1).component_div(&tr.delta1);
        let g2u = &tr.xi_half * beta_u.rows(k1, 1).component_div(&tr.delta2);
        let est_u = &prep.step.estimate;
        assert!(max_abs_diff(&g1u, &est_u.gamma1) < 1e-8 * g1u.amax().max(1.0), "case {case}");
        assert!(max_abs_diff(&g2u, &est_u.gamma2) < 1e-8 * g2u.amax().max(1.0), "case {case}");
        assert!((sys.alpha(&prep.bars, &beta_u) - est_u.alpha).abs() < 1e-8);

        let a11 = sys.a.view((0, 0), (k1, k1)).into_owned();
        let beta_r = a11.lu().solve(&sys.rhs.rows(0, k1).into_owned()).unwrap();
        let g1r = beta_r.component_div(&tr.delta1);
        let est_r = prep.restricted(&RestrictionMatrix::fully_restricted(1)).unwrap();
        assert!(max_abs_diff(&g1r, &est_r.gamma1) < 1e-8 * g1r.amax().max(1.0), "case {case}");
        assert_eq!(est_r.gamma2[0], 0.0);
        let mut beta_r_full = DVector::zeros(k1 + 1);
        beta_r_full.rows_mut(0, k1).copy_from(&beta_r);
        assert!((sys.alpha(&prep.bars, &beta_r_full) - est_r.alpha).abs() < 1e-8);
    }
}

/// Restricted one-step estimator in the transformed basis, solved densely:
/// regress on [Z̄₁, kept columns of Z̄₂] under the linearised system.
fn dense_transformed_restricted(prep: &WalsPrepared, sys: &DenseSystem, keep: &[bool]) -> (DVector<f64>, DVector<f64>, f64) {
    let tr = &prep.transforms;
    let (k1, k2) = (tr.k1(), tr.k2());
    let mut p = DMatrix::zeros(k1 + k2, k1 + k2);
    p.view_mut((0, 0), (k1, k1)).copy_from(&DMatrix::from_diagonal(&tr.delta1));
    p.view_mut((k1, k1), (k2, k2)).copy_from(&tr.p2);
    let cols: Vec<usize> = (0..k1).chain((0..k2).filter(|&h| keep[h]).map(|h| k1 + h)).collect();
    let p_sel = p.select_columns(&cols);
    let lhs = p_sel.transpose() * &sys.a * &p_sel;
    let rhs = p_sel.transpose() * &sys.rhs;
    let g = lhs.lu().solve(&rhs).unwrap();
    let beta = &p_sel * &g;
    let mut g1 = DVector::zeros(k1);
    let mut g2 = DVector::zeros(k2);
    for (i, &c) in cols.iter().enumerate() {
        if c < k1 {
            g1[c] = g[i];
        } else {
            g2[c - k1] = g[i];
        }
    }
    (g1, g2, sys.alpha(&prep.bars, &beta))
}

#[test]
fn weight_assembly_equals_explicit_model_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..15 {
        let (n, k1, k2) = random_dims(&mut rng, (80, 250), (1, 3), (1, 3));
        let inst = perturbed_instance(5000 + case, n, k1, k2);
        let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
        let sys = dense_system(&inst.data, &inst.start, &prep.bars);
        let models = 1usize << k2;
        let raw: Vec<f64> = (0..models).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let lambda: Vec<f64> = raw.iter().map(|v| v / total).collect();

        let mut g1 = DVector::zeros(k1);
        let mut g2 = DVector::zeros(k2);
        let mut alpha = 0.0;
        let mut w = vec![0.0; k2];
        for (mask, &l) in lambda.iter().enumerate() {
            let keep: Vec<bool> = (0..k2).map(|h| mask >> h & 1 == 1).collect();
            let (a1, a2, aa) = dense_transformed_restricted(&prep, &sys, &keep);
            g1 += a1 * l;
            g2 += a2 * l;
            alpha += l * aa;
            for h in 0..k2 {
                if keep[h] {
                    w[h] += l;
                }
            }
            // the closed form for each restricted model agrees too
            let excluded = (0..k2).filter(|&h| !keep[h]);
            let closed = prep.restricted(&RestrictionMatrix::new(k2, excluded).unwrap()).unwrap();
            let (b1, b2, _) = dense_transformed_restricted(&prep, &sys, &keep);
            assert!(max_abs_diff(&closed.gamma1, &b1) < 1e-10 * b1.amax().max(1.0));
            assert!(max_abs_diff(&closed.gamma2, &b2) < 1e-10 * b2.amax().max(1.0));
        }
        let est = prep.assemble(&w).unwrap();
        assert!(max_abs_diff(&est.gamma1, &g1) < 1e-10 * g1.amax().max(1.0), "case {case}");
        assert!(max_abs_diff(&est.gamma2, &g2) < 1e-10 * g2.amax().max(1.0), "case {case}");
        assert!((est.alpha - alpha).abs() < 1e-10 * alpha.abs().max(1.0), "case {case}");
    }
}

#[test]
fn fixed_weight_extremes_reproduce_unrestricted_and_restricted_fits() {
    let inst = perturbed_instance(21, 200, 2, 3);
    let prep = WalsPrepared::new(&inst.data, &inst.start).unwrap();
    let ones = fit_walsnb_with(&inst.data, &WeightRule::Fixed(vec![1.0; 3]), &inst.start).unwrap();
    assert!(max_abs_diff(&ones.beta2_hat, &prep.step.estimate.beta2) < 1e-14);
    let zeros = fit_walsnb_with(&inst.data, &WeightRule::Fixed(vec![0.0; 3]), &inst.start).unwrap();
    let r = prep.restricted(&RestrictionMatrix::fully_restricted(3)).unwrap();
    assert!(max_abs_diff(&zeros.beta1_hat, &r.beta1) < 1e-14);
    assert_eq!(zeros.beta2_hat.amax(), 0.0);
    assert!(fit_walsnb_with(&inst.data, &WeightRule::Fixed(vec![1.5, 0.0, 0.0]), &inst.start).is_err());
    assert!(fit_walsnb_with(&inst.data, &WeightRule::Fixed(vec![1.0]), &inst.start).is_err());
}

fn scaled(data: &Dataset, col_scale: &[f64]) -> Dataset {
    let mut x2 = data.x2().clone();
    for (mut c, &s) in x2.column_iter_mut().zip(col_scale) {
        c *= s;
    }
    Dataset::new(data.y().to_vec(), data.x1().clone(), x2).unwrap()
}

#[test]
fn rescaling_auxiliary_columns_rescales_their_coefficients() {
    let inst = ml_instance(31, 300, 2, 4);
    let s = [2.0, 0.1, 7.5, 1.0];
    let data_s = scaled(&inst.data, &s);
    let mut beta_s = inst.start.beta().clone();
    for (h, &c) in s.iter().enumerate() {
        beta_s[2 + h] /= c;
    }
    let start_s = Nb2Params::new(beta_s, inst.start.alpha());
    for prior in [PriorSpec::laplace_default(), PriorSpec::weibull_default()] {
        let rule = WeightRule::Prior(prior);
        let a = fit_walsnb_with(&inst.data, &rule, &inst.start).unwrap();
        let b = fit_walsnb_with(&data_s, &rule, &start_s).unwrap();
        for h in 0..4 {
            assert!((a.beta2_hat[h] - b.beta2_hat[h] * s[h]).abs() < 1e-9 * a.beta2_hat[h].abs().max(1e-3));
        }
        assert!(max_abs_diff(&a.beta1_hat, &b.beta1_hat) < 1e-9);
        assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-9);
        let wa = DVector::from_vec(a.w_diag.clone());
        assert!(max_abs_diff(&wa, &DVector::from_vec(b.w_diag.clone())) < 1e-9);
    }
}

#[test]
fn permuting_auxiliary_columns_permutes_coefficients() {
    let inst = ml_instance(32, 300, 1, 4);
    let perm = [2usize, 0, 3, 1];
    let x2p = inst.data.x2().select_columns(&perm);
    let data_p = Dataset::new(inst.data.y().to_vec(), inst.data.x1().clone(), x2p).unwrap();
    let mut beta_p = inst.start.beta().clone();
    for (new, &old) in perm.iter().enumerate() {
        beta_p[1 + new] = inst.start.beta()[1 + old];
    }
    let start_p = Nb2Params::new(beta_p, inst.start.alpha());
    let rule = WeightRule::Prior(PriorSpec::weibull_default());
    let a = fit_walsnb_with(&inst.data, &rule, &inst.start).unwrap();
    let b = fit_walsnb_with(&data_p, &rule, &start_p).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((a.beta2_hat[old] - b.beta2_hat[new]).abs() < 1e-9);
    }
    assert!((a.alpha_hat - b.alpha_hat).abs() < 1e-9);
    let x = inst.data.full_design();
    let mu_a = walsnb::predict_mean(&a, &x).unwrap();
    let mu_b = walsnb::predict_mean(&b, &data_p.full_design()).unwrap();
    assert!(max_abs_diff(&mu_a, &mu_b) < 1e-9 * mu_a.amax());
}

#[test]
fn prior_weights_shrink_and_stay_in_the_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..10 {
        let (n, k1, k2) = random_dims(&mut rng, (150, 400), (1, 3), (2, 12));
        let inst = ml_instance(6000 + case, n, k1, k2);
        for prior in [PriorSpec::laplace_default(), PriorSpec::weibull_default()] {
            let fit = fit_walsnb_with(&inst.data, &WeightRule::Prior(prior), &inst.start).unwrap();
            for (h, &w) in fit.w_diag.iter().enumerate() {
                assert!((0.0..=1.0).contains(&w));
                assert!(fit.gamma2_hat[h].abs() <= fit.gamma2_tilde_u[h].abs() + 1e-15);
            }
            assert!(fit.rho_hat > 0.0);
        }
    }
}
