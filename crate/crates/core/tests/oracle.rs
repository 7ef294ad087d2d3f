//! Filter, smoother and likelihood checked against explicit conditioning of
//! the joint Gaussian of all states and observations.

mod common;

use common::joint::{joint, random_model, random_obs, rel_err_mat, rel_err_vec};
use dynfx::ssm::{filter, log_likelihood, smooth, StateSpaceModel, TimeVarying};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn filter_smoother_likelihood_match_joint_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (n, m, d) = (rng.random_range(1..=5), rng.random_range(1..=3), rng.random_range(1..=3));
        let model = random_model(&mut rng, n, m, d);
        let obs = random_obs(&mut rng, n, d, 0.15);
        let j = joint(&model);
        let fr = filter(&model, &obs).unwrap();
        let sr = smooth(&model, &fr).unwrap();
        for t in 0..n {
            let (fm, fc) = j.condition(&obs, t, t);
            assert!(rel_err_vec(&fr.steps[t].filtered_mean, &fm) < 1e-8);
            assert!(rel_err_mat(&fr.steps[t].filtered_cov, &fc) < 1e-8);
            let (sm, sc) = j.condition(&obs, t, n - 1);
            assert!(rel_err_vec(&sr.means[t], &sm) < 1e-8);
            assert!(rel_err_mat(&sr.covs[t], &sc) < 1e-8);
        }
        let oracle = j.log_density(&obs);
        assert!((fr.loglik - oracle).abs() < 1e-8 * oracle.abs().max(1.0));
        let fast = log_likelihood(&model, &obs).unwrap();
        assert!((fast - oracle).abs() < 1e-8 * oracle.abs().max(1.0));
    }
}

#[test]
fn scalar_three_step_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = random_model(&mut rng, 3, 1, 1);
    let obs = random_obs(&mut rng, 3, 1, 0.0);
    let j = joint(&model);
    let fr = filter(&model, &obs).unwrap();
    for t in 0..3 {
        let (fm, fc) = j.condition(&obs, t, t);
        assert!(rel_err_vec(&fr.steps[t].filtered_mean, &fm) < 1e-8);
        assert!(rel_err_mat(&fr.steps[t].filtered_cov, &fc) < 1e-8);
    }
}

/// Diagonal V with many more observations than states exercises the
/// information-form likelihood update.
#[test]
fn information_form_likelihood_matches_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let (n, m, d) = (rng.random_range(2..=8), rng.random_range(1..=4), rng.random_range(5..=12));
        let fs: Vec<_> = (0..n).map(|_| DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.5..1.5))).collect();
        let v = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| rng.random_range(0.05..2.0)));
        let w = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(0.0..0.3)));
        let model = StateSpaceModel::new(
            n,
            TimeVarying::varying(fs),
            TimeVarying::Constant(DMatrix::identity(m, m) * 0.9),
            v,
            w,
        )
        .unwrap();
        let obs = random_obs(&mut rng, n, d, 0.1);
        let slow = filter(&model, &obs).unwrap().loglik;
        let fast = log_likelihood(&model, &obs).unwrap();
        assert!((slow - fast).abs() < 1e-8 * slow.abs().max(1.0), "{slow} vs {fast}");
    }
}

#[test]
fn missing_point_equals_skipped_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_model(&mut rng, 4, 2, 2);
    let mut obs = random_obs(&mut rng, 4, 2, 0.0);
    obs[(2, 0)] = f64::NAN;
    obs[(2, 1)] = f64::NAN;
    let fr = filter(&model, &obs).unwrap();
    let s = &fr.steps[2];
    assert_eq!(s.filtered_mean, s.predicted_mean);
    assert_eq!(s.filtered_cov, s.predicted_cov);
    assert_eq!(s.loglik, 0.0);
}

#[test]
fn likelihood_is_sum_of_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(&mut rng, 5, 3, 3);
    let obs = random_obs(&mut rng, 5, 3, 0.2);
    let fr = filter(&model, &obs).unwrap();
    let mut acc = 0.0;
    for s in &fr.steps {
        acc += s.loglik;
    }
    assert_eq!(acc, fr.loglik);
}
