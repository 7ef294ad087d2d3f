use std::sync::Arc;

use dynfx::estimation::{fit_mle, profile_check, FreeParam, ParameterSpec, Role};
use dynfx::ssm::{StateSpaceModel, TimeVarying};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn simulate_level(n: usize, v: f64, w: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sv = Normal::new(0.0, v.sqrt()).unwrap();
    let sw = Normal::new(0.0, w.sqrt()).unwrap();
    let mut level = 0.0;
    DMatrix::from_fn(n, 1, |_, _| {
        level += sw.sample(&mut rng);
        level + sv.sample(&mut rng)
    })
}

fn level_spec(n: usize, init: (f64, f64)) -> ParameterSpec {
    ParameterSpec::new(
        vec![FreeParam::variance("v", Role::ObsVar, init.0), FreeParam::variance("w", Role::StateVar, init.1)],
        Arc::new(move |psi| {
            StateSpaceModel::new(
                n,
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                DMatrix::from_element(1, 1, psi[0]),
                DMatrix::from_element(1, 1, psi[1]),
            )
        }),
    )
    .unwrap()
}

fn sample_var(x: &DMatrix<f64>) -> f64 {
    let m = x.mean();
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

#[test]
fn local_level_recovery() {
    let n = 2000;
    let mut v_err = Vec::new();
    for seed in 0..20 {
        let obs = simulate_level(n, 1.0, 0.01, seed);
        let s2 = sample_var(&obs);
        let spec = level_spec(n, (s2, 0.01 * s2));
        let fit = fit_mle(&spec, &obs, 5, seed).unwrap();
        let at_truth = spec.loglik(&[1.0, 0.01], &obs).unwrap();
        assert!(fit.loglik >= at_truth - 1e-6, "seed {seed}: {} < {}", fit.loglik, at_truth);
        assert!(fit.starts.iter().all(|s| fit.loglik >= s.loglik));
        v_err.push((fit.psi_hat[0] - 1.0).abs());
        let w_ratio = fit.psi_hat[1] / 0.01;
        assert!(w_ratio > 1.0 / 10.0 && w_ratio < 10.0, "seed {seed}: w = {}", fit.psi_hat[1]);
    }
    v_err.sort_by(f64::total_cmp);
    let median = 0.5 * (v_err[9] + v_err[10]);
    assert!(median <= 0.25, "median relative error {median}");
}

#[test]
fn fit_is_deterministic() {
    let obs = simulate_level(300, 1.0, 0.05, 42);
    let spec = level_spec(300, (1.0, 0.1));
    let a = fit_mle(&spec, &obs, 3, 9).unwrap();
    let b = fit_mle(&spec, &obs, 3, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reported_optimum_beats_every_start() {
    let obs = simulate_level(200, 0.5, 0.02, 3);
    let spec = level_spec(200, (1.0, 0.1));
    let fit = fit_mle(&spec, &obs, 4, 1).unwrap();
    for s in &fit.starts {
        let l0 = spec.loglik(&s.initial, &obs).unwrap();
        assert!(fit.loglik >= l0);
    }
    assert_eq!(fit.psi_hat, fit.starts[fit.best_start_index].final_psi);
}

#[test]
fn no_free_parameters_returns_fixed_likelihood() {
    let obs = simulate_level(50, 1.0, 0.1, 1);
    let spec = ParameterSpec::new(
        vec![],
        Arc::new(|_| {
            StateSpaceModel::new(
                50,
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 0.1),
            )
        }),
    )
    .unwrap();
    let fit = fit_mle(&spec, &obs, 5, 0).unwrap();
    assert!(fit.psi_hat.is_empty());
    assert_eq!(fit.loglik, spec.loglik(&[], &obs).unwrap());
}

/// One free observation variance with W fixed: a grid search locates the
/// optimum, which then passes the profile check.
#[test]
fn profile_check_on_grid_optimum() {
    let n = 400;
    let obs = simulate_level(n, 0.7, 0.0, 5);
    let spec = ParameterSpec::new(
        vec![FreeParam::variance("v", Role::ObsVar, 1.0)],
        Arc::new(move |psi| {
            StateSpaceModel::new(
                n,
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
                DMatrix::from_element(1, 1, psi[0]),
                DMatrix::zeros(1, 1),
            )
        }),
    )
    .unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0);
    let (mut lo, mut hi) = (0.05, 5.0);
    for _ in 0..6 {
        let step = (hi - lo) / 200.0;
        for k in 0..=200 {
            let v = lo + step * k as f64;
            let l = spec.loglik(&[v], &obs).unwrap();
            if l > best.0 {
                best = (l, v);
            }
        }
        lo = (best.1 - step).max(1e-6);
        hi = best.1 + step;
    }
    let report = profile_check(&spec, &obs, &[best.1], 50, 2).unwrap();
    assert!(report.ok);
    let poor = profile_check(&spec, &obs, &[best.1 * 1.6], 50, 2).unwrap();
    assert!(!poor.ok);
    assert!(poor.offending.is_some());
}
