use dynfx::robust::{robust_filter, Loss, RobustConfig};
use dynfx::ssm::{filter, StateSpaceModel, TimeVarying};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn spd(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() * 0.5 + DMatrix::identity(k, k) * floor
}

fn random_instance(seed: u64) -> (StateSpaceModel, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, d) = (rng.random_range(1..=50), rng.random_range(1..=4), rng.random_range(1..=4));
    let f = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(m, m, |i, j| if i == j { rng.random_range(0.5..1.0) } else { rng.random_range(-0.2..0.2) });
    let model = StateSpaceModel::new(n, TimeVarying::Constant(f), TimeVarying::Constant(g), spd(&mut rng, d, 0.2), spd(&mut rng, m, 0.05))
        .unwrap()
        .with_prior(DVector::zeros(m), DMatrix::identity(m, m) * 10.0)
        .unwrap();
    let obs = DMatrix::from_fn(n, d, |_, _| if rng.random_bool(0.05) { f64::NAN } else { rng.random_range(-2.0..2.0) });
    (model, obs)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn squared_loss_is_the_kalman_filter() {
    let squared = RobustConfig { loss: Loss::Squared, ..RobustConfig::default() };
    for seed in 0..200 {
        let (model, obs) = random_instance(seed);
        let std = filter(&model, &obs).unwrap();
        let rob = robust_filter(&model, &obs, &squared).unwrap().filter;
        for (s, r) in std.steps.iter().zip(&rob.steps) {
            for (a, b) in r.filtered_mean.iter().zip(s.filtered_mean.iter()) {
                assert!(rel(*a, *b) < 1e-8, "seed {seed}: {a} vs {b}");
            }
            for (a, b) in r.filtered_cov.iter().zip(s.filtered_cov.iter()) {
                assert!(rel(*a, *b) < 1e-8, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn squared_loss_matches_under_the_diffuse_prior() {
    let squared = RobustConfig { loss: Loss::Squared, ..RobustConfig::default() };
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, d) = (rng.random_range(1..=30), rng.random_range(1..=3), rng.random_range(1..=3));
        let f = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
        let g = DMatrix::from_fn(m, m, |i, j| if i == j { rng.random_range(0.5..1.0) } else { rng.random_range(-0.2..0.2) });
        let (v, w) = (spd(&mut rng, d, 0.2), spd(&mut rng, m, 0.05));
        let model = StateSpaceModel::new(n, TimeVarying::Constant(f), TimeVarying::Constant(g), v, w).unwrap();
        let obs = DMatrix::from_fn(n, d, |_, _| if rng.random_bool(0.05) { f64::NAN } else { rng.random_range(-2.0..2.0) });
        let std = filter(&model, &obs).unwrap();
        let rob = robust_filter(&model, &obs, &squared).unwrap().filter;
        for (s, r) in std.steps.iter().zip(&rob.steps) {
            for (a, b) in r.filtered_mean.iter().zip(s.filtered_mean.iter()).chain(r.filtered_cov.iter().zip(s.filtered_cov.iter())) {
                assert!(rel(*a, *b) < 1e-8, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

fn local_level(n: usize) -> StateSpaceModel {
    StateSpaceModel::new(
        n,
        TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
        TimeVarying::Constant(DMatrix::from_element(1, 1, 1.0)),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.05),
    )
    .unwrap()
}

#[test]
fn outlier_moves_robust_mean_less() {
    let n = 40;
    let model = local_level(n);
    let cfg = RobustConfig::default();
    let mut wins = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut level = 0.0;
        let clean = DMatrix::from_fn(n, 1, |_, _| {
            level += 0.05f64.sqrt() * noise.sample(&mut rng);
            level + noise.sample(&mut rng)
        });
        let at = rng.random_range(10..n);
        let mut dirty = clean.clone();
        dirty[(at, 0)] += if rng.random_bool(0.5) { 50.0 } else { -50.0 };
        let reference = filter(&model, &clean).unwrap().steps[at].filtered_mean[0];
        let standard = filter(&model, &dirty).unwrap().steps[at].filtered_mean[0];
        let robust = robust_filter(&model, &dirty, &cfg).unwrap().filter.steps[at].filtered_mean[0];
        if (robust - reference).abs() < (standard - reference).abs() {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn constant_series_stays_quadratic() {
    let model = local_level(30);
    let obs = DMatrix::from_element(30, 1, 2.0);
    let std = filter(&model, &obs).unwrap();
    let rob = robust_filter(&model, &obs, &RobustConfig::default()).unwrap();
    for (s, r) in std.steps.iter().zip(&rob.filter.steps) {
        assert!((s.filtered_mean[0] - r.filtered_mean[0]).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn irls_objective_never_increases(seed in any::<u64>(), k in 0.5f64..2.5) {
        let (model, mut obs) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in obs.iter_mut() {
            if rng.random_bool(0.1) {
                *v += rng.random_range(-30.0..30.0);
            }
        }
        let cfg = RobustConfig { loss: Loss::Huber { k }, ..RobustConfig::default() };
        let res = robust_filter(&model, &obs, &cfg).unwrap();
        for tr in &res.irls {
            for w in tr.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn outlier_influence_saturates(seed in any::<u64>(), sign in prop::bool::ANY) {
        let (model, obs) = random_instance(seed);
        let t = obs.nrows() - 1;
        let Some(i) = (0..obs.ncols()).find(|&i| !obs[(t, i)].is_nan()) else { return Ok(()); };
        let sigma = model.effective_obs_cov()[(i, i)].sqrt();
        let shifted = |scale: f64| {
            let mut moved = obs.clone();
            moved[(t, i)] += if sign { scale * sigma } else { -scale * sigma };
            robust_filter(&model, &moved, &RobustConfig::default()).unwrap().filter.steps[t].filtered_mean.clone()
        };
        // once the entry is clipped its pull on the update no longer grows
        let (near, far) = (shifted(1e6), shifted(1e8));
        let drift = (&far - &near).norm();
        prop_assert!(drift <= 1e-6 * (1.0 + near.norm()), "mean still moves by {drift}");
    }
}
