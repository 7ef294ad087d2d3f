//! Brute-force joint-Gaussian oracle shared by test targets.

#![allow(dead_code)]

use dynfx::ssm::{StateSpaceModel, TimeVarying};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Joint {
    /// mean of (theta_1..theta_n, x_1..x_n)
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
    m: usize,
    d: usize,
}

pub fn random_spd(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(k, k) * floor
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> StateSpaceModel {
    let fs: Vec<_> = (0..n).map(|_| DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.5..1.5))).collect();
    let gs: Vec<_> = (0..n).map(|_| DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))).collect();
    let v = random_spd(rng, d, 0.2);
    let w = random_spd(rng, m, 0.1);
    let m0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let c0 = random_spd(rng, m, 0.3);
    let offset = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    StateSpaceModel::new(n, TimeVarying::varying(fs), TimeVarying::varying(gs), v, w)
        .unwrap()
        .with_prior(m0, c0)
        .unwrap()
        .with_state_offset(offset)
        .unwrap()
}

/// Builds the joint law by writing every state as an affine map of
/// (theta_0, w_1..w_n) and every observation as that plus v_t.
pub fn joint(model: &StateSpaceModel) -> Joint {
    let (n, m, d) = (model.n(), model.state_dim(), model.obs_dim());
    // innovations: theta_0 (m), w_1..w_n (n*m), v_1..v_n (n*d)
    let k = m + n * m + n * d;
    let mut inn_cov = DMatrix::zeros(k, k);
    let mut inn_mean = DVector::zeros(k);
    inn_cov.view_mut((0, 0), (m, m)).copy_from(model.prior_cov());
    inn_mean.rows_mut(0, m).copy_from(model.prior_mean());
    for t in 0..n {
        inn_cov.view_mut((m + t * m, m + t * m), (m, m)).copy_from(model.state_cov());
        let o = m + n * m + t * d;
        inn_cov.view_mut((o, o), (d, d)).copy_from(model.effective_obs_cov());
    }
    let rows = n * m + n * d;
    let mut a = DMatrix::zeros(rows, k);
    let mut c = DVector::zeros(rows);
    let mut prev = DMatrix::zeros(m, k);
    prev.view_mut((0, 0), (m, m)).copy_from(&DMatrix::identity(m, m));
    let mut prev_c = DVector::zeros(m);
    let offset = model.state_offset().cloned().unwrap_or_else(|| DVector::zeros(m));
    for t in 0..n {
        let g = model.transition_at(t).unwrap();
        let mut cur = g * &prev;
        for i in 0..m {
            cur[(i, m + t * m + i)] += 1.0;
        }
        let cur_c = g * &prev_c + &offset;
        a.view_mut((t * m, 0), (m, k)).copy_from(&cur);
        c.rows_mut(t * m, m).copy_from(&cur_c);
        let f = model.design_at(t).unwrap();
        let mut obs = f * &cur;
        for i in 0..d {
            obs[(i, m + n * m + t * d + i)] += 1.0;
        }
        a.view_mut((n * m + t * d, 0), (d, k)).copy_from(&obs);
        c.rows_mut(n * m + t * d, d).copy_from(&(f * &cur_c));
        prev = cur;
        prev_c = cur_c;
    }
    Joint { mean: &a * inn_mean + c, cov: &a * inn_cov * a.transpose(), n, m, d }
}

impl Joint {
    fn obs_index(&self, t: usize, i: usize) -> usize {
        self.n * self.m + t * self.d + i
    }

    /// Conditional mean and covariance of theta_t given the observed entries up to `upto` (inclusive).
    pub fn condition(&self, obs: &DMatrix<f64>, t: usize, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
        let cond: Vec<usize> = (0..=upto)
            .flat_map(|s| (0..self.d).map(move |i| (s, i)))
            .filter(|&(s, i)| !obs[(s, i)].is_nan())
            .map(|(s, i)| self.obs_index(s, i))
            .collect();
        let tgt: Vec<usize> = (t * self.m..(t + 1) * self.m).collect();
        let mu_t = DVector::from_fn(tgt.len(), |i, _| self.mean[tgt[i]]);
        let s_tt = DMatrix::from_fn(tgt.len(), tgt.len(), |i, j| self.cov[(tgt[i], tgt[j])]);
        if cond.is_empty() {
            return (mu_t, s_tt);
        }
        let s_tc = DMatrix::from_fn(tgt.len(), cond.len(), |i, j| self.cov[(tgt[i], cond[j])]);
        let s_cc = DMatrix::from_fn(cond.len(), cond.len(), |i, j| self.cov[(cond[i], cond[j])]);
        let resid = DVector::from_fn(cond.len(), |i, _| {
            let j = cond[i] - self.n * self.m;
            obs[(j / self.d, j % self.d)] - self.mean[cond[i]]
        });
        let chol = s_cc.cholesky().unwrap();
        let mean = mu_t + &s_tc * chol.solve(&resid);
        let cov = s_tt - &s_tc * chol.solve(&s_tc.transpose());
        (mean, cov)
    }

    pub fn log_density(&self, obs: &DMatrix<f64>) -> f64 {
        let cond: Vec<usize> = (0..self.n)
            .flat_map(|s| (0..self.d).map(move |i| (s, i)))
            .filter(|&(s, i)| !obs[(s, i)].is_nan())
            .map(|(s, i)| self.obs_index(s, i))
            .collect();
        if cond.is_empty() {
            return 0.0;
        }
        let s_cc = DMatrix::from_fn(cond.len(), cond.len(), |i, j| self.cov[(cond[i], cond[j])]);
        let resid = DVector::from_fn(cond.len(), |i, _| {
            let j = cond[i] - self.n * self.m;
            obs[(j / self.d, j % self.d)] - self.mean[cond[i]]
        });
        let chol = s_cc.cholesky().unwrap();
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        -0.5 * (cond.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&chol.solve(&resid)))
    }
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn random_obs(rng: &mut ChaCha8Rng, n: usize, d: usize, p_missing: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| {
        if rng.random_bool(p_missing) {
            f64::NAN
        } else {
            rng.random_range(-3.0..3.0)
        }
    })
}
