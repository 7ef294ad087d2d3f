use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::model::{GaussianState, StateSpaceModel};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, is_diagonal, select_rows, select_sub, select_vec, spd_factor, symmetrize};

/// Beliefs produced by one filter step.
#[derive(Debug, Clone)]
pub struct FilterStep {
    /// `a_t`
    pub predicted_mean: DVector<f64>,
    /// `R_t`
    pub predicted_cov: DMatrix<f64>,
    /// `f_t = F_t a_t` for all `d` rows, observed or not.
    pub obs_mean: DVector<f64>,
    /// `Q_t = F_t R_t F_t' + V` for all `d` rows.
    pub obs_cov: DMatrix<f64>,
    /// `m_t`
    pub filtered_mean: DVector<f64>,
    /// `C_t`
    pub filtered_cov: DMatrix<f64>,
    /// `e_t = x_t - f_t`, NaN where the observation is missing.
    pub error: DVector<f64>,
    /// Kalman gain restricted to the observed rows (`m x |observed|`).
    /// Robust filters leave this empty since their update is not linear in `e_t`.
    pub gain: Option<DMatrix<f64>>,
    /// Indices of the observed entries of `x_t`.
    pub observed: Vec<usize>,
    /// Predictive log-density contribution of `x_t`.
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub steps: Vec<FilterStep>,
    /// Sum of the per-step contributions.
    pub loglik: f64,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Filtering distribution at the last time point, the seed for forecasting.
    pub fn last_state(&self) -> Option<GaussianState> {
        self.steps.last().map(|s| GaussianState {
            mean: s.filtered_mean.clone(),
            cov: s.filtered_cov.clone(),
        })
    }
}

pub(crate) fn observed_indices(row: impl Iterator<Item = f64>) -> Vec<usize> {
    row.enumerate().filter(|(_, v)| !v.is_nan()).map(|(i, _)| i).collect()
}

/// One-step state prediction `(a_t, R_t)` from `(m_{t-1}, C_{t-1})`.
pub(crate) fn predict(
    model: &StateSpaceModel,
    t: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let g = model.transition_at(t).ok_or_else(|| Error::Inference {
        t: t + 1,
        reason: "no transition matrix for this time point".into(),
    })?;
    let mut a = g * mean;
    if let Some(off) = model.state_offset() {
        a += off;
    }
    let mut r = g * cov * g.transpose() + model.state_cov();
    symmetrize(&mut r);
    Ok((a, r))
}

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Kalman filter over all `n` time points.
///
/// `observations` is `n x d`; NaN entries are treated as missing and the
/// corresponding rows of `F_t` and `V` are dropped for that update. A fully
/// missing time point yields `m_t = a_t`, `C_t = R_t`.
pub fn filter(model: &StateSpaceModel, observations: &DMatrix<f64>) -> Result<FilterResult> {
    model.check_observations(observations)?;
    let v = model.effective_obs_cov();
    let mut mean = model.prior_mean().clone();
    let mut cov = model.prior_cov().clone();
    let mut steps = Vec::with_capacity(model.n());
    let mut total = 0.0;

    for t in 0..model.n() {
        let (a, r) = predict(model, t, &mean, &cov)?;
        let f_t = model.design_at(t).expect("validated design length");
        let f = f_t * &a;
        let mut q = f_t * &r * f_t.transpose() + v;
        symmetrize(&mut q);

        let x = observations.row(t).transpose();
        let observed = observed_indices(x.iter().copied());
        let error = DVector::from_fn(model.obs_dim(), |i, _| x[i] - f[i]);

        let (m_new, c_new, gain, ll) = if observed.is_empty() {
            (a.clone(), r.clone(), Some(DMatrix::zeros(model.state_dim(), 0)), 0.0)
        } else {
            let fo = select_rows(f_t, &observed);
            let qo = select_sub(&q, &observed);
            let eo = select_vec(&error, &observed);
            let chol = spd_factor(&qo).ok_or_else(|| Error::Inference {
                t: t + 1,
                reason: "predictive observation covariance Q_t is singular".into(),
            })?;
            let rf = &r * fo.transpose();
            let k = chol.solve(&rf.transpose()).transpose();
            let qinv_e = chol.solve(&eo);
            let m_new = &a + &k * &eo;
            let mut c_new = &r - &k * fo * &r;
            symmetrize(&mut c_new);
            let ll = -0.5 * (observed.len() as f64 * ln_2pi() + chol_logdet(&chol) + eo.dot(&qinv_e));
            (m_new, c_new, Some(k), ll)
        };
        total += ll;
        mean = m_new.clone();
        cov = c_new.clone();
        steps.push(FilterStep {
            predicted_mean: a,
            predicted_cov: r,
            obs_mean: f,
            obs_cov: q,
            filtered_mean: m_new,
            filtered_cov: c_new,
            error,
            gain,
            observed,
            loglik: ll,
        });
    }
    Ok(FilterResult { steps, loglik: total })
}

/// Exact Gaussian log-likelihood `log p(x_1..x_n)`, including the
/// `-(k/2) log 2 pi` constant for every observed entry.
///
/// Equal to `filter(..).loglik` up to rounding. When `V` is diagonal and a
/// time point has more observed entries than states, the update runs in
/// information form, which costs `O(d m^2 + m^3)` instead of `O(d^3)`.
pub fn log_likelihood(model: &StateSpaceModel, observations: &DMatrix<f64>) -> Result<f64> {
    model.check_observations(observations)?;
    let v = model.effective_obs_cov();
    let diag_v = is_diagonal(v);
    let m_dim = model.state_dim();
    let mut mean = model.prior_mean().clone();
    let mut cov = model.prior_cov().clone();
    let mut total = 0.0;

    for t in 0..model.n() {
        let (a, r) = predict(model, t, &mean, &cov)?;
        let f_t = model.design_at(t).expect("validated design length");
        let x = observations.row(t);
        let observed = observed_indices(x.iter().copied());
        if observed.is_empty() {
            mean = a;
            cov = r;
            continue;
        }
        if diag_v && observed.len() > m_dim {
            if let Some((m_new, c_new, ll)) = information_update(f_t, v, &observed, &x.transpose(), &a, &r) {
                total += ll;
                mean = m_new;
                cov = c_new;
                continue;
            }
        }
        let fo = select_rows(f_t, &observed);
        let mut qo = &fo * &r * fo.transpose() + select_sub(v, &observed);
        symmetrize(&mut qo);
        let eo = DVector::from_fn(observed.len(), |k, _| x[observed[k]] - fo.row(k).dot(&a.transpose()));
        let chol = spd_factor(&qo).ok_or_else(|| Error::Inference {
            t: t + 1,
            reason: "predictive observation covariance Q_t is singular".into(),
        })?;
        let rf = &r * fo.transpose();
        let k = chol.solve(&rf.transpose()).transpose();
        total += -0.5 * (observed.len() as f64 * ln_2pi() + chol_logdet(&chol) + eo.dot(&chol.solve(&eo)));
        mean = &a + &k * &eo;
        cov = &r - &k * fo * &r;
        symmetrize(&mut cov);
    }
    Ok(total)
}

/// Information-form update for diagonal `V`; `None` when `R_t` or the
/// posterior precision cannot be factored, so the caller falls back.
fn information_update(
    f_t: &DMatrix<f64>,
    v: &DMatrix<f64>,
    observed: &[usize],
    x: &DVector<f64>,
    a: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    let m_dim = a.len();
    let mut scaled = DMatrix::zeros(observed.len(), m_dim);
    let mut fo = DMatrix::zeros(observed.len(), m_dim);
    let mut quad_v = 0.0;
    let mut logdet_v = 0.0;
    let mut u = DVector::zeros(m_dim);
    for (k, &i) in observed.iter().enumerate() {
        let var = v[(i, i)];
        if var <= 0.0 {
            return None;
        }
        let lam = var.recip();
        let row = f_t.row(i);
        let e = x[i] - row.dot(&a.transpose());
        quad_v += lam * e * e;
        logdet_v += var.ln();
        for j in 0..m_dim {
            fo[(k, j)] = row[j];
            scaled[(k, j)] = lam * row[j];
            u[j] += lam * row[j] * e;
        }
    }
    let r_chol = spd_factor(r)?;
    let r_inv = r_chol.inverse();
    let mut precision = r_inv + fo.transpose() * scaled;
    symmetrize(&mut precision);
    let p_chol = spd_factor(&precision)?;
    let shift = p_chol.solve(&u);
    let mut c_new = p_chol.inverse();
    symmetrize(&mut c_new);
    let logdet_q = logdet_v + chol_logdet(&r_chol) + chol_logdet(&p_chol);
    let quad = quad_v - u.dot(&shift);
    let ll = -0.5 * (observed.len() as f64 * ln_2pi() + logdet_q + quad);
    Some((a + shift, c_new, ll))
}
