//! Outlier-robust filtering: each update is the generalized least-squares
//! problem `[I; F_t] theta = [a_t; x_t]` with error covariance
//! `blockdiag(R_t, V)`, solved under a robust loss by iteratively
//! reweighted least squares.
//!
//! The loss applies to the whitened observation residuals; the prior rows
//! keep squared loss, so an outlying observation is downweighted against
//! the prediction rather than the other way round.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{chol_logdet, select_rows, select_sub, select_vec, spd_factor, symmetrize};
use crate::ssm::{observed_indices, predict, FilterResult, FilterStep, StateSpaceModel};

/// Classical 95%-efficiency Huber constant.
pub const DEFAULT_HUBER_K: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Huber { k: f64 },
}

impl Loss {
    fn rho(self, r: f64) -> f64 {
        match self {
            Loss::Squared => 0.5 * r * r,
            Loss::Huber { k } => {
                if r.abs() <= k {
                    0.5 * r * r
                } else {
                    k * r.abs() - 0.5 * k * k
                }
            }
        }
    }

    fn weight(self, r: f64) -> f64 {
        match self {
            Loss::Squared => 1.0,
            Loss::Huber { k } => {
                if r.abs() <= k {
                    1.0
                } else {
                    k / r.abs()
                }
            }
        }
    }
}

/// Which covariance the robust filter reports as `C_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustCovariance {
    /// Inverse of the final IRLS-weighted information matrix (approximate).
    Weighted,
    /// The unweighted, i.e. standard Kalman, posterior covariance.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub loss: Loss,
    pub max_irls_iters: usize,
    /// Stop once the update changes by at most `irls_tol * (1 + |theta|)`.
    pub irls_tol: f64,
    pub covariance: RobustCovariance,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            loss: Loss::Huber { k: DEFAULT_HUBER_K },
            max_irls_iters: 50,
            irls_tol: 1e-10,
            covariance: RobustCovariance::Weighted,
        }
    }
}

impl RobustConfig {
    fn validate(&self) -> Result<()> {
        if let Loss::Huber { k } = self.loss {
            if !(k > 0.0 && k.is_finite()) {
                return invalid("Huber constant must be positive");
            }
        }
        if self.max_irls_iters == 0 {
            return invalid("max_irls_iters must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsTrace {
    /// Robust objective after each IRLS solve (the first is the squared-loss start).
    pub objective: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RobustFilterResult {
    pub filter: FilterResult,
    /// One entry per time point; empty trace where nothing was observed.
    pub irls: Vec<IrlsTrace>,
}

impl RobustFilterResult {
    /// Time points (zero-based) whose IRLS hit the iteration cap.
    pub fn unconverged(&self) -> Vec<usize> {
        self.irls.iter().enumerate().filter(|(_, s)| !s.converged).map(|(t, _)| t).collect()
    }
}

fn inv_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows())).expect("Cholesky factor has a positive diagonal")
}

pub fn robust_filter(model: &StateSpaceModel, observations: &DMatrix<f64>, config: &RobustConfig) -> Result<RobustFilterResult> {
    config.validate()?;
    model.check_observations(observations)?;
    let v = model.effective_obs_cov();
    let m_dim = model.state_dim();
    let mut mean = model.prior_mean().clone();
    let mut cov = model.prior_cov().clone();
    let mut steps = Vec::with_capacity(model.n());
    let mut irls = Vec::with_capacity(model.n());
    let mut total = 0.0;

    for t in 0..model.n() {
        let singular = |what: &str| Error::Inference { t: t + 1, reason: format!("{what} is singular") };
        let (a, r) = predict(model, t, &mean, &cov)?;
        let f_t = model.design_at(t).expect("validated design length");
        let f = f_t * &a;
        let mut q = f_t * &r * f_t.transpose() + v;
        symmetrize(&mut q);
        let x = observations.row(t).transpose();
        let observed = observed_indices(x.iter().copied());
        let error = DVector::from_fn(model.obs_dim(), |i, _| x[i] - f[i]);

        if observed.is_empty() {
            irls.push(IrlsTrace { objective: vec![], converged: true });
            steps.push(FilterStep {
                predicted_mean: a.clone(),
                predicted_cov: r.clone(),
                obs_mean: f,
                obs_cov: q,
                filtered_mean: a.clone(),
                filtered_cov: r.clone(),
                error,
                gain: None,
                observed,
                loglik: 0.0,
            });
            mean = a;
            cov = r;
            continue;
        }

        let k_obs = observed.len();
        let fo = select_rows(f_t, &observed);
        let xo = select_vec(&x, &observed);
        let r_chol = spd_factor(&r).ok_or_else(|| singular("predicted state covariance R_t"))?;
        let v_chol = spd_factor(&select_sub(v, &observed)).ok_or_else(|| singular("observation covariance"))?;
        let lr_inv = inv_lower(&r_chol.l());
        let lv_inv = inv_lower(&v_chol.l());

        let mut design = DMatrix::zeros(m_dim + k_obs, m_dim);
        design.rows_mut(0, m_dim).copy_from(&lr_inv);
        design.rows_mut(m_dim, k_obs).copy_from(&(&lv_inv * &fo));
        let mut target = DVector::zeros(m_dim + k_obs);
        target.rows_mut(0, m_dim).copy_from(&(&lr_inv * &a));
        target.rows_mut(m_dim, k_obs).copy_from(&(&lv_inv * &xo));

        let objective = |theta: &DVector<f64>| -> f64 {
            let res = &target - &design * theta;
            (0..res.len())
                .map(|j| if j < m_dim { Loss::Squared.rho(res[j]) } else { config.loss.rho(res[j]) })
                .sum()
        };
        // The weighted least-squares problem with observation weights `w` is
        // a Kalman update with V replaced by `L_V diag(1/w) L_V'`. Solving it
        // in gain form avoids the normal equations, which are badly
        // conditioned under a diffuse prior, and makes unit weights
        // reproduce the standard filter.
        let qo = select_sub(&q, &observed);
        let eo = select_vec(&error, &observed);
        let solve = |w: &DVector<f64>| -> Option<(DVector<f64>, DMatrix<f64>)> {
            let chol = if w.iter().all(|&wi| wi == 1.0) {
                spd_factor(&qo)?
            } else {
                let lv = v_chol.l();
                let scaled = DMatrix::from_fn(k_obs, k_obs, |i, j| lv[(i, j)] / w[j]);
                let mut qw = &fo * &r * fo.transpose() + scaled * lv.transpose();
                symmetrize(&mut qw);
                spd_factor(&qw)?
            };
            let k = chol.solve(&(&r * fo.transpose()).transpose()).transpose();
            let mut c = &r - &k * &fo * &r;
            symmetrize(&mut c);
            Some((&a + &k * &eo, c))
        };

        let ones = DVector::from_element(k_obs, 1.0);
        let (mut theta, standard_cov) = solve(&ones).ok_or_else(|| singular("predictive observation covariance Q_t"))?;
        let mut weighted_cov = standard_cov.clone();
        let mut trace = vec![objective(&theta)];
        let mut converged = config.loss == Loss::Squared;
        if !converged {
            for _ in 0..config.max_irls_iters {
                let res = &target - &design * &theta;
                let w = DVector::from_fn(k_obs, |j, _| config.loss.weight(res[m_dim + j]));
                let (next, c) = solve(&w).ok_or_else(|| singular("reweighted observation covariance"))?;
                let step = (&next - &theta).norm();
                theta = next;
                weighted_cov = c;
                trace.push(objective(&theta));
                if step <= config.irls_tol * (1.0 + theta.norm()) {
                    converged = true;
                    break;
                }
            }
        }
        let mut c_new = match config.covariance {
            RobustCovariance::Weighted => weighted_cov,
            RobustCovariance::Standard => standard_cov,
        };
        symmetrize(&mut c_new);

        let q_chol = spd_factor(&qo).ok_or_else(|| singular("predictive observation covariance Q_t"))?;
        let ll = -0.5 * (k_obs as f64 * (2.0 * PI).ln() + chol_logdet(&q_chol) + eo.dot(&q_chol.solve(&eo)));
        total += ll;

        irls.push(IrlsTrace { objective: trace, converged });
        steps.push(FilterStep {
            predicted_mean: a,
            predicted_cov: r,
            obs_mean: f,
            obs_cov: q,
            filtered_mean: theta.clone(),
            filtered_cov: c_new.clone(),
            error,
            gain: None,
            observed,
            loglik: ll,
        });
        mean = theta;
        cov = c_new;
    }
    Ok(RobustFilterResult { filter: FilterResult { steps, loglik: total }, irls })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_weights() {
        let l = Loss::Huber { k: 1.0 };
        assert_eq!(l.weight(0.5), 1.0);
        assert_eq!(l.weight(-4.0), 0.25);
        assert_eq!(l.rho(3.0), 2.5);
        assert_eq!(Loss::Squared.rho(3.0), 4.5);
    }

    #[test]
    fn rejects_bad_config() {
        let c = RobustConfig { loss: Loss::Huber { k: 0.0 }, ..RobustConfig::default() };
        assert!(c.validate().is_err());
    }
}
