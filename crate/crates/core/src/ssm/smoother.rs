use nalgebra::{DMatrix, DVector};

use super::filter::FilterResult;
use super::model::StateSpaceModel;
use crate::error::{invalid, Error, Result};
use crate::linalg::{spd_factor, symmetrize};

/// Smoothed state beliefs `s_t`, `S_t` for `t = 1..n`.
#[derive(Debug, Clone)]
pub struct SmootherResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl SmootherResult {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Rauch-Tung-Striebel backward pass over a filter run on the same model.
pub fn smooth(model: &StateSpaceModel, filtered: &FilterResult) -> Result<SmootherResult> {
    let n = filtered.len();
    if n != model.n() {
        return invalid(format!("filter result has {n} steps, model has {}", model.n()));
    }
    let mut means = vec![DVector::zeros(0); n];
    let mut covs = vec![DMatrix::zeros(0, 0); n];
    if n == 0 {
        return Ok(SmootherResult { means, covs });
    }
    means[n - 1] = filtered.steps[n - 1].filtered_mean.clone();
    covs[n - 1] = filtered.steps[n - 1].filtered_cov.clone();

    for t in (0..n - 1).rev() {
        let step = &filtered.steps[t];
        let next = &filtered.steps[t + 1];
        let g = model.transition_at(t + 1).expect("validated transition length");
        let chol = spd_factor(&next.predicted_cov).ok_or_else(|| Error::Inference {
            t: t + 2,
            reason: "predicted state covariance R_t is singular".into(),
        })?;
        // J = C_t G' R^{-1}, via R^{-1} G C_t since R and C_t are symmetric
        let j = chol.solve(&(g * &step.filtered_cov)).transpose();
        let s = &step.filtered_mean + &j * (&means[t + 1] - &next.predicted_mean);
        let mut cov = &step.filtered_cov - &j * (&next.predicted_cov - &covs[t + 1]) * j.transpose();
        symmetrize(&mut cov);
        means[t] = s;
        covs[t] = cov;
    }
    Ok(SmootherResult { means, covs })
}
