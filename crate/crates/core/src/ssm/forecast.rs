use nalgebra::{DMatrix, DVector};

use super::filter::predict;
use super::model::{GaussianState, StateSpaceModel};
use crate::error::{invalid, Result};
use crate::linalg::symmetrize;

/// Predictive beliefs for one future time point.
#[derive(Debug, Clone)]
pub struct ForecastStep {
    pub state: GaussianState,
    /// `f_t`, `Q_t` under the factual design.
    pub obs_mean: DVector<f64>,
    pub obs_cov: DMatrix<f64>,
    /// `f~_t`, `Q~_t` under the counterfactual design, when one was supplied.
    pub cf_obs_mean: Option<DVector<f64>>,
    pub cf_obs_cov: Option<DMatrix<f64>>,
}

fn predictive(f: &DMatrix<f64>, state: &GaussianState, v: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut q = f * &state.cov * f.transpose() + v;
    symmetrize(&mut q);
    (f * &state.mean, q)
}

/// Propagates `(m_n, C_n)` forward `horizon` steps without correction.
///
/// Step `k` (one-based) uses `G_{n+k}` from the model, so a time-varying
/// transition must cover `n + horizon` points.
pub fn forecast(
    model: &StateSpaceModel,
    last: &GaussianState,
    horizon: usize,
    designs: &[DMatrix<f64>],
    cf_designs: Option<&[DMatrix<f64>]>,
) -> Result<Vec<ForecastStep>> {
    if horizon == 0 {
        return invalid("forecast horizon must be at least 1");
    }
    if designs.len() < horizon {
        return invalid(format!("need {horizon} future designs, got {}", designs.len()));
    }
    if let Some(cf) = cf_designs {
        if cf.len() < horizon {
            return invalid(format!("need {horizon} counterfactual designs, got {}", cf.len()));
        }
    }
    let (d, m) = (model.obs_dim(), model.state_dim());
    if last.mean.len() != m || last.cov.shape() != (m, m) {
        return invalid("last filtered state has the wrong dimension");
    }
    let v = model.effective_obs_cov();
    let mut state = last.clone();
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let (mean, cov) = predict(model, model.n() + k, &state.mean, &state.cov).map_err(|_| {
            crate::Error::InvalidInput(format!("no transition matrix for future step {}", k + 1))
        })?;
        state = GaussianState { mean, cov };
        let f = &designs[k];
        if f.shape() != (d, m) {
            return invalid(format!("future design {} is {:?}, expected {:?}", k + 1, f.shape(), (d, m)));
        }
        let (obs_mean, obs_cov) = predictive(f, &state, v);
        let (cf_obs_mean, cf_obs_cov) = match cf_designs {
            Some(cf) => {
                if cf[k].shape() != (d, m) {
                    return invalid(format!("counterfactual design {} has the wrong shape", k + 1));
                }
                let (a, b) = predictive(&cf[k], &state, v);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        out.push(ForecastStep { state: state.clone(), obs_mean, obs_cov, cf_obs_mean, cf_obs_cov });
    }
    Ok(out)
}
