use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Default diagonal scale of the diffuse prior covariance `kappa * I`.
pub const DIFFUSE_KAPPA: f64 = 1e7;

/// A matrix that is either fixed or indexed by time point.
#[derive(Debug, Clone)]
pub enum TimeVarying {
    Constant(DMatrix<f64>),
    Varying(Arc<[DMatrix<f64>]>),
}

impl TimeVarying {
    pub fn varying(mats: Vec<DMatrix<f64>>) -> Self {
        TimeVarying::Varying(mats.into())
    }

    /// Matrix at zero-based time index `t`, `None` when a varying sequence is too short.
    pub fn at(&self, t: usize) -> Option<&DMatrix<f64>> {
        match self {
            TimeVarying::Constant(m) => Some(m),
            TimeVarying::Varying(ms) => ms.get(t),
        }
    }

    fn shape_iter(&self) -> Box<dyn Iterator<Item = (usize, (usize, usize))> + '_> {
        match self {
            TimeVarying::Constant(m) => Box::new(std::iter::once((0, m.shape()))),
            TimeVarying::Varying(ms) => Box::new(ms.iter().map(|m| m.shape()).enumerate()),
        }
    }
}

/// Linear-Gaussian state-space model
///
/// ```text
/// x_t     = F_t theta_t + v_t,                v_t ~ N(0, V)
/// theta_t = G_t theta_{t-1} + offset + w_t,   w_t ~ N(0, W)
/// theta_0 ~ N(m0, C0)
/// ```
///
/// for `t = 1..n`. Observation weights, when present, rescale `V` to
/// `D^{-1/2} V D^{-1/2}` with `D = diag(weights)`, so a diagonal `V` has its
/// entries divided by the weights.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    n: usize,
    d: usize,
    m: usize,
    design: TimeVarying,
    transition: TimeVarying,
    state_offset: Option<DVector<f64>>,
    obs_cov: DMatrix<f64>,
    state_cov: DMatrix<f64>,
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    obs_weights: Option<DVector<f64>>,
    effective_obs_cov: DMatrix<f64>,
}

fn check_sym_psd(name: &str, a: &DMatrix<f64>, dim: usize) -> Result<()> {
    if a.shape() != (dim, dim) {
        return invalid(format!("{name} must be {dim}x{dim}, got {:?}", a.shape()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{name} has non-finite entries"));
    }
    if crate::linalg::is_diagonal(a) {
        if a.diagonal().iter().any(|v| *v < 0.0) {
            return invalid(format!("{name} has a negative diagonal entry"));
        }
        return Ok(());
    }
    if !crate::linalg::is_psd(a, 1e-10) {
        return invalid(format!("{name} is not symmetric positive semidefinite"));
    }
    Ok(())
}

impl StateSpaceModel {
    /// Model over `n` time points with the diffuse prior `N(0, DIFFUSE_KAPPA * I)`.
    pub fn new(
        n: usize,
        design: TimeVarying,
        transition: TimeVarying,
        obs_cov: DMatrix<f64>,
        state_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let (d, m) = match design.at(0) {
            Some(f) => f.shape(),
            None => return invalid("design sequence is empty"),
        };
        if m == 0 {
            return invalid("state dimension must be positive");
        }
        if let TimeVarying::Varying(fs) = &design {
            if fs.len() < n {
                return invalid(format!("need {n} design matrices, got {}", fs.len()));
            }
        }
        if let TimeVarying::Varying(gs) = &transition {
            if gs.len() < n {
                return invalid(format!("need {n} transition matrices, got {}", gs.len()));
            }
        }
        for (t, shape) in design.shape_iter() {
            if shape != (d, m) {
                return invalid(format!("design at t={} is {shape:?}, expected {:?}", t + 1, (d, m)));
            }
        }
        for (t, shape) in transition.shape_iter() {
            if shape != (m, m) {
                return invalid(format!("transition at t={} is {shape:?}, expected {:?}", t + 1, (m, m)));
            }
        }
        check_sym_psd("observation covariance", &obs_cov, d)?;
        check_sym_psd("state covariance", &state_cov, m)?;
        Ok(StateSpaceModel {
            n,
            d,
            m,
            design,
            transition,
            state_offset: None,
            effective_obs_cov: obs_cov.clone(),
            obs_cov,
            state_cov,
            prior_mean: DVector::zeros(m),
            prior_cov: DMatrix::identity(m, m) * DIFFUSE_KAPPA,
            obs_weights: None,
        })
    }

    pub fn with_prior(mut self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.len() != self.m {
            return invalid(format!("prior mean has length {}, expected {}", mean.len(), self.m));
        }
        check_sym_psd("prior covariance", &cov, self.m)?;
        self.prior_mean = mean;
        self.prior_cov = cov;
        Ok(self)
    }

    pub fn with_state_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.m {
            return invalid(format!("state offset has length {}, expected {}", offset.len(), self.m));
        }
        self.state_offset = Some(offset);
        Ok(self)
    }

    pub fn with_obs_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.d {
            return invalid(format!("observation weights have length {}, expected {}", weights.len(), self.d));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return invalid("observation weights must be strictly positive");
        }
        let s = weights.map(|w| w.sqrt().recip());
        self.effective_obs_cov = DMatrix::from_fn(self.d, self.d, |i, j| {
            if i == j {
                self.obs_cov[(i, i)] / weights[i]
            } else {
                self.obs_cov[(i, j)] * s[i] * s[j]
            }
        });
        self.obs_weights = Some(weights);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn obs_dim(&self) -> usize {
        self.d
    }
    pub fn state_dim(&self) -> usize {
        self.m
    }
    pub fn design(&self) -> &TimeVarying {
        &self.design
    }
    pub fn transition(&self) -> &TimeVarying {
        &self.transition
    }
    /// Design `F_t` at zero-based index `t`.
    pub fn design_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.design.at(t)
    }
    /// Transition `G_t` at zero-based index `t`.
    pub fn transition_at(&self, t: usize) -> Option<&DMatrix<f64>> {
        self.transition.at(t)
    }
    pub fn state_offset(&self) -> Option<&DVector<f64>> {
        self.state_offset.as_ref()
    }
    /// `V` as supplied, before weighting.
    pub fn obs_cov(&self) -> &DMatrix<f64> {
        &self.obs_cov
    }
    /// `V` after applying observation weights; this is what inference uses.
    pub fn effective_obs_cov(&self) -> &DMatrix<f64> {
        &self.effective_obs_cov
    }
    pub fn state_cov(&self) -> &DMatrix<f64> {
        &self.state_cov
    }
    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }
    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }
    pub fn obs_weights(&self) -> Option<&DVector<f64>> {
        self.obs_weights.as_ref()
    }

    /// Checks that `obs` is an `n x d` observation matrix (NaN marks missing).
    pub fn check_observations(&self, obs: &DMatrix<f64>) -> Result<()> {
        if obs.nrows() != self.n || obs.ncols() != self.d {
            return invalid(format!(
                "observations are {}x{}, model expects {}x{}",
                obs.nrows(),
                obs.ncols(),
                self.n,
                self.d
            ));
        }
        if obs.iter().any(|v| v.is_infinite()) {
            return invalid("observations contain infinite values");
        }
        Ok(())
    }
}

/// Gaussian belief `N(mean, cov)` about the state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}
