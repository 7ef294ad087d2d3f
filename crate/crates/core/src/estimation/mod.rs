//! Maximum-likelihood estimation of state-space parameters.

pub mod nelder_mead;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::stream;
use crate::ssm::{log_likelihood, StateSpaceModel};
use nelder_mead::{minimize, NelderMeadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ObsVar,
    StateVar,
    ArCoeff,
    Offset,
}

impl Role {
    pub fn is_variance(self) -> bool {
        matches!(self, Role::ObsVar | Role::StateVar)
    }
}

/// Scale on which the optimizer moves a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log,
    /// Also accepted as `"none"`.
    #[serde(alias = "none")]
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub name: String,
    pub role: Role,
    pub transform: Transform,
    /// Starting value on the natural scale.
    pub initial: f64,
    /// Natural-scale box; points outside are infeasible.
    pub bounds: Option<(f64, f64)>,
}

impl FreeParam {
    /// A variance parameter, optimized on the log scale.
    pub fn variance(name: impl Into<String>, role: Role, initial: f64) -> Self {
        FreeParam { name: name.into(), role, transform: Transform::Log, initial, bounds: None }
    }

    pub fn ar(name: impl Into<String>, initial: f64) -> Self {
        FreeParam { name: name.into(), role: Role::ArCoeff, transform: Transform::Identity, initial, bounds: None }
    }

    pub fn offset(name: impl Into<String>, initial: f64) -> Self {
        FreeParam { name: name.into(), role: Role::Offset, transform: Transform::Identity, initial, bounds: None }
    }

    fn to_internal(&self, v: f64) -> f64 {
        match self.transform {
            Transform::Log => v.ln(),
            Transform::Identity => v,
        }
    }

    fn to_natural(&self, u: f64) -> f64 {
        match self.transform {
            Transform::Log => u.exp(),
            Transform::Identity => u,
        }
    }
}

/// Maps a natural-scale parameter vector to a model.
pub type ModelBuilder = Arc<dyn Fn(&[f64]) -> Result<StateSpaceModel> + Send + Sync>;

#[derive(Clone)]
pub struct ParameterSpec {
    params: Vec<FreeParam>,
    builder: ModelBuilder,
}

impl fmt::Debug for ParameterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterSpec").field("params", &self.params).finish_non_exhaustive()
    }
}

impl ParameterSpec {
    pub fn new(params: Vec<FreeParam>, builder: ModelBuilder) -> Result<Self> {
        for p in &params {
            if p.role.is_variance() && p.transform != Transform::Log {
                return invalid(format!("variance parameter {} must use the log transform", p.name));
            }
            if !p.initial.is_finite() || (p.transform == Transform::Log && p.initial <= 0.0) {
                return invalid(format!("parameter {} has an invalid initial value {}", p.name, p.initial));
            }
            if let Some((lo, hi)) = p.bounds {
                if !(lo < hi) || p.initial < lo || p.initial > hi {
                    return invalid(format!("parameter {} starts outside its bounds", p.name));
                }
            }
        }
        Ok(ParameterSpec { params, builder })
    }

    pub fn params(&self) -> &[FreeParam] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [FreeParam] {
        &mut self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn initial(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.initial).collect()
    }

    pub fn to_internal(&self, natural: &[f64]) -> Vec<f64> {
        self.params.iter().zip(natural).map(|(p, v)| p.to_internal(*v)).collect()
    }

    pub fn to_natural(&self, internal: &[f64]) -> Vec<f64> {
        self.params.iter().zip(internal).map(|(p, u)| p.to_natural(*u)).collect()
    }

    fn in_bounds(&self, natural: &[f64]) -> bool {
        self.params.iter().zip(natural).all(|(p, v)| match p.bounds {
            Some((lo, hi)) => *v >= lo && *v <= hi,
            None => true,
        })
    }

    /// Builds the model at natural-scale `psi`.
    pub fn build(&self, psi: &[f64]) -> Result<StateSpaceModel> {
        if psi.len() != self.params.len() {
            return invalid(format!("expected {} parameters, got {}", self.params.len(), psi.len()));
        }
        (self.builder)(psi)
    }

    pub fn loglik(&self, psi: &[f64], observations: &DMatrix<f64>) -> Result<f64> {
        log_likelihood(&self.build(psi)?, observations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    /// Natural scale.
    pub initial: Vec<f64>,
    pub final_psi: Vec<f64>,
    /// `-inf` when the start never produced a finite likelihood.
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Natural scale.
    pub psi_hat: Vec<f64>,
    pub loglik: f64,
    pub starts: Vec<StartRecord>,
    pub best_start_index: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_starts: 5, seed: 0, optimizer: NelderMeadOptions::default() }
    }
}

/// Multi-start maximum likelihood with default optimizer settings.
pub fn fit_mle(spec: &ParameterSpec, observations: &DMatrix<f64>, n_starts: usize, seed: u64) -> Result<FitResult> {
    fit_mle_with(spec, observations, &FitOptions { n_starts, seed, ..FitOptions::default() })
}

/// Start `k > 0` jitters the initial values: `U(-1, 1)` on log-scale
/// parameters, `U(-0.2, 0.2)` on AR coefficients (clipped to `(-1.05, 1.05)`),
/// and `U(-0.2, 0.2)` on other identity-scale parameters.
fn start_point(spec: &ParameterSpec, k: usize, seed: u64) -> Vec<f64> {
    let base = spec.to_internal(&spec.initial());
    if k == 0 {
        return base;
    }
    let mut rng = stream(seed, &[0x5157_4152, k as u64]);
    spec.params
        .iter()
        .zip(base)
        .map(|(p, u)| match (p.transform, p.role) {
            (Transform::Log, _) => u + rng.random_range(-1.0..1.0),
            (Transform::Identity, Role::ArCoeff) => (u + rng.random_range(-0.2..0.2)).clamp(-1.05, 1.05),
            (Transform::Identity, _) => u + rng.random_range(-0.2..0.2),
        })
        .collect()
}

fn initial_step(spec: &ParameterSpec, x: &[f64]) -> Vec<f64> {
    spec.params
        .iter()
        .zip(x)
        .map(|(p, u)| match p.transform {
            Transform::Log => 0.5,
            Transform::Identity => (0.1 * u.abs()).max(0.05),
        })
        .collect()
}

pub fn fit_mle_with(spec: &ParameterSpec, observations: &DMatrix<f64>, opts: &FitOptions) -> Result<FitResult> {
    let k = spec.params.len();
    if k == 0 {
        let loglik = spec.loglik(&[], observations)?;
        return Ok(FitResult {
            names: vec![],
            psi_hat: vec![],
            loglik,
            starts: vec![],
            best_start_index: 0,
        });
    }
    if opts.n_starts == 0 {
        return invalid("n_starts must be at least 1");
    }
    let objective = |u: &[f64]| -> f64 {
        let psi = spec.to_natural(u);
        if !spec.in_bounds(&psi) {
            return f64::INFINITY;
        }
        match spec.loglik(&psi, observations) {
            Ok(l) => -l,
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts = Vec::with_capacity(opts.n_starts);
    for s in 0..opts.n_starts {
        let x0 = start_point(spec, s, opts.seed);
        let step = initial_step(spec, &x0);
        let r = minimize(objective, &x0, &step, opts.optimizer);
        starts.push(StartRecord {
            initial: spec.to_natural(&x0),
            final_psi: spec.to_natural(&r.x),
            loglik: -r.fx,
            converged: r.converged,
            evaluations: r.evals,
        });
    }
    let mut best = 0;
    for (i, s) in starts.iter().enumerate() {
        if s.loglik > starts[best].loglik {
            best = i;
        }
    }
    if !starts[best].loglik.is_finite() {
        let detail: Vec<String> = starts
            .iter()
            .enumerate()
            .map(|(i, s)| format!("start {i}: initial {:?}, {} evaluations", s.initial, s.evaluations))
            .collect();
        return Err(Error::Estimation(format!(
            "likelihood could not be evaluated from any start ({})",
            detail.join("; ")
        )));
    }
    Ok(FitResult {
        names: spec.names(),
        psi_hat: starts[best].final_psi.clone(),
        loglik: starts[best].loglik,
        starts,
        best_start_index: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub psi: Vec<f64>,
    /// `None` when the likelihood could not be evaluated at this probe.
    pub loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub ok: bool,
    pub base_loglik: f64,
    pub probes: Vec<Probe>,
    /// Index of the first probe beating the base by more than the tolerance.
    pub offending: Option<usize>,
}

/// Probes beating `loglik(psi_hat)` by more than this fail the check.
pub const PROFILE_TOL: f64 = 1e-4;

/// Evaluates the likelihood at `n_probe` random natural-scale perturbations
/// of up to +-50% per coordinate and reports whether any beats `psi_hat`.
pub fn profile_check(
    spec: &ParameterSpec,
    observations: &DMatrix<f64>,
    psi_hat: &[f64],
    n_probe: usize,
    seed: u64,
) -> Result<ProfileReport> {
    let base = spec.loglik(psi_hat, observations)?;
    let mut rng = stream(seed, &[0x5052_4f42]);
    let mut probes = Vec::with_capacity(n_probe);
    let mut offending = None;
    for i in 0..n_probe {
        let psi: Vec<f64> = psi_hat.iter().map(|v| v * (1.0 + rng.random_range(-0.5..0.5))).collect();
        let loglik = if spec.in_bounds(&psi) { spec.loglik(&psi, observations).ok() } else { None };
        if offending.is_none() && loglik.is_some_and(|l| l > base + PROFILE_TOL) {
            offending = Some(i);
        }
        probes.push(Probe { psi, loglik });
    }
    Ok(ProfileReport { ok: offending.is_none(), base_loglik: base, probes, offending })
}
