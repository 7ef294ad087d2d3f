//! Reference estimators: per-time-point Bayesian imputation and an
//! aggregated univariate counterfactual model with a local linear trend.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::design::{build_counterfactual_design, build_design, ModelFormula, PanelDataset, StateLayout, Treatment};
use crate::effects::{population_weights, push_summary, sample_effect, EffectRequest, EffectSeries, Estimand, Period};
use crate::error::{invalid, Error, Result};
use crate::estimation::{fit_mle_with, FitOptions, FitResult, FreeParam, ParameterSpec, Role};
use crate::linalg::{cov_sqrt, draw_mvn};
use crate::rng::stream;
use crate::ssm::{filter, forecast, StateSpaceModel, TimeVarying};

/// Lower bound on the inverse-gamma scale when a regression fits exactly.
pub const SIGMA2_FLOOR: f64 = 1e-12;

const LANE_BI: u64 = 11;
const LANE_CI: u64 = 12;

#[derive(Debug, Clone)]
pub struct BayesianImputationConfig {
    pub request: EffectRequest,
    /// Report the posterior-mean effect (`F~ beta_hat` imputations, or the
    /// estimand at `beta_hat`) instead of the Monte Carlo mean.
    pub analytic_point: bool,
}

impl BayesianImputationConfig {
    pub fn new(request: EffectRequest) -> Self {
        BayesianImputationConfig { request, analytic_point: false }
    }
}

struct Regression {
    beta_hat: DVector<f64>,
    /// Cholesky root of `(F'WF)^-1`.
    root: DMatrix<f64>,
    sigma2_hat: f64,
    dof: f64,
}

fn regress(f: &DMatrix<f64>, x: &DVector<f64>, w: &DVector<f64>) -> Option<Regression> {
    let (n, p) = f.shape();
    if n <= p {
        return None;
    }
    let fw = DMatrix::from_fn(n, p, |i, j| f[(i, j)] * w[i]);
    let gram = fw.transpose() * f;
    let chol = gram.clone().cholesky()?;
    // reject numerically singular designs rather than returning noise
    let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    let diag_max = chol.l_dirty().diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if !(diag_min > 1e-8 * diag_max.max(1.0)) {
        return None;
    }
    let beta_hat = chol.solve(&(fw.transpose() * x));
    let resid = x - f * &beta_hat;
    let rss: f64 = resid.iter().zip(w.iter()).map(|(r, wi)| wi * r * r).sum();
    let dof = (n - p) as f64;
    let root = cov_sqrt(&chol.inverse());
    Some(Regression { beta_hat, root, sigma2_hat: rss / dof, dof })
}

/// Per-time-point conjugate regression of the observed outcomes on the
/// formula's design, with flat priors on the coefficients and `log sigma^2`.
///
/// Each draw takes `sigma^2 ~ InvGamma((n-p)/2, (n-p)/2 * s^2)` and
/// `beta ~ N(beta_hat, (F'F)^-1 sigma^2)`. Sample estimands then impute the
/// counterfactual outcomes from `N(F~ beta, sigma^2 I)`; population
/// estimands are evaluated on the treatment coefficients directly. Time
/// points whose design is rank deficient are skipped.
pub fn bayesian_imputation(
    dataset: &PanelDataset,
    formula: &ModelFormula,
    config: &BayesianImputationConfig,
) -> Result<EffectSeries> {
    dataset.validate()?;
    let req = &config.request;
    if req.draws == 0 || !(req.level > 0.0 && req.level < 1.0) {
        return invalid("need at least one draw and a level in (0, 1)");
    }
    if formula.unit_specific {
        return invalid("Bayesian imputation pools units; unit-specific formulas are not supported");
    }
    let layout = StateLayout::new(dataset, formula)?;
    let q = layout.treatment_terms.len();
    let offset = layout.n_obs_states();
    let weights = match &req.estimand {
        Estimand::Sate | Estimand::CustomSample { .. } | Estimand::CustomState { .. } => None,
        e => Some(population_weights(&layout, dataset, e)?),
    };
    if !req.estimand.is_sample() && q == 0 {
        return invalid("formula has no treatment terms");
    }
    let (n, d) = (dataset.n(), dataset.d());
    let unit_w = DVector::from_vec(dataset.weights.clone().unwrap_or_else(|| vec![1.0; d]));
    let mut series = EffectSeries::new(req.estimand.label(), "bayesian-imputation", req);
    let mut floored = 0usize;
    for t in 0..n {
        let time = dataset.times[t];
        let included: Vec<usize> = (0..d).filter(|&i| !dataset.outcome[(t, i)].is_nan()).collect();
        if included.len() < d {
            let names = (0..d).filter(|i| !included.contains(i)).map(|i| dataset.units[i].clone()).collect();
            series.metadata.excluded.push((time, names));
        }
        let f_all = build_design(dataset, formula, t)?;
        let f = DMatrix::from_fn(included.len(), f_all.ncols(), |r, j| f_all[(included[r], j)]);
        let x = DVector::from_iterator(included.len(), included.iter().map(|&i| dataset.outcome[(t, i)]));
        let w = DVector::from_iterator(included.len(), included.iter().map(|&i| unit_w[i]));
        let Some(reg) = regress(&f, &x, &w) else {
            series.metadata.skipped.push((time, "design is rank deficient or has too few observations".into()));
            continue;
        };
        let scale_sigma2 = if reg.sigma2_hat < SIGMA2_FLOOR {
            floored += 1;
            SIGMA2_FLOOR
        } else {
            reg.sigma2_hat
        };
        let shape = reg.dof / 2.0;
        let gamma = Gamma::new(shape, 1.0 / (shape * scale_sigma2))
            .map_err(|e| Error::Estimation(format!("inverse-gamma parameters at t = {}: {e}", t + 1)))?;
        let mut rng = stream(req.seed, &[t as u64, LANE_BI]);

        let (samples, point): (Vec<f64>, f64) = if req.estimand.is_sample() {
            let cf = build_counterfactual_design(dataset, formula, t)?;
            let cf = DMatrix::from_fn(included.len(), cf.ncols(), |r, j| cf[(included[r], j)]);
            let tr: Vec<f64> = included.iter().map(|&i| dataset.treatment.at(t, i)).collect();
            let xs: Vec<f64> = x.iter().copied().collect();
            let samples = (0..req.draws)
                .map(|_| {
                    let sigma2 = 1.0 / gamma.sample(&mut rng);
                    let beta = draw_mvn(&reg.beta_hat, &(&reg.root * sigma2.sqrt()), &mut rng);
                    let mean = &cf * beta;
                    let xt: Vec<f64> = (0..included.len())
                        .map(|r| mean[r] + (sigma2 / w[r]).sqrt() * standard_normal(&mut rng))
                        .collect::<Vec<f64>>();
                    sample_effect(&req.estimand, &xs, &xt, &tr)
                })
                .collect();
            let imputed = &cf * &reg.beta_hat;
            (samples, sample_effect(&req.estimand, &xs, imputed.as_slice(), &tr))
        } else {
            let eval = |beta: &DVector<f64>| -> f64 {
                let block = beta.rows(offset, q).into_owned();
                match (&weights, &req.estimand) {
                    (Some(a), _) => a.dot(&block),
                    (None, Estimand::CustomState { f, .. }) => f(block.as_slice()),
                    _ => unreachable!("weights exist for every linear estimand"),
                }
            };
            let samples = (0..req.draws)
                .map(|_| {
                    let sigma2 = 1.0 / gamma.sample(&mut rng);
                    eval(&draw_mvn(&reg.beta_hat, &(&reg.root * sigma2.sqrt()), &mut rng))
                })
                .collect();
            (samples, eval(&reg.beta_hat))
        };
        push_summary(&mut series, time, Period::Past, &samples, config.analytic_point.then_some(point))?;
    }
    if floored > 0 {
        series.metadata.notes.push(format!("residual variance floored at {SIGMA2_FLOOR:e} at {floored} time points"));
    }
    Ok(series)
}

/// Which series serves as the control regressor of the aggregate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSeries {
    /// Cross-sectional mean of the control units' outcomes.
    ControlMean,
    /// Cross-sectional mean of covariate `z[k]` over all units.
    Covariate(usize),
}

#[derive(Debug, Clone)]
pub struct CausalImpactConfig {
    /// Number of leading time points without any treatment.
    pub pre_period: usize,
    pub control: ControlSeries,
    /// Fix the regression coefficient at zero (pure local linear trend).
    pub fix_beta_zero: bool,
    /// Also report placebo effects for the pre-period from the one-step
    /// predictive.
    pub include_pre: bool,
    pub fit: FitOptions,
    pub request: EffectRequest,
}

impl CausalImpactConfig {
    pub fn new(pre_period: usize, request: EffectRequest) -> Self {
        CausalImpactConfig {
            pre_period,
            control: ControlSeries::ControlMean,
            fix_beta_zero: false,
            include_pre: false,
            fit: FitOptions::default(),
            request,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CausalImpactFit {
    pub series: EffectSeries,
    pub fit: FitResult,
    pub treated: Vec<usize>,
    pub aggregate: Vec<f64>,
    pub control: Vec<f64>,
}

/// Local linear trend plus static regression on `z`:
/// states `(level, slope, beta)`, or `(level, slope)` when `z` is absent.
fn llt_model(n: usize, z: Option<Arc<[DMatrix<f64>]>>, psi: &[f64]) -> Result<StateSpaceModel> {
    let m = if z.is_some() { 3 } else { 2 };
    let mut g = DMatrix::identity(m, m);
    g[(0, 1)] = 1.0;
    let mut w = DMatrix::zeros(m, m);
    w[(0, 0)] = psi[1];
    w[(1, 1)] = psi[2];
    let design = match z {
        Some(designs) => TimeVarying::Varying(designs),
        None => TimeVarying::Constant(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
    };
    StateSpaceModel::new(n, design, TimeVarying::Constant(g), DMatrix::from_element(1, 1, psi[0]), w)
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
}

/// Aggregated counterfactual forecast: the treated units are summed into one
/// series, a local linear trend with a static regression on a control
/// series is fitted by maximum likelihood on the pre-period, and the
/// treatment-period counterfactual is forecast without correction. The
/// per-unit effect is the aggregate effect divided by the number of treated
/// units.
pub fn causal_impact_aggregate(dataset: &PanelDataset, config: &CausalImpactConfig) -> Result<CausalImpactFit> {
    dataset.validate()?;
    let req = &config.request;
    if !matches!(req.estimand, Estimand::Sate | Estimand::Ate) {
        return invalid(format!(
            "the aggregate model only estimates SATE and ATE, not {}",
            req.estimand.label()
        ));
    }
    if req.draws == 0 || !(req.level > 0.0 && req.level < 1.0) {
        return invalid("need at least one draw and a level in (0, 1)");
    }
    let (n, d) = (dataset.n(), dataset.d());
    let n_pre = config.pre_period;
    if n_pre < 2 {
        return invalid("the aggregate model needs a pre-period of at least 2 points");
    }
    if n_pre >= n {
        return invalid("the treatment period is empty");
    }
    if let Treatment::PerTime(tr) = &dataset.treatment {
        if (0..n_pre).any(|t| (0..d).any(|i| tr[(t, i)] != 0.0)) {
            return invalid("pre-period contains treated observations");
        }
    }
    let treated: Vec<usize> = (0..d).filter(|&i| (n_pre..n).any(|t| dataset.treatment.at(t, i) != 0.0)).collect();
    let controls: Vec<usize> = (0..d).filter(|i| !treated.contains(i)).collect();
    if treated.is_empty() {
        return invalid("no treated units");
    }
    let aggregate: Vec<f64> = (0..n).map(|t| treated.iter().map(|&i| dataset.outcome[(t, i)]).sum()).collect();
    let control: Vec<f64> = match config.control {
        ControlSeries::ControlMean => {
            if controls.is_empty() {
                return invalid("no control units to build the control series");
            }
            (0..n)
                .map(|t| {
                    let obs: Vec<f64> =
                        controls.iter().map(|&i| dataset.outcome[(t, i)]).filter(|v| !v.is_nan()).collect();
                    if obs.is_empty() {
                        f64::NAN
                    } else {
                        obs.iter().sum::<f64>() / obs.len() as f64
                    }
                })
                .collect()
        }
        ControlSeries::Covariate(k) => {
            let z = dataset.z.get(k).ok_or_else(|| Error::InvalidInput(format!("no covariate z{}", k + 1)))?;
            (0..n).map(|t| z.row(t).mean()).collect()
        }
    };
    if let Some(t) = control.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("control series is missing at t = {}", dataset.times[t])));
    }

    let z_designs: Option<Arc<[DMatrix<f64>]>> = (!config.fix_beta_zero)
        .then(|| control.iter().map(|&c| DMatrix::from_row_slice(1, 3, &[1.0, 0.0, c])).collect());
    let pre_obs = DMatrix::from_fn(n_pre, 1, |t, _| aggregate[t]);
    let diffs: Vec<f64> = aggregate[..n_pre].windows(2).map(|w| w[1] - w[0]).filter(|v| v.is_finite()).collect();
    let scale = if diffs.len() >= 2 { variance(&diffs).max(1e-8) } else { 1.0 };
    let params = vec![
        FreeParam::variance("sigma2", Role::ObsVar, scale / 2.0),
        FreeParam::variance("w[level]", Role::StateVar, scale / 10.0),
        FreeParam::variance("w[slope]", Role::StateVar, scale / 100.0),
    ];
    let designs = z_designs.clone();
    let spec = ParameterSpec::new(params, Arc::new(move |psi: &[f64]| llt_model(n_pre, designs.clone(), psi)))?;
    let fit = fit_mle_with(&spec, &pre_obs, &config.fit)?;
    let model = spec.build(&fit.psi_hat)?;
    let filtered = filter(&model, &pre_obs)?;

    let k = treated.len() as f64;
    let mut series = EffectSeries::new(req.estimand.label(), "causal-impact", req);
    series.metadata.notes.push(format!("aggregate of {} treated units", treated.len()));
    if config.include_pre {
        for (t, step) in filtered.steps.iter().enumerate() {
            if aggregate[t].is_nan() {
                series.metadata.skipped.push((dataset.times[t], "aggregate outcome missing".into()));
                continue;
            }
            let sd = step.obs_cov[(0, 0)].max(0.0).sqrt();
            let mut rng = stream(req.seed, &[t as u64, LANE_CI, 0]);
            let samples: Vec<f64> = (0..req.draws)
                .map(|_| {
                    let xt = step.obs_mean[0] + sd * standard_normal(&mut rng);
                    (aggregate[t] - xt) / k
                })
                .collect();
            push_summary(&mut series, dataset.times[t], Period::Pre, &samples, None)?;
        }
    }
    let last = filtered.last_state().ok_or_else(|| Error::InvalidInput("empty pre-period".into()))?;
    let horizon = n - n_pre;
    let future_designs: Vec<DMatrix<f64>> = match &z_designs {
        Some(all) => all[n_pre..].to_vec(),
        None => vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0]); horizon],
    };
    let steps = forecast(&model, &last, horizon, &future_designs, None)?;
    for (h, step) in steps.iter().enumerate() {
        let t = n_pre + h;
        if aggregate[t].is_nan() {
            series.metadata.skipped.push((dataset.times[t], "aggregate outcome missing".into()));
            continue;
        }
        let root = cov_sqrt(&step.obs_cov);
        let mut rng = stream(req.seed, &[h as u64, LANE_CI, 1]);
        let samples: Vec<f64> = (0..req.draws)
            .map(|_| (aggregate[t] - draw_mvn(&step.obs_mean, &root, &mut rng)[0]) / k)
            .collect();
        push_summary(&mut series, dataset.times[t], Period::Past, &samples, None)?;
    }
    Ok(CausalImpactFit { series, fit, treated, aggregate, control })
}

fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
