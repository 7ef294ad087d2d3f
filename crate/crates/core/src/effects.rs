//! Monte Carlo treatment-effect samples and their summaries.
//!
//! Sample estimands (SATE) impute counterfactual outcomes from the
//! observation predictive; population estimands (ATE, CATE, MCATE) are
//! linear functionals of the treatment-effect states.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{PanelDataset, StateLayout, Term, Treatment};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cov_sqrt, draw_mvn, select_sub, select_vec, symmetrize};
use crate::rng::stream;
use crate::ssm::{ForecastStep, GaussianState, SmootherResult, StateSpaceModel};

/// Default Monte Carlo sample count.
pub const DEFAULT_DRAWS: usize = 1000;

const LANE_COUNTERFACTUAL: u64 = 1;
const LANE_FACTUAL: u64 = 2;
const LANE_STATE: u64 = 3;

/// Functional of one imputed cross-section: `(factual, counterfactual,
/// treatment)` over the units included at that time point.
pub type OutcomeFunctional = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// Functional of one draw of the treatment-effect states.
pub type StateFunctional = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Estimand {
    Sate,
    Ate,
    /// Effect for a unit with this pre-period covariate and group level
    /// (level index into the dataset's group factor; 0 is the reference).
    Cate { x_pre: f64, g_level: usize },
    /// Average effect over the units in one group level.
    Mcate { g_level: usize },
    /// `MCATE(level 1) - MCATE(level 0)`.
    McateDiff,
    CustomSample { name: String, f: OutcomeFunctional },
    CustomState { name: String, f: StateFunctional },
}

impl Estimand {
    pub fn label(&self) -> String {
        match self {
            Estimand::Sate => "SATE".into(),
            Estimand::Ate => "ATE".into(),
            Estimand::Cate { x_pre, g_level } => format!("CATE(x_pre={x_pre},g={g_level})"),
            Estimand::Mcate { g_level } => format!("MCATE(g={g_level})"),
            Estimand::McateDiff => "MCATE_diff".into(),
            Estimand::CustomSample { name, .. } | Estimand::CustomState { name, .. } => name.clone(),
        }
    }

    pub fn is_sample(&self) -> bool {
        matches!(self, Estimand::Sate | Estimand::CustomSample { .. })
    }
}

impl fmt::Debug for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone)]
pub struct EffectRequest {
    pub estimand: Estimand,
    /// Monte Carlo draws per time point.
    pub draws: usize,
    /// Interval level in `(0, 1)`.
    pub level: f64,
    pub seed: u64,
}

impl EffectRequest {
    pub fn new(estimand: Estimand, seed: u64) -> Self {
        EffectRequest { estimand, draws: DEFAULT_DRAWS, level: 0.95, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return invalid("at least one Monte Carlo draw is required");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return invalid(format!("interval level {} outside (0, 1)", self.level));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    /// Before treatment started (placebo points).
    Pre,
    /// Observed treatment period.
    Past,
    /// Forecast beyond the data.
    Future,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Pre => "pre",
            Period::Past => "past",
            Period::Future => "future",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    pub time: i64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub period: Period,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectMetadata {
    /// Units left out of a sample estimand at a time point (missing outcome).
    pub excluded: Vec<(i64, Vec<String>)>,
    /// Time points without an estimate and why.
    pub skipped: Vec<(i64, String)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSeries {
    pub estimand: String,
    pub method: String,
    pub draws: usize,
    pub level: f64,
    pub seed: u64,
    pub points: Vec<EffectPoint>,
    pub metadata: EffectMetadata,
}

impl EffectSeries {
    pub fn new(estimand: impl Into<String>, method: impl Into<String>, request: &EffectRequest) -> Self {
        EffectSeries {
            estimand: estimand.into(),
            method: method.into(),
            draws: request.draws,
            level: request.level,
            seed: request.seed,
            points: vec![],
            metadata: EffectMetadata::default(),
        }
    }

    pub fn period(&self, period: Period) -> Vec<&EffectPoint> {
        self.points.iter().filter(|p| p.period == period).collect()
    }

    /// Concatenates `other`'s points and metadata after this series' own.
    pub fn extend(&mut self, other: EffectSeries) {
        self.points.extend(other.points);
        self.metadata.excluded.extend(other.metadata.excluded);
        self.metadata.skipped.extend(other.metadata.skipped);
        self.metadata.notes.extend(other.metadata.notes);
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `p (N - 1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(mean, lower, upper)` with equal-tailed percentile bounds.
pub fn summarize_samples(samples: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return invalid("cannot summarize an empty sample");
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("interval level {level} outside (0, 1)"));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((mean, quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha)))
}

pub(crate) fn push_summary(series: &mut EffectSeries, time: i64, period: Period, samples: &[f64], point: Option<f64>) -> Result<()> {
    let (mean, lower, upper) = summarize_samples(samples, series.level)?;
    series.points.push(EffectPoint { time, point: point.unwrap_or(mean), lower, upper, period });
    Ok(())
}

fn treatment_row(treatment: &Treatment, t: usize, d: usize) -> Vec<f64> {
    (0..d).map(|i| treatment.at(t, i)).collect()
}

/// Sample effect from one imputed cross-section.
pub(crate) fn sample_effect(
    estimand: &Estimand,
    factual: &[f64],
    counterfactual: &[f64],
    treatment: &[f64],
) -> f64 {
    match estimand {
        Estimand::CustomSample { f, .. } => f(factual, counterfactual, treatment),
        _ => {
            let k = factual.len() as f64;
            factual
                .iter()
                .zip(counterfactual)
                .zip(treatment)
                .map(|((x, xt), tr)| (xt - x) * ((tr - 1.0).abs() - tr))
                .sum::<f64>()
                / k
        }
    }
}

fn require_sample(request: &EffectRequest) -> Result<()> {
    request.validate()?;
    if !request.estimand.is_sample() {
        return invalid(format!("{} is not a sample estimand", request.estimand.label()));
    }
    Ok(())
}

/// Past sample effects from the smoothed states.
///
/// At each time point the counterfactual outcomes of the units with an
/// observed outcome are drawn from `N(F~_t s_t, F~_t S_t F~_t' + V)` and
/// compared with what was observed.
pub fn sample_effects(
    model: &StateSpaceModel,
    smoothed: &SmootherResult,
    dataset: &PanelDataset,
    cf_designs: &[DMatrix<f64>],
    request: &EffectRequest,
) -> Result<EffectSeries> {
    require_sample(request)?;
    if !dataset.treatment.is_binary() {
        return invalid("sample effects need a binary treatment");
    }
    let (n, d) = (dataset.n(), dataset.d());
    if smoothed.len() != n || cf_designs.len() < n {
        return invalid("smoother, designs and dataset cover different time spans");
    }
    let v = model.effective_obs_cov();
    let mut series = EffectSeries::new(request.estimand.label(), "causal-transfer", request);
    for t in 0..n {
        let time = dataset.times[t];
        let included: Vec<usize> = (0..d).filter(|&i| !dataset.outcome[(t, i)].is_nan()).collect();
        if included.len() < d {
            let names = (0..d).filter(|i| !included.contains(i)).map(|i| dataset.units[i].clone()).collect();
            series.metadata.excluded.push((time, names));
        }
        if included.is_empty() {
            series.metadata.skipped.push((time, "no observed outcomes".into()));
            continue;
        }
        let f = &cf_designs[t];
        let mean = select_vec(&(f * &smoothed.means[t]), &included);
        let mut q = f * &smoothed.covs[t] * f.transpose() + v;
        symmetrize(&mut q);
        let root = cov_sqrt(&select_sub(&q, &included));
        let x: Vec<f64> = included.iter().map(|&i| dataset.outcome[(t, i)]).collect();
        let tr_all = treatment_row(&dataset.treatment, t, d);
        let tr: Vec<f64> = included.iter().map(|&i| tr_all[i]).collect();
        let mut rng = stream(request.seed, &[t as u64, LANE_COUNTERFACTUAL]);
        let samples: Vec<f64> = (0..request.draws)
            .map(|_| {
                let xt = draw_mvn(&mean, &root, &mut rng);
                sample_effect(&request.estimand, &x, xt.as_slice(), &tr)
            })
            .collect();
        push_summary(&mut series, time, Period::Past, &samples, None)?;
    }
    Ok(series)
}

/// Future sample effects: both potential outcomes are drawn independently
/// from their forecast predictives.
pub fn future_sample_effects(
    forecast: &[ForecastStep],
    future: &PanelDataset,
    request: &EffectRequest,
) -> Result<EffectSeries> {
    require_sample(request)?;
    if forecast.is_empty() {
        return invalid("forecast horizon must be at least 1");
    }
    if future.n() < forecast.len() {
        return invalid("future panel is shorter than the forecast");
    }
    let d = future.d();
    let mut series = EffectSeries::new(request.estimand.label(), "causal-transfer", request);
    for (k, step) in forecast.iter().enumerate() {
        let (Some(cf_mean), Some(cf_cov)) = (&step.cf_obs_mean, &step.cf_obs_cov) else {
            return invalid("forecast lacks counterfactual predictives");
        };
        let root = cov_sqrt(&step.obs_cov);
        let cf_root = cov_sqrt(cf_cov);
        let tr = treatment_row(&future.treatment, k, d);
        let mut rng_f = stream(request.seed, &[k as u64, LANE_FACTUAL, 1]);
        let mut rng_c = stream(request.seed, &[k as u64, LANE_COUNTERFACTUAL, 1]);
        let samples: Vec<f64> = (0..request.draws)
            .map(|_| {
                let x = draw_mvn(&step.obs_mean, &root, &mut rng_f);
                let xt = draw_mvn(cf_mean, &cf_root, &mut rng_c);
                sample_effect(&request.estimand, x.as_slice(), xt.as_slice(), &tr)
            })
            .collect();
        push_summary(&mut series, future.times[k], Period::Future, &samples, None)?;
    }
    Ok(series)
}

/// Linear weights on the treatment-effect states (in `layout.treatment_terms`
/// order) whose inner product with a state draw is the estimand.
pub fn population_weights(layout: &StateLayout, dataset: &PanelDataset, estimand: &Estimand) -> Result<DVector<f64>> {
    let q = layout.treatment_terms.len();
    if q == 0 {
        return invalid("formula has no treatment terms");
    }
    let unit_row = |i: usize| -> DVector<f64> {
        DVector::from_fn(q, |k, _| match &layout.treatment_terms[k] {
            Term::T => 1.0,
            Term::TXPre => dataset.x_pre.as_ref().expect("layout checked x_pre")[i],
            Term::TG(j) => dataset.g.as_ref().expect("layout checked g").dummy(i, *j),
            _ => 0.0,
        })
    };
    let group_mean = |level: usize| -> Result<DVector<f64>> {
        let g = dataset.g.as_ref().ok_or_else(|| Error::InvalidInput("dataset has no group factor".into()))?;
        if level >= g.levels.len() {
            return invalid(format!("group level {level} does not exist"));
        }
        let members: Vec<usize> = (0..dataset.d()).filter(|&i| g.codes[i] == level).collect();
        if members.is_empty() {
            return invalid(format!("group {} has no units", g.levels[level]));
        }
        Ok(members.iter().map(|&i| unit_row(i)).fold(DVector::zeros(q), |a, r| a + r) / members.len() as f64)
    };
    match estimand {
        Estimand::Ate => Ok((0..dataset.d()).map(unit_row).fold(DVector::zeros(q), |a, r| a + r) / dataset.d() as f64),
        Estimand::Cate { x_pre, g_level } => {
            let n_levels = dataset.g.as_ref().map_or(1, |g| g.levels.len());
            if *g_level >= n_levels {
                return invalid(format!("group level {g_level} does not exist"));
            }
            Ok(DVector::from_fn(q, |k, _| match &layout.treatment_terms[k] {
                Term::T => 1.0,
                Term::TXPre => *x_pre,
                Term::TG(j) => {
                    if *g_level == j + 1 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            }))
        }
        Estimand::Mcate { g_level } => group_mean(*g_level),
        Estimand::McateDiff => Ok(group_mean(1)? - group_mean(0)?),
        other => invalid(format!("{} is not a population estimand", other.label())),
    }
}

fn treatment_block(layout: &StateLayout, state: &GaussianState) -> (DVector<f64>, DMatrix<f64>) {
    let start = layout.n_obs_states();
    let q = layout.treatment_terms.len();
    (state.mean.rows(start, q).into_owned(), state.cov.view((start, start), (q, q)).into_owned())
}

fn population_series<'a>(
    layout: &StateLayout,
    dataset: &PanelDataset,
    states: impl Iterator<Item = (i64, GaussianState)> + 'a,
    period: Period,
    request: &EffectRequest,
) -> Result<EffectSeries> {
    request.validate()?;
    if request.estimand.is_sample() {
        return invalid(format!("{} is not a population estimand", request.estimand.label()));
    }
    let weights = match &request.estimand {
        Estimand::CustomState { .. } => None,
        e => Some(population_weights(layout, dataset, e)?),
    };
    if layout.treatment_terms.is_empty() {
        return invalid("formula has no treatment terms");
    }
    let lane_period = if period == Period::Future { 1 } else { 0 };
    let mut series = EffectSeries::new(request.estimand.label(), "causal-transfer", request);
    for (k, (time, state)) in states.enumerate() {
        let (mean, cov) = treatment_block(layout, &state);
        let eval = |s: &DVector<f64>| match (&weights, &request.estimand) {
            (Some(a), _) => a.dot(s),
            (None, Estimand::CustomState { f, .. }) => f(s.as_slice()),
            _ => unreachable!("weights exist for every linear estimand"),
        };
        let root = cov_sqrt(&cov);
        let mut rng = stream(request.seed, &[k as u64, LANE_STATE, lane_period]);
        let samples: Vec<f64> = (0..request.draws).map(|_| eval(&draw_mvn(&mean, &root, &mut rng))).collect();
        push_summary(&mut series, time, period, &samples, Some(eval(&mean)))?;
    }
    Ok(series)
}

/// Population effects (ATE, CATE, MCATE, MCATE_diff or a state functional)
/// from smoothed states; point estimates evaluate the estimand at `s_t`.
pub fn population_effects(
    smoothed: &SmootherResult,
    layout: &StateLayout,
    dataset: &PanelDataset,
    request: &EffectRequest,
) -> Result<EffectSeries> {
    if smoothed.len() != dataset.n() {
        return invalid("smoother and dataset cover different time spans");
    }
    let states = (0..smoothed.len()).map(|t| {
        (dataset.times[t], GaussianState { mean: smoothed.means[t].clone(), cov: smoothed.covs[t].clone() })
    });
    population_series(layout, dataset, states, Period::Past, request)
}

/// Alias of [`population_effects`] for the conditional estimands.
pub fn heterogeneous_effects(
    smoothed: &SmootherResult,
    layout: &StateLayout,
    dataset: &PanelDataset,
    request: &EffectRequest,
) -> Result<EffectSeries> {
    population_effects(smoothed, layout, dataset, request)
}

/// Population effects from forecast states; point estimates at `m_t`.
///
/// `dataset` supplies the unit covariates the estimand averages over and
/// `times` labels the forecast steps.
pub fn future_population_effects(
    forecast: &[ForecastStep],
    layout: &StateLayout,
    dataset: &PanelDataset,
    times: &[i64],
    request: &EffectRequest,
) -> Result<EffectSeries> {
    if forecast.is_empty() {
        return invalid("forecast horizon must be at least 1");
    }
    if times.len() < forecast.len() {
        return invalid("fewer time labels than forecast steps");
    }
    let states = forecast.iter().zip(times).map(|(s, &time)| (time, s.state.clone()));
    population_series(layout, dataset, states, Period::Future, request)
}

/// Sample effects from externally supplied imputations of the unobserved
/// potential outcomes: `imputations[b]` is an `n x d` draw of the
/// counterfactual outcomes.
pub fn effects_from_imputations(
    dataset: &PanelDataset,
    imputations: &[DMatrix<f64>],
    request: &EffectRequest,
    method: &str,
) -> Result<EffectSeries> {
    request.validate()?;
    if imputations.is_empty() {
        return invalid("no imputations supplied");
    }
    let (n, d) = (dataset.n(), dataset.d());
    if imputations.iter().any(|m| m.shape() != (n, d)) {
        return invalid("imputations must match the panel shape");
    }
    let mut series = EffectSeries::new(request.estimand.label(), method, request);
    series.draws = imputations.len();
    for t in 0..n {
        let time = dataset.times[t];
        let included: Vec<usize> = (0..d).filter(|&i| !dataset.outcome[(t, i)].is_nan()).collect();
        if included.len() < d {
            let names = (0..d).filter(|i| !included.contains(i)).map(|i| dataset.units[i].clone()).collect();
            series.metadata.excluded.push((time, names));
        }
        if included.is_empty() {
            series.metadata.skipped.push((time, "no observed outcomes".into()));
            continue;
        }
        let x: Vec<f64> = included.iter().map(|&i| dataset.outcome[(t, i)]).collect();
        let tr: Vec<f64> = included.iter().map(|&i| dataset.treatment.at(t, i)).collect();
        let samples: Vec<f64> = imputations
            .iter()
            .map(|m| {
                let xt: Vec<f64> = included.iter().map(|&i| m[(t, i)]).collect();
                sample_effect(&request.estimand, &x, &xt, &tr)
            })
            .collect();
        push_summary(&mut series, time, Period::Past, &samples, None)?;
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_rule() {
        let (p, lo, hi) = summarize_samples(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert_eq!((p, lo, hi), (2.5, 1.75, 3.25));
    }

    #[test]
    fn constant_samples_collapse() {
        assert_eq!(summarize_samples(&[2.0; 7], 0.95).unwrap(), (2.0, 2.0, 2.0));
    }

    #[test]
    fn tiny_level_approaches_median() {
        let s: Vec<f64> = (0..101).map(|v| v as f64).collect();
        let (_, lo, hi) = summarize_samples(&s, 1e-9).unwrap();
        assert!((lo - 50.0).abs() < 1e-6 && (hi - 50.0).abs() < 1e-6);
    }

    #[test]
    fn imputation_equal_to_observation_gives_zero() {
        let e = sample_effect(&Estimand::Sate, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0]);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn signs_follow_treatment_flip() {
        // treated unit observed 5, imputed control 3; control unit observed 2, imputed treated 6
        let e = sample_effect(&Estimand::Sate, &[5.0, 2.0], &[3.0, 6.0], &[1.0, 0.0]);
        assert_eq!(e, 3.0);
    }
}
