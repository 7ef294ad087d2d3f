//! Replicated generate, fit, estimate and score runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use dynfx::baselines::{bayesian_imputation, causal_impact_aggregate, BayesianImputationConfig, CausalImpactConfig};
use dynfx::effects::{EffectRequest, EffectSeries, Estimand, Period, DEFAULT_DRAWS};
use dynfx::estimation::FitOptions;
use dynfx::rng::stream;
use dynfx::transfer::{CausalTransfer, TransferOptions};

use crate::error::{Result, SimError};
use crate::generate::{generate, SimConfig, SimData};
use crate::score::{score, Score};

/// Largest share of failed replications a benchmark tolerates.
pub const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Causal transfer (multivariate dynamic regression).
    Ct,
    /// Per-time-point Bayesian imputation.
    Bi,
    /// Aggregated univariate counterfactual model.
    Ci,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ct => "CT",
            Method::Bi => "BI",
            Method::Ci => "CI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ct" | "causal-transfer" => Some(Method::Ct),
            "bi" | "bayesian-imputation" => Some(Method::Bi),
            "ci" | "causal-impact" => Some(Method::Ci),
            _ => None,
        }
    }

    fn supports(self, e: BenchEstimand) -> bool {
        self != Method::Ci || matches!(e, BenchEstimand::Sate | BenchEstimand::Ate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchEstimand {
    Sate,
    Ate,
    /// At the generator's `cate_x_pre` and `g = 0`.
    Cate,
    McateG0,
    McateG1,
    McateDiff,
}

impl BenchEstimand {
    pub const ALL: [BenchEstimand; 6] = [
        BenchEstimand::Sate,
        BenchEstimand::Ate,
        BenchEstimand::Cate,
        BenchEstimand::McateG0,
        BenchEstimand::McateG1,
        BenchEstimand::McateDiff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchEstimand::Sate => "SATE",
            BenchEstimand::Ate => "ATE",
            BenchEstimand::Cate => "CATE",
            BenchEstimand::McateG0 => "MCATE_g0",
            BenchEstimand::McateG1 => "MCATE_g1",
            BenchEstimand::McateDiff => "MCATE_diff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str().eq_ignore_ascii_case(s))
    }

    fn estimand(self, data: &SimData) -> Estimand {
        match self {
            BenchEstimand::Sate => Estimand::Sate,
            BenchEstimand::Ate => Estimand::Ate,
            BenchEstimand::Cate => Estimand::Cate { x_pre: data.truth.cate_x_pre, g_level: 0 },
            BenchEstimand::McateG0 => Estimand::Mcate { g_level: 0 },
            BenchEstimand::McateG1 => Estimand::Mcate { g_level: 1 },
            BenchEstimand::McateDiff => Estimand::McateDiff,
        }
    }

    /// True values over `data.truth.times`, if the generator defines them.
    pub fn truth(self, data: &SimData) -> Option<&[f64]> {
        let t = &data.truth;
        match self {
            BenchEstimand::Sate => Some(&t.sate),
            BenchEstimand::Ate => Some(&t.ate),
            BenchEstimand::Cate => t.cate.as_deref(),
            BenchEstimand::McateG0 => Some(&t.mcate[0]),
            BenchEstimand::McateG1 => Some(&t.mcate[1]),
            BenchEstimand::McateDiff => Some(&t.mcate_diff),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub estimands: Vec<BenchEstimand>,
    pub draws: usize,
    pub level: f64,
    /// Likelihood starts for every fitted model.
    pub n_starts: usize,
    /// Score forecasts over the generator's horizon (causal transfer only).
    pub future: bool,
    /// Keep every replication's effect series in the report.
    pub keep_series: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            sim: SimConfig::default(),
            methods: vec![Method::Ct],
            estimands: vec![BenchEstimand::Sate],
            draws: DEFAULT_DRAWS,
            level: 0.95,
            n_starts: 2,
            future: true,
            keep_series: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationScore {
    pub replication: usize,
    pub method: Method,
    pub estimand: BenchEstimand,
    pub period: Period,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub method: Method,
    pub estimand: BenchEstimand,
    pub period: Period,
    pub mse: f64,
    pub coverage: f64,
    pub width: f64,
    /// Mean over replications of the time-averaged signed error.
    pub bias: f64,
    /// Time average of the absolute replication-averaged error,
    /// `mean_t |mean_r (estimate - truth)|`.
    pub abs_bias: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredSeries {
    pub replication: usize,
    pub method: Method,
    pub estimand: BenchEstimand,
    pub series: EffectSeries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub cells: Vec<ReportCell>,
    pub replications: Vec<ReplicationScore>,
    pub failures: Vec<ReplicationFailure>,
    /// Method/estimand pairs that were requested but cannot be estimated.
    pub skipped: Vec<String>,
    /// Per-replication seeds of the fits and Monte Carlo draws.
    pub seeds: Vec<u64>,
    /// Total fitting and estimation time per method, in seconds. Not part of
    /// the deterministic output.
    #[serde(skip)]
    pub wall_time: BTreeMap<Method, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<StoredSeries>,
}

impl BenchmarkReport {
    pub fn cell(&self, method: Method, estimand: BenchEstimand, period: Period) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.method == method && c.estimand == estimand && c.period == period)
    }

    pub fn scores(&self, method: Method, estimand: BenchEstimand, period: Period) -> Vec<&ReplicationScore> {
        self.replications
            .iter()
            .filter(|r| r.method == method && r.estimand == estimand && r.period == period)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,estimand,period,mse,coverage,width,bias,abs_bias,replications\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{:.10e},{:.6},{:.10e},{:.10e},{:.10e},{}",
                c.method.as_str(),
                c.estimand.as_str(),
                c.period.as_str(),
                c.mse,
                c.coverage,
                c.width,
                c.bias,
                c.abs_bias,
                c.replications
            );
        }
        out
    }
}

fn replication_seed(config: &SimConfig, replication: usize) -> u64 {
    stream(config.seed, &[replication as u64, 1]).random()
}

struct Accumulator {
    scores: Vec<Score>,
    /// Sum over replications of the signed error per time index.
    errors: BTreeMap<i64, (f64, usize)>,
}

struct Run<'a> {
    cfg: &'a BenchmarkConfig,
    data: &'a SimData,
    seed: u64,
}

impl Run<'_> {
    fn request(&self, e: BenchEstimand) -> EffectRequest {
        let mut req = EffectRequest::new(e.estimand(self.data), self.seed);
        req.draws = self.cfg.draws;
        req.level = self.cfg.level;
        req
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { n_starts: self.cfg.n_starts, seed: self.seed, ..FitOptions::default() }
    }

    fn method(&self, method: Method, estimands: &[BenchEstimand]) -> dynfx::Result<Vec<(BenchEstimand, EffectSeries)>> {
        let formula = self.cfg.sim.working_formula();
        let panel = self.data.panel();
        let mut out = vec![];
        match method {
            Method::Ct => {
                let opts = TransferOptions { fit: self.fit_options(), ..TransferOptions::default() };
                let ct = CausalTransfer::fit(&panel, &formula, &opts)?;
                let future = self.data.future().filter(|_| self.cfg.future);
                for &e in estimands {
                    let req = self.request(e);
                    let mut s = ct.past_effects(&req)?;
                    if let Some(f) = &future {
                        s.extend(ct.future_effects(f, &req)?);
                    }
                    out.push((e, s));
                }
            }
            Method::Bi => {
                for &e in estimands {
                    let cfg = BayesianImputationConfig::new(self.request(e));
                    out.push((e, bayesian_imputation(&panel, &formula, &cfg)?));
                }
            }
            Method::Ci => {
                let full = self.data.with_pre_period();
                for &e in estimands {
                    let mut cfg = CausalImpactConfig::new(self.cfg.sim.pre_period, self.request(e));
                    cfg.fit = self.fit_options();
                    out.push((e, causal_impact_aggregate(&full, &cfg)?.series));
                }
            }
        }
        Ok(out)
    }
}

/// Runs `config.sim.replications` replications of every requested method and
/// estimand and aggregates the scores.
///
/// The aggregated model needs an untreated pre-period; when it is requested
/// and the generator has none, `n` pre-period points are generated for every
/// method so that all methods see the same panels. Failed replications are
/// recorded and left out of the aggregates; more than
/// [`MAX_FAILURE_RATE`] failures for any method fail the run.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let mut config = config.clone();
    config.sim.validate()?;
    if config.methods.is_empty() || config.estimands.is_empty() {
        return Err(SimError::Config("at least one method and one estimand are required".into()));
    }
    if config.sim.replications == 0 {
        return Err(SimError::Config("at least one replication is required".into()));
    }
    if config.methods.contains(&Method::Ci) && config.sim.pre_period == 0 {
        config.sim.pre_period = config.sim.n;
    }
    config.methods.sort();
    config.methods.dedup();
    config.estimands.sort();
    config.estimands.dedup();

    let has_cate = matches!(config.sim.model, 1 | 3 | 4);
    let mut skipped = vec![];
    let mut plan: Vec<(Method, Vec<BenchEstimand>)> = vec![];
    for &m in &config.methods {
        let mut es = vec![];
        for &e in &config.estimands {
            if !m.supports(e) {
                skipped.push(format!("{} cannot estimate {}", m.as_str(), e.as_str()));
            } else if e == BenchEstimand::Cate && !has_cate {
                skipped.push(format!("model {} has no CATE truth", config.sim.model));
            } else {
                es.push(e);
            }
        }
        if !es.is_empty() {
            plan.push((m, es));
        }
    }
    skipped.dedup();

    let mut acc: BTreeMap<(Method, BenchEstimand, Period), Accumulator> = BTreeMap::new();
    let mut replications = vec![];
    let mut failures = vec![];
    let mut seeds = vec![];
    let mut wall_time = BTreeMap::new();
    let mut stored = vec![];
    for r in 0..config.sim.replications {
        let data = generate(&config.sim, r)?;
        let run = Run { cfg: &config, data: &data, seed: replication_seed(&config.sim, r) };
        seeds.push(run.seed);
        for (method, estimands) in &plan {
            let start = Instant::now();
            let result = run.method(*method, estimands);
            *wall_time.entry(*method).or_insert(0.0) += start.elapsed().as_secs_f64();
            let scored = result.map_err(|e| e.to_string()).and_then(|series| {
                let mut rows = vec![];
                for (e, s) in &series {
                    let truth = e.truth(&data).expect("estimands without truth were skipped");
                    if s.period(Period::Past).is_empty() {
                        return Err(format!("no {} estimates for the treatment period", e.as_str()));
                    }
                    for period in [Period::Pre, Period::Past, Period::Future] {
                        if !s.period(period).is_empty() {
                            let sc = score(&data.truth.times, truth, s, period).map_err(|x| x.to_string())?;
                            rows.push((*e, period, sc));
                        }
                    }
                }
                Ok((series, rows))
            });
            let (series, rows) = match scored {
                Ok(v) => v,
                Err(error) => {
                    failures.push(ReplicationFailure { replication: r, method: *method, error });
                    continue;
                }
            };
            for (e, period, sc) in rows {
                let truth = e.truth(&data).expect("estimands without truth were skipped");
                let s = &series.iter().find(|(x, _)| *x == e).expect("scored series exists").1;
                let cell = acc
                    .entry((*method, e, period))
                    .or_insert_with(|| Accumulator { scores: vec![], errors: BTreeMap::new() });
                cell.scores.push(sc);
                for p in s.period(period) {
                    let k = data.truth.index_of(p.time).expect("scored times exist");
                    let slot = cell.errors.entry(p.time).or_insert((0.0, 0));
                    slot.0 += p.point - truth[k];
                    slot.1 += 1;
                }
                replications.push(ReplicationScore { replication: r, method: *method, estimand: e, period, score: sc });
            }
            if config.keep_series {
                stored.extend(
                    series.into_iter().map(|(e, s)| StoredSeries { replication: r, method: *method, estimand: e, series: s }),
                );
            }
        }
    }

    for (method, _) in &plan {
        let failed = failures.iter().filter(|f| f.method == *method).count();
        if failed as f64 > MAX_FAILURE_RATE * config.sim.replications as f64 {
            let first = failures.iter().find(|f| f.method == *method).map(|f| f.error.clone()).unwrap_or_default();
            return Err(SimError::Benchmark(format!(
                "{} failed in {failed} of {} replications (first error: {first})",
                method.as_str(),
                config.sim.replications
            )));
        }
    }

    let cells = acc
        .into_iter()
        .map(|((method, estimand, period), a)| {
            let k = a.scores.len() as f64;
            let mean = |f: fn(&Score) -> f64| a.scores.iter().map(f).sum::<f64>() / k;
            let abs_bias =
                a.errors.values().map(|(s, c)| (s / *c as f64).abs()).sum::<f64>() / a.errors.len() as f64;
            ReportCell {
                method,
                estimand,
                period,
                mse: mean(|s| s.mse),
                coverage: mean(|s| s.coverage),
                width: mean(|s| s.width),
                bias: mean(|s| s.bias),
                abs_bias,
                replications: a.scores.len(),
            }
        })
        .collect();

    Ok(BenchmarkReport { config, cells, replications, failures, skipped, seeds, wall_time, series: stored })
}
