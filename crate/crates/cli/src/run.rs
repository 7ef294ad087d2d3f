//! Pipelines behind the four commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dynfx::baselines::{bayesian_imputation, causal_impact_aggregate, BayesianImputationConfig, CausalImpactConfig};
use dynfx::design::{ModelFormula, PanelDataset, Treatment};
use dynfx::effects::{EffectRequest, EffectSeries, Estimand};
use dynfx::estimation::FitOptions;
use dynfx::robust::RobustConfig;
use dynfx::transfer::{CausalTransfer, TransferOptions};
use dynfx_sim::bench::{run_benchmark, BenchEstimand, BenchmarkConfig, Method};
use dynfx_sim::{generate, SimData};

use crate::config::{Command, MethodName, OutcomeTransform, OutputFormat, RunConfig, WeightScheme};
use crate::error::{validation, CliError, Result};
use crate::ingest::{ingest_panel, write_panel, IngestOptions};
use crate::plot::{csv_field, emit_plotdata};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub names: Vec<String>,
    pub psi: Vec<f64>,
    pub loglik: f64,
    pub n_starts: usize,
}

/// Everything needed to repeat a run: the resolved config, digests of the
/// inputs and outputs, and what was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: BTreeMap<String, String>,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub method: Option<String>,
    /// Scale of the reported effects.
    pub scale: String,
    pub seeds: BTreeMap<String, u64>,
    pub fit: Option<FitSummary>,
    pub notes: Vec<String>,
    pub outputs: Vec<FileDigest>,
}

/// Files written by a successful run, manifest last.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Pending {
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
    method: Option<String>,
    fit: Option<FitSummary>,
    seeds: BTreeMap<String, u64>,
    notes: Vec<String>,
}

impl Pending {
    fn new() -> Self {
        Pending { inputs: vec![], files: vec![], method: None, fit: None, seeds: BTreeMap::new(), notes: vec![] }
    }

    fn add(&mut self, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.push((name.into(), content.into()));
    }

    fn read_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256(&bytes) });
        Ok(())
    }
}

/// Executes `config` and writes its outputs and manifest. Nothing is left
/// behind in the output directory when the run fails.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut pending = Pending::new();
    match config.command {
        Command::Estimate | Command::Forecast => estimate(config, &mut pending)?,
        Command::Simulate => simulate(config, &mut pending)?,
        Command::Benchmark => benchmark(config, &mut pending)?,
    }
    let scale = match config.transform {
        OutcomeTransform::None => "outcome scale".to_string(),
        OutcomeTransform::Sqrt => {
            "square-root scale: outcomes were square-root transformed on ingest and effects are not back-transformed"
                .to_string()
        }
    };
    let manifest = Manifest {
        tool: "dynfx".into(),
        versions: BTreeMap::from([
            ("dynfx".to_string(), dynfx::VERSION.to_string()),
            ("dynfx-sim".to_string(), dynfx_sim::VERSION.to_string()),
            ("dynfx-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]),
        config_hash: config.hash(),
        config: config.clone(),
        inputs: pending.inputs,
        method: pending.method,
        scale,
        seeds: pending.seeds,
        fit: pending.fit,
        notes: pending.notes,
        outputs: pending.files.iter().map(|(name, b)| FileDigest { path: name.clone(), sha256: sha256(b) }).collect(),
    };
    let mut files = pending.files;
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    files.push((MANIFEST.into(), json.into_bytes()));
    let dir = config.output.clone().expect("validated");
    let written = write_all(&dir, &files)?;
    Ok(RunOutput { dir, files: written, manifest })
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    let created = !dir.exists();
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = vec![];
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, bytes) {
            for p in written.iter().chain(std::iter::once(&path)) {
                let _ = std::fs::remove_file(p);
            }
            if created {
                let _ = std::fs::remove_dir(dir);
            }
            return Err(CliError::io(path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Parses an estimand name against the panel's group levels.
pub fn parse_estimand(s: &str, ds: &PanelDataset) -> Result<Estimand> {
    let s = s.trim();
    let level = |label: &str| -> Result<usize> {
        let g = ds.g.as_ref().ok_or_else(|| CliError::Validation(format!("{s} needs a g column")))?;
        g.level_index(label.trim())
            .ok_or_else(|| CliError::Validation(format!("{s}: g has no level {label:?} (levels {:?})", g.levels)))
    };
    let args = |prefix: &str| -> Option<BTreeMap<String, String>> {
        let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
        inner
            .split(',')
            .map(|kv| kv.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
            .collect()
    };
    match s {
        "SATE" => return Ok(Estimand::Sate),
        "ATE" => return Ok(Estimand::Ate),
        "MCATE_diff" => return Ok(Estimand::McateDiff),
        _ => {}
    }
    if let Some(a) = args("MCATE") {
        if let (Some(g), 1) = (a.get("g"), a.len()) {
            return Ok(Estimand::Mcate { g_level: level(g)? });
        }
    }
    if let Some(a) = args("CATE") {
        if let (Some(x), Some(g), 2) = (a.get("x_pre"), a.get("g"), a.len()) {
            let x_pre = x.parse::<f64>().map_err(|_| CliError::Validation(format!("{s}: x_pre is not a number")))?;
            let g_level = if ds.g.is_none() && g == "0" { 0 } else { level(g)? };
            return Ok(Estimand::Cate { x_pre, g_level });
        }
    }
    validation(format!(
        "unknown estimand {s:?}; expected SATE, ATE, CATE(x_pre=<v>,g=<label>), MCATE(g=<label>) or MCATE_diff"
    ))
}

fn request(config: &RunConfig, estimand: Estimand) -> EffectRequest {
    let mut req = EffectRequest::new(estimand, config.seed);
    req.draws = config.draws;
    req.level = config.level;
    req
}

fn weighted(ds: PanelDataset, weights: WeightScheme) -> Result<PanelDataset> {
    match weights {
        WeightScheme::None => Ok(ds),
        WeightScheme::InvSqrtXpre => {
            let x = ds.x_pre.clone().ok_or_else(|| CliError::Validation("inv-sqrt-xpre weights need x_pre".into()))?;
            if let Some(i) = x.iter().position(|v| *v <= 0.0) {
                return validation(format!("inv-sqrt-xpre weights need x_pre > 0; unit {} has {}", ds.units[i], x[i]));
            }
            Ok(ds.with_weights(x.iter().map(|v| 1.0 / v.sqrt()).collect())?)
        }
    }
}

/// Number of leading time points at which no unit is treated.
fn untreated_prefix(ds: &PanelDataset) -> usize {
    match &ds.treatment {
        Treatment::PerUnit(_) => 0,
        Treatment::PerTime(_) => (0..ds.n()).take_while(|&t| (0..ds.d()).all(|i| ds.treatment.at(t, i) == 0.0)).count(),
    }
}

fn future_panel(config: &RunConfig, panel: &PanelDataset, formula: &ModelFormula) -> Result<PanelDataset> {
    let h = config.horizon;
    let last = *panel.times.last().expect("panel is nonempty");
    let d = panel.d();
    let mut future = match &config.future_input {
        Some(path) => {
            let f = ingest_panel(path, &IngestOptions::default())?;
            if f.units != panel.units {
                return validation(format!("{}: units differ from the input panel", path.display()));
            }
            if f.times[0] <= last {
                return validation(format!("{}: future times must come after t = {last}", path.display()));
            }
            if f.n() < h {
                return validation(format!("{}: has {} time points, the horizon is {h}", path.display(), f.n()));
            }
            if f.z.len() != panel.z.len() {
                return validation(format!("{}: needs the same z columns as the input panel", path.display()));
            }
            f.slice_times(0..h)?
        }
        None => {
            if formula.z && !panel.z.is_empty() {
                return validation("the formula uses z; give its future values with future_input");
            }
            let treatment = match &panel.treatment {
                Treatment::PerUnit(v) => Treatment::PerUnit(v.clone()),
                Treatment::PerTime(m) => Treatment::PerUnit(m.row(panel.n() - 1).iter().copied().collect()),
            };
            let times = (1..=h as i64).map(|k| last + k).collect();
            let mut f = PanelDataset::new(panel.units.clone(), times, DMatrix::from_element(h, d, f64::NAN), treatment)?;
            for _ in &panel.z {
                f = f.with_z(DMatrix::zeros(h, d))?;
            }
            f
        }
    };
    future.x_pre = panel.x_pre.clone();
    future.g = panel.g.clone();
    future.weights = panel.weights.clone();
    future.validate()?;
    Ok(future)
}

fn estimate(config: &RunConfig, out: &mut Pending) -> Result<()> {
    let input = config.input.as_ref().expect("validated");
    out.read_input(input)?;
    if let Some(f) = &config.future_input {
        if config.command == Command::Forecast {
            out.read_input(f)?;
        }
    }
    let opts = IngestOptions { transform: config.transform, x_pre_window: config.x_pre_window };
    let ds = weighted(ingest_panel(input, &opts)?, config.weights)?;
    let mut formula = ModelFormula::parse(&config.formula)?;
    formula.unit_specific = config.unit_specific;
    let estimands = config.estimands.iter().map(|s| parse_estimand(s, &ds)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = config.estimands.iter().map(|s| s.trim().to_string()).collect();
    out.method = Some(config.method.as_str().into());
    out.seeds.insert("fit".into(), config.seed);
    out.seeds.insert("effects".into(), config.seed);
    let fit_opts = FitOptions { n_starts: config.n_starts, seed: config.seed, ..FitOptions::default() };

    let pre = match config.pre_period {
        Some(p) => p,
        None => untreated_prefix(&ds),
    };
    let mut series: Vec<EffectSeries> = vec![];
    match config.method {
        MethodName::CausalTransfer | MethodName::BayesianImputation => {
            let ds = if pre > 0 {
                if pre >= ds.n() {
                    return validation(format!("pre_period {pre} leaves no treatment period"));
                }
                out.notes.push(format!("dropped {pre} pre-period time points before fitting"));
                ds.slice_times(pre..ds.n())?
            } else {
                ds
            };
            if config.method == MethodName::CausalTransfer {
                let opts = TransferOptions {
                    fit: fit_opts,
                    robust: config.robust.then(RobustConfig::default),
                    ..TransferOptions::default()
                };
                let ct = CausalTransfer::fit(&ds, &formula, &opts)?;
                out.fit = Some(FitSummary {
                    names: ct.fit.names.clone(),
                    psi: ct.fit.psi_hat.clone(),
                    loglik: ct.fit.loglik,
                    n_starts: config.n_starts,
                });
                let future = match config.command {
                    Command::Forecast => Some(future_panel(config, &ds, &formula)?),
                    _ => None,
                };
                for e in estimands {
                    let req = request(config, e);
                    let mut s = ct.past_effects(&req)?;
                    if let Some(f) = &future {
                        s.extend(ct.future_effects(f, &req)?);
                    }
                    series.push(s);
                }
            } else {
                for e in estimands {
                    // the posterior mean is exact; the Monte Carlo mean of a t posterior converges slowly
                    let mut cfg = BayesianImputationConfig::new(request(config, e));
                    cfg.analytic_point = true;
                    series.push(bayesian_imputation(&ds, &formula, &cfg)?);
                }
            }
        }
        MethodName::CausalImpact => {
            if pre == 0 {
                return validation("causal-impact needs a pre-period; set pre_period or give T = 0 on the leading rows");
            }
            out.notes.push("causal-impact uses the control-unit mean as its regressor; the formula is ignored".into());
            for e in estimands {
                let mut cfg = CausalImpactConfig::new(pre, request(config, e));
                cfg.include_pre = true;
                cfg.fit = fit_opts.clone();
                let fit = causal_impact_aggregate(&ds, &cfg)?;
                out.fit = Some(FitSummary {
                    names: fit.fit.names.clone(),
                    psi: fit.fit.psi_hat.clone(),
                    loglik: fit.fit.loglik,
                    n_starts: config.n_starts,
                });
                series.push(fit.series);
            }
        }
    }
    for (s, name) in series.iter_mut().zip(&names) {
        s.estimand = name.clone();
    }
    for s in &series {
        let m = &s.metadata;
        if !m.skipped.is_empty() {
            out.notes.push(format!("{}: skipped {} time points", s.estimand, m.skipped.len()));
        }
        if !m.excluded.is_empty() {
            out.notes.push(format!("{}: units with missing y excluded at {} time points", s.estimand, m.excluded.len()));
        }
        out.notes.extend(m.notes.iter().map(|n| format!("{}: {n}", s.estimand)));
    }
    match config.format {
        OutputFormat::Csv => out.add("effects.csv", effects_csv(&series)),
        OutputFormat::Json => {
            let mut json = serde_json::to_string_pretty(&series).expect("effects serialize");
            json.push('\n');
            out.add("effects.json", json);
        }
    }
    if config.plotdata {
        out.add("plot.csv", emit_plotdata(&series, None));
    }
    Ok(())
}

pub const EFFECTS_HEADER: &str = "t,estimand,point,lower,upper,period";

pub fn effects_csv(series: &[EffectSeries]) -> String {
    let mut s = format!("{EFFECTS_HEADER}\n");
    for e in series {
        let name = csv_field(&e.estimand);
        for p in &e.points {
            let _ = writeln!(s, "{},{name},{},{},{},{}", p.time, p.point, p.lower, p.upper, p.period.as_str());
        }
    }
    s
}

fn truth_csv(data: &SimData) -> String {
    let t = &data.truth;
    let mut s = String::from("t,SATE,ATE,MCATE_g0,MCATE_g1,MCATE_diff");
    if t.cate.is_some() {
        s.push_str(",CATE");
    }
    s.push('\n');
    for k in 0..t.times.len() {
        let _ = write!(s, "{},{},{},{},{},{}", t.times[k], t.sate[k], t.ate[k], t.mcate[0][k], t.mcate[1][k], t.mcate_diff[k]);
        if let Some(c) = &t.cate {
            let _ = write!(s, ",{}", c[k]);
        }
        s.push('\n');
    }
    s
}

fn simulate(config: &RunConfig, out: &mut Pending) -> Result<()> {
    let data = generate(&config.sim, 0)?;
    out.seeds.insert("generator".into(), config.sim.seed);
    let panel = if config.sim.pre_period > 0 { data.with_pre_period() } else { data.panel() };
    out.add("panel.csv", write_panel(&panel));
    if let Some(f) = data.future() {
        out.add("future.csv", write_panel(&f));
    }
    out.add("truth.csv", truth_csv(&data));
    if data.truth.cate.is_some() {
        out.notes.push(format!("CATE truth is at x_pre = {} and g = 0", data.truth.cate_x_pre));
    }
    Ok(())
}

fn benchmark(config: &RunConfig, out: &mut Pending) -> Result<()> {
    let methods = config
        .methods
        .iter()
        .map(|m| Method::parse(m).ok_or_else(|| CliError::Validation(format!("unknown benchmark method {m:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let estimands = config
        .estimands
        .iter()
        .map(|e| BenchEstimand::parse(e).ok_or_else(|| CliError::Validation(format!("unknown benchmark estimand {e:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let bench = BenchmarkConfig {
        sim: config.sim.clone(),
        methods,
        estimands,
        draws: config.draws,
        level: config.level,
        n_starts: config.n_starts,
        future: true,
        keep_series: true,
    };
    let mut report = run_benchmark(&bench)?;
    out.seeds.insert("generator".into(), config.sim.seed);
    for (r, s) in report.seeds.iter().enumerate() {
        out.seeds.insert(format!("replication_{r:03}"), *s);
    }
    for (m, secs) in &report.wall_time {
        eprintln!("{}: {secs:.1} s", m.as_str());
    }
    out.notes.extend(report.skipped.iter().cloned());
    out.notes.extend(report.failures.iter().map(|f| format!("{} replication {}: {}", f.method.as_str(), f.replication, f.error)));

    // plot data of the first replication, one file per method and estimand
    let hash = &config.hash()[..12];
    let stored = std::mem::take(&mut report.series);
    let first = generate(&report.config.sim, 0)?;
    for s in stored.iter().filter(|s| s.replication == 0) {
        let truth = s
            .estimand
            .truth(&first)
            .map(|v| first.truth.times.iter().copied().zip(v.iter().copied()).collect::<BTreeMap<i64, f64>>());
        let name = format!("plot_{}_{}_{hash}.csv", s.method.as_str(), s.estimand.as_str());
        out.add(name, emit_plotdata(std::slice::from_ref(&s.series), truth.as_ref()));
    }
    out.add("report.csv", report.to_csv());
    let mut json = report.to_json();
    json.push('\n');
    out.add("report.json", json);
    Ok(())
}
