//! Run configuration: a JSON file whose fields can all be overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dynfx_sim::SimConfig;

use crate::error::{validation, CliError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Estimate,
    Forecast,
    Simulate,
    Benchmark,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[default]
    CausalTransfer,
    BayesianImputation,
    CausalImpact,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::CausalTransfer => "causal-transfer",
            MethodName::BayesianImputation => "bayesian-imputation",
            MethodName::CausalImpact => "causal-impact",
        }
    }
}

/// Outcome transform applied right after ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeTransform {
    #[default]
    None,
    Sqrt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    None,
    /// Unit weight `1 / sqrt(x_pre)`.
    InvSqrtXpre,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Panel CSV (estimate, forecast).
    pub input: Option<PathBuf>,
    /// Panel CSV with the covariates and treatment of the forecast points.
    pub future_input: Option<PathBuf>,
    /// Right-hand side such as `"z + x_pre*T + T:g"`.
    pub formula: String,
    /// Per-unit observational coefficients.
    pub unit_specific: bool,
    pub method: MethodName,
    /// `SATE`, `ATE`, `CATE(x_pre=<v>,g=<label>)`, `MCATE(g=<label>)` and
    /// `MCATE_diff`; for benchmarks `SATE`, `ATE`, `CATE`, `MCATE_g0`,
    /// `MCATE_g1`, `MCATE_diff`.
    pub estimands: Vec<String>,
    /// Monte Carlo draws per time point.
    pub draws: usize,
    pub level: f64,
    /// Forecast points (forecast only).
    pub horizon: usize,
    pub seed: u64,
    /// Likelihood optimizer starts.
    pub n_starts: usize,
    pub robust: bool,
    pub transform: OutcomeTransform,
    pub weights: WeightScheme,
    /// Leading untreated time points. The aggregate baseline fits on them;
    /// the other methods drop them.
    pub pre_period: Option<usize>,
    /// Derive `x_pre` as the mean `y` over this closed window of `t`.
    pub x_pre_window: Option<(i64, i64)>,
    pub format: OutputFormat,
    /// Also write long-format plot data.
    pub plotdata: bool,
    /// Generator settings (simulate, benchmark).
    pub sim: SimConfig,
    /// Benchmark methods: `ct`, `bi`, `ci`.
    pub methods: Vec<String>,
    /// Output directory. Not recorded in the manifest, so a rerun can
    /// target a fresh directory and still produce identical files.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Estimate,
            input: None,
            future_input: None,
            formula: "T".into(),
            unit_specific: false,
            method: MethodName::CausalTransfer,
            estimands: vec!["SATE".into()],
            draws: dynfx::effects::DEFAULT_DRAWS,
            level: 0.95,
            horizon: 0,
            seed: 0,
            n_starts: 5,
            robust: false,
            transform: OutcomeTransform::None,
            weights: WeightScheme::None,
            pre_period: None,
            x_pre_window: None,
            format: OutputFormat::Csv,
            plotdata: false,
            sim: SimConfig::default(),
            methods: vec!["ct".into()],
            output: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too; its recorded
    /// config is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("config_hash") => {
                map.remove("config").unwrap_or(serde_json::Value::Null)
            }
            v => v,
        };
        serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return validation(format!("level {} is outside (0, 1)", self.level));
        }
        if self.draws == 0 {
            return validation("draws must be at least 1");
        }
        if self.n_starts == 0 {
            return validation("n_starts must be at least 1");
        }
        if self.output.is_none() {
            return validation("no output directory given");
        }
        match self.command {
            Command::Estimate | Command::Forecast => {
                if self.input.is_none() {
                    return validation("no input panel given");
                }
                if self.estimands.is_empty() {
                    return validation("no estimands requested");
                }
            }
            Command::Simulate | Command::Benchmark => self.sim.validate()?,
        }
        if self.command == Command::Forecast {
            if self.horizon == 0 {
                return validation("forecast horizon must be at least 1");
            }
            if self.method != MethodName::CausalTransfer {
                return validation(format!("{} cannot forecast; use causal-transfer", self.method.as_str()));
            }
        }
        if self.robust && self.method != MethodName::CausalTransfer {
            return validation("robust filtering applies to causal-transfer only");
        }
        Ok(())
    }

    /// SHA-256 of the serialized config (without the output directory).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn parse_window(s: &str) -> std::result::Result<(i64, i64), String> {
    let (a, b) = s.split_once(':').ok_or("expected FROM:TO")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

/// Command-line flags; every one overrides the matching config field.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file or run manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub future_input: Option<PathBuf>,
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long)]
    pub unit_specific: Option<bool>,
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    /// Repeatable.
    #[arg(long = "estimand")]
    pub estimands: Vec<String>,
    #[arg(long, short = 'B')]
    pub draws: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Forecast points; for simulate and benchmark, the generator horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Fit and Monte Carlo seed; for simulate and benchmark, the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub robust: Option<bool>,
    #[arg(long, value_enum)]
    pub transform: Option<OutcomeTransform>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightScheme>,
    /// Leading untreated time points; for simulate and benchmark, generated
    /// pre-period points.
    #[arg(long)]
    pub pre_period: Option<usize>,
    /// `FROM:TO`, inclusive.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    pub x_pre_window: Option<(i64, i64)>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub plotdata: Option<bool>,
    /// Generator model, 1 to 6.
    #[arg(long)]
    pub model: Option<u8>,
    /// Number of units.
    #[arg(long)]
    pub units: Option<usize>,
    /// Treatment-period length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub assignment: Option<u8>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Benchmark method, repeatable: ct, bi, ci.
    #[arg(long = "bench-method")]
    pub methods: Vec<String>,
}

impl Overrides {
    /// Starts from `--config` (or the defaults) and applies every given flag.
    pub fn resolve(&self, command: Command) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        c.command = command;
        let generator = matches!(command, Command::Simulate | Command::Benchmark);
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = &self.$field {
                    $target = v.clone();
                }
            };
        }
        if let Some(v) = &self.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = &self.future_input {
            c.future_input = Some(v.clone());
        }
        if let Some(v) = &self.out {
            c.output = Some(v.clone());
        }
        set!(formula => c.formula);
        set!(unit_specific => c.unit_specific);
        set!(method => c.method);
        if !self.estimands.is_empty() {
            c.estimands = self.estimands.clone();
        }
        set!(draws => c.draws);
        set!(level => c.level);
        set!(n_starts => c.n_starts);
        set!(robust => c.robust);
        set!(transform => c.transform);
        set!(weights => c.weights);
        if let Some(v) = self.x_pre_window {
            c.x_pre_window = Some(v);
        }
        set!(format => c.format);
        set!(plotdata => c.plotdata);
        set!(model => c.sim.model);
        set!(units => c.sim.d);
        set!(n => c.sim.n);
        set!(assignment => c.sim.assignment);
        set!(replications => c.sim.replications);
        set!(noise_scale => c.sim.noise_scale);
        if !self.methods.is_empty() {
            c.methods = self.methods.clone();
        }
        if generator {
            set!(horizon => c.sim.horizon);
            set!(seed => c.sim.seed);
            set!(pre_period => c.sim.pre_period);
        } else {
            set!(horizon => c.horizon);
            set!(seed => c.seed);
            if let Some(v) = self.pre_period {
                c.pre_period = Some(v);
            }
        }
        Ok(c)
    }
}
