use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use dynfx::design::{GroupFactor, ModelFormula, PanelDataset, Treatment};
use dynfx::rng::{stream, StreamRng};

use crate::assign::assign;
use crate::error::{Result, SimError};

const ROLE_BETA: u64 = 1;
const ROLE_MU: u64 = 2;
const ROLE_Z: u64 = 3;
const ROLE_XPRE: u64 = 4;
const ROLE_V: u64 = 5;
const ROLE_NU: u64 = 6;
const ROLE_UNIT: u64 = 7;
const ROLE_UNIT_MU: u64 = 8;
const ROLE_CATE: u64 = 9;

/// Constant AR coefficient of the observational part in model 3.
pub const MODEL3_AR: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Generator, 1 to 6.
    pub model: u8,
    pub d: usize,
    /// Treatment-period length.
    pub n: usize,
    /// Treatment assignment scheme, 1 to 3.
    pub assignment: u8,
    /// Future points generated after the treatment period.
    pub horizon: usize,
    /// Untreated points generated before the treatment period.
    pub pre_period: usize,
    pub replications: usize,
    pub seed: u64,
    /// Multiplies the standard deviations of all noise terms (outcome,
    /// state and the AR-part noise); `0.0` gives noise-free paths.
    pub noise_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model: 1,
            d: 20,
            n: 300,
            assignment: 1,
            horizon: 100,
            pre_period: 0,
            replications: 20,
            seed: 0,
            noise_scale: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.model) {
            return Err(SimError::Config(format!("model must be 1..6, got {}", self.model)));
        }
        if !(1..=3).contains(&self.assignment) {
            return Err(SimError::Config(format!("assignment must be 1..3, got {}", self.assignment)));
        }
        if self.d < 2 || self.d % 2 != 0 {
            return Err(SimError::Config(format!("d must be even and at least 2, got {}", self.d)));
        }
        if self.n < 2 {
            return Err(SimError::Config("n must be at least 2".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(SimError::Config("noise_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// The working model fitted to this generator's data.
    pub fn working_formula(&self) -> ModelFormula {
        let rhs = match self.model {
            1 | 3 | 4 => "z + x_pre*T + T:g",
            _ => "z + x_pre*T",
        };
        ModelFormula::parse(rhs).expect("built-in formula parses")
    }

    fn len(&self) -> usize {
        self.pre_period + self.n + self.horizon
    }
}

/// True potential outcomes and effects for every generated time point.
///
/// Index `k` of every series corresponds to `times[k]`; times run from
/// `1 - pre_period` to `n + horizon`, with the treatment starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrace {
    pub times: Vec<i64>,
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    /// Noise-free effect of each unit.
    pub unit_effect: DMatrix<f64>,
    pub sate: Vec<f64>,
    pub ate: Vec<f64>,
    pub mcate: [Vec<f64>; 2],
    pub mcate_diff: Vec<f64>,
    /// Effect at `(cate_x_pre, g = 0)`; only for the shared-effect models 1, 3, 4.
    pub cate: Option<Vec<f64>>,
    pub cate_x_pre: f64,
    /// Generating states per time point (model-specific columns).
    pub states: DMatrix<f64>,
}

impl TruthTrace {
    pub fn index_of(&self, time: i64) -> Option<usize> {
        let first = *self.times.first()?;
        let k = usize::try_from(time - first).ok()?;
        (k < self.times.len()).then_some(k)
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub config: SimConfig,
    pub units: Vec<String>,
    pub x_pre: Vec<f64>,
    pub g: Vec<u8>,
    pub treatment: Vec<f64>,
    /// `len x d` contemporaneous covariate.
    pub z: DMatrix<f64>,
    pub truth: TruthTrace,
}

impl SimData {
    fn observed(&self, k: usize, i: usize) -> f64 {
        let treated_now = self.truth.times[k] >= 1 && self.treatment[i] == 1.0;
        if treated_now {
            self.truth.x1[(k, i)]
        } else {
            self.truth.x0[(k, i)]
        }
    }

    fn dataset(&self, range: std::ops::Range<usize>, treatment: Treatment) -> PanelDataset {
        let rows = range.len();
        let outcome = DMatrix::from_fn(rows, self.units.len(), |r, i| self.observed(range.start + r, i));
        PanelDataset::new(self.units.clone(), self.truth.times[range.clone()].to_vec(), outcome, treatment)
            .and_then(|p| p.with_x_pre(self.x_pre.clone()))
            .and_then(|p| p.with_z(self.z.rows(range.start, rows).into_owned()))
            .and_then(|p| p.with_g(GroupFactor::binary(&self.g)?))
            .expect("generator output is a valid panel")
    }

    /// Treatment period `t = 1..n`.
    pub fn panel(&self) -> PanelDataset {
        let start = self.config.pre_period;
        self.dataset(start..start + self.config.n, Treatment::PerUnit(self.treatment.clone()))
    }

    /// Points after the treatment period, outcomes included for scoring.
    pub fn future(&self) -> Option<PanelDataset> {
        if self.config.horizon == 0 {
            return None;
        }
        let start = self.config.pre_period + self.config.n;
        Some(self.dataset(start..start + self.config.horizon, Treatment::PerUnit(self.treatment.clone())))
    }

    /// Pre-period followed by the treatment period, with a time-varying
    /// treatment indicator that is zero before `t = 1`.
    pub fn with_pre_period(&self) -> PanelDataset {
        let len = self.config.pre_period + self.config.n;
        let tr = DMatrix::from_fn(len, self.units.len(), |k, i| {
            if self.truth.times[k] >= 1 {
                self.treatment[i]
            } else {
                0.0
            }
        });
        self.dataset(0..len, Treatment::PerTime(tr))
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite standard deviation")
}

fn grid(rng: &mut StreamRng, lo_hundredths: i64, hi_hundredths: i64, scale: f64) -> f64 {
    rng.random_range(lo_hundredths..=hi_hundredths) as f64 / scale
}

/// Random-walk observational states starting from `(0.2, 0.6, 0.3)`.
fn beta_path(len: usize, sd: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = stream(seed, &[ROLE_BETA]);
    let w = normal(1.0);
    let mut b = [0.2, 0.6, 0.3];
    (0..len)
        .map(|_| {
            for v in b.iter_mut() {
                *v += sd * w.sample(&mut rng);
            }
            b
        })
        .collect()
}

/// Shared AR effect states from `(1, 0.5, 0.3)` with `diag(0.8, 0.9, 1)`;
/// entry `k` holds `mu_t` for `t = k + 1`.
fn mu_path(len: usize, sd: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = stream(seed, &[ROLE_MU]);
    let u = normal(1.0);
    let c = [0.8, 0.9, 1.0];
    let mut m = [1.0, 0.5, 0.3];
    (0..len)
        .map(|_| {
            for j in 0..3 {
                m[j] = c[j] * m[j] + sd * u.sample(&mut rng);
            }
            m
        })
        .collect()
}

/// Generates one replication. `replication` selects the seed substream so
/// replications are independent but individually reproducible.
pub fn generate(config: &SimConfig, replication: usize) -> Result<SimData> {
    config.validate()?;
    let seed = dynfx::rng::stream(config.seed, &[replication as u64]).random::<u64>();
    let (d, len, pre) = (config.d, config.len(), config.pre_period);
    let s = config.noise_scale;
    let times: Vec<i64> = (0..len).map(|k| k as i64 - pre as i64 + 1).collect();
    let g: Vec<u8> = (0..d).map(|i| u8::from(i >= d / 2)).collect();
    let x_pre: Vec<f64> = (0..d).map(|i| stream(seed, &[ROLE_XPRE, i as u64]).random::<f64>()).collect();

    let mut zrng0 = stream(seed, &[ROLE_Z, 0]);
    let mut zrng1 = stream(seed, &[ROLE_Z, 1]);
    let m1: f64 = zrng0.random_range(0.0..1.0);
    let m2: f64 = zrng1.random_range(-1.0..0.0);
    let zn = normal(0.1);
    let z_group: Vec<[f64; 2]> =
        (0..len).map(|_| [m1 + zn.sample(&mut zrng0), m2 + zn.sample(&mut zrng1)]).collect();
    let z = DMatrix::from_fn(len, d, |k, i| z_group[k][g[i] as usize]);

    let beta = beta_path(len, 0.01 * s, seed);
    let n_eff = config.n + config.horizon;
    let mu = mu_path(n_eff, 0.01 * s, seed);

    let mut x0 = DMatrix::zeros(len, d);
    let mut unit_effect = DMatrix::zeros(len, d);
    let mut extra_noise = DMatrix::zeros(len, d);
    let n_state_cols = match config.model {
        1 | 3 | 4 => 6,
        2 => 4,
        5 => 3 + d,
        _ => 3 + 2 * d,
    };
    let mut states = DMatrix::zeros(len, n_state_cols);
    for k in 0..len {
        for j in 0..3 {
            states[(k, j)] = beta[k][j];
        }
    }

    // model 2 effect factor
    let mut factor = vec![0.0; n_eff];
    if config.model == 2 {
        let mut rng = stream(seed, &[ROLE_MU]);
        let u = normal(0.01 * s);
        let mut m = 2.0;
        for f in factor.iter_mut() {
            m = 0.15 + 0.9 * m + u.sample(&mut rng);
            *f = m;
        }
    }

    for i in 0..d {
        let mut vrng = stream(seed, &[ROLE_V, i as u64]);
        let mut nurng = stream(seed, &[ROLE_NU, i as u64]);
        let mut unit_rng = stream(seed, &[ROLE_UNIT, i as u64]);
        let std = normal(1.0);
        let xp = x_pre[i];
        let sigma = if config.model == 4 { grid(&mut unit_rng, 90, 110, 1000.0) } else { 0.1 };
        let (b0, b1, b2) = if config.model == 4 {
            (grid(&mut unit_rng, 10, 30, 100.0), grid(&mut unit_rng, 50, 70, 100.0), grid(&mut unit_rng, 20, 40, 100.0))
        } else {
            (0.0, 0.0, 0.0)
        };
        let mut mu_rng = stream(seed, &[ROLE_UNIT_MU, i as u64]);
        let mut unit_mu = match config.model {
            5 => [grid(&mut mu_rng, 90, 110, 100.0), 0.0],
            6 => [grid(&mut mu_rng, 90, 110, 100.0), grid(&mut mu_rng, 40, 60, 100.0)],
            _ => [0.0, 0.0],
        };
        let mut ar_prev = xp;
        for k in 0..len {
            let [b0t, b1t, b2t] = beta[k];
            let v = s * sigma * std.sample(&mut vrng);
            let zt = z[(k, i)];
            let obs = match config.model {
                3 => {
                    let x = b0t + MODEL3_AR * ar_prev + b2t * zt + v;
                    ar_prev = x;
                    x
                }
                4 => b0 + b1 * xp * xp + b2 * zt + v,
                _ => b0t + b1t * xp + b2t * zt + v,
            };
            let nu = if matches!(config.model, 3 | 4) { s * 0.1 * std.sample(&mut nurng) } else { 0.0 };
            extra_noise[(k, i)] = nu;
            x0[(k, i)] = obs + nu;
            if k < pre {
                continue;
            }
            let te = k - pre;
            let effect = match config.model {
                1 | 3 | 4 => {
                    let m = mu[te];
                    m[0] + m[1] * xp + m[2] * g[i] as f64
                }
                2 => (factor[te] - 1.0) * (b0t + b1t * xp + b2t * zt),
                5 => {
                    unit_mu[0] = 1.002 * unit_mu[0] + s * 0.01 * std.sample(&mut mu_rng);
                    states[(k, 3 + i)] = unit_mu[0];
                    unit_mu[0] * xp.cos()
                }
                _ => {
                    unit_mu[0] *= 0.9;
                    states[(k, 3 + 2 * i)] = unit_mu[0];
                    states[(k, 4 + 2 * i)] = unit_mu[1];
                    unit_mu[0] + unit_mu[1] * xp * xp
                }
            };
            unit_effect[(k, i)] = effect;
        }
    }

    let mut x1 = x0.clone();
    for k in pre..len {
        let te = k - pre;
        match config.model {
            1 | 3 | 4 => {
                for j in 0..3 {
                    states[(k, 3 + j)] = mu[te][j];
                }
            }
            2 => states[(k, 3)] = factor[te],
            _ => {}
        }
        for i in 0..d {
            x1[(k, i)] = if config.model == 2 {
                factor[te] * x0[(k, i)]
            } else {
                x0[(k, i)] + unit_effect[(k, i)]
            };
        }
    }

    let cate_x_pre = stream(seed, &[ROLE_CATE]).random::<f64>();
    let mean_over = |k: usize, members: &[usize], m: &DMatrix<f64>| -> f64 {
        members.iter().map(|&i| m[(k, i)]).sum::<f64>() / members.len() as f64
    };
    let all: Vec<usize> = (0..d).collect();
    let groups: [Vec<usize>; 2] = [(0..d).filter(|&i| g[i] == 0).collect(), (0..d).filter(|&i| g[i] == 1).collect()];
    let diff = &x1 - &x0;
    let sate: Vec<f64> = (0..len).map(|k| mean_over(k, &all, &diff)).collect();
    let ate: Vec<f64> = (0..len).map(|k| mean_over(k, &all, &unit_effect)).collect();
    let mcate = [
        (0..len).map(|k| mean_over(k, &groups[0], &unit_effect)).collect::<Vec<_>>(),
        (0..len).map(|k| mean_over(k, &groups[1], &unit_effect)).collect::<Vec<_>>(),
    ];
    let mcate_diff = mcate[1].iter().zip(&mcate[0]).map(|(a, b)| a - b).collect();
    let cate = matches!(config.model, 1 | 3 | 4).then(|| {
        (0..len).map(|k| if k < pre { 0.0 } else { mu[k - pre][0] + mu[k - pre][1] * cate_x_pre }).collect()
    });

    let treatment = assign(config, seed)?;
    Ok(SimData {
        config: config.clone(),
        units: (0..d).map(|i| format!("unit{:02}", i + 1)).collect(),
        x_pre,
        g,
        treatment,
        z,
        truth: TruthTrace {
            times,
            x0,
            x1,
            unit_effect,
            sate,
            ate,
            mcate,
            mcate_diff,
            cate,
            cate_x_pre,
            states,
        },
    })
}
