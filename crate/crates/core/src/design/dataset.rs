use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Treatment indicator, constant per unit or varying over time.
#[derive(Debug, Clone, PartialEq)]
pub enum Treatment {
    /// `T_i`, length `d`.
    PerUnit(Vec<f64>),
    /// `T_{i,t}`, `n x d`.
    PerTime(DMatrix<f64>),
}

impl Treatment {
    pub fn at(&self, t: usize, i: usize) -> f64 {
        match self {
            Treatment::PerUnit(v) => v[i],
            Treatment::PerTime(m) => m[(t, i)],
        }
    }

    pub fn is_binary(&self) -> bool {
        let ok = |v: &f64| *v == 0.0 || *v == 1.0;
        match self {
            Treatment::PerUnit(v) => v.iter().all(ok),
            Treatment::PerTime(m) => m.iter().all(ok),
        }
    }

    /// Per-unit values when every unit keeps one treatment level; otherwise
    /// the index of the first unit whose treatment changes.
    pub fn per_unit(&self) -> std::result::Result<Vec<f64>, usize> {
        match self {
            Treatment::PerUnit(v) => Ok(v.clone()),
            Treatment::PerTime(m) => {
                let mut out = Vec::with_capacity(m.ncols());
                for i in 0..m.ncols() {
                    let first = m[(0, i)];
                    if m.column(i).iter().any(|v| *v != first) {
                        return Err(i);
                    }
                    out.push(first);
                }
                Ok(out)
            }
        }
    }

    /// `|T - 1|` for binary treatment.
    pub fn flipped(&self) -> Self {
        match self {
            Treatment::PerUnit(v) => Treatment::PerUnit(v.iter().map(|x| (x - 1.0).abs()).collect()),
            Treatment::PerTime(m) => Treatment::PerTime(m.map(|x| (x - 1.0).abs())),
        }
    }
}

/// A categorical per-unit covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFactor {
    /// Level labels; the first is the reference level without a dummy.
    pub levels: Vec<String>,
    /// Level index per unit.
    pub codes: Vec<usize>,
}

impl GroupFactor {
    /// Two-level factor from 0/1 codes with levels "0" and "1".
    pub fn binary(codes: &[u8]) -> Result<Self> {
        if codes.iter().any(|c| *c > 1) {
            return invalid("binary group codes must be 0 or 1");
        }
        Ok(GroupFactor { levels: vec!["0".into(), "1".into()], codes: codes.iter().map(|c| *c as usize).collect() })
    }

    /// Factor from labels; levels sort numerically when every label is a
    /// number and lexicographically otherwise.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().trim().to_string()).collect();
        if levels.iter().any(|s| s.is_empty()) {
            return invalid("group labels must not be empty");
        }
        let numeric: Option<Vec<f64>> = levels.iter().map(|s| s.parse::<f64>().ok()).collect();
        match numeric {
            Some(_) => levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap())),
            None => levels.sort(),
        }
        levels.dedup();
        let codes = labels
            .iter()
            .map(|s| levels.iter().position(|l| l == s.as_ref().trim()).unwrap())
            .collect();
        Ok(GroupFactor { levels, codes })
    }

    pub fn n_dummies(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    /// Dummy `k` (for level `k + 1`) of unit `i`.
    pub fn dummy(&self, i: usize, k: usize) -> f64 {
        if self.codes[i] == k + 1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

/// Outcomes of `d` units over `n` time points plus their covariates.
///
/// Missing outcomes and covariate values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub units: Vec<String>,
    pub times: Vec<i64>,
    /// `n x d`
    pub outcome: DMatrix<f64>,
    pub treatment: Treatment,
    pub x_pre: Option<Vec<f64>>,
    /// Contemporaneous covariates, each `n x d`.
    pub z: Vec<DMatrix<f64>>,
    pub g: Option<GroupFactor>,
    /// Positive per-unit observation weights dividing the noise variance.
    pub weights: Option<Vec<f64>>,
}

impl PanelDataset {
    /// Panel without covariates.
    pub fn new(units: Vec<String>, times: Vec<i64>, outcome: DMatrix<f64>, treatment: Treatment) -> Result<Self> {
        let ds = PanelDataset { units, times, outcome, treatment, x_pre: None, z: vec![], g: None, weights: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_x_pre(mut self, x_pre: Vec<f64>) -> Result<Self> {
        self.x_pre = Some(x_pre);
        self.validate()?;
        Ok(self)
    }

    pub fn with_z(mut self, z: DMatrix<f64>) -> Result<Self> {
        self.z.push(z);
        self.validate()?;
        Ok(self)
    }

    pub fn with_g(mut self, g: GroupFactor) -> Result<Self> {
        self.g = Some(g);
        self.validate()?;
        Ok(self)
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        self.weights = Some(w);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn d(&self) -> usize {
        self.units.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if d == 0 || n == 0 {
            return invalid("panel needs at least one unit and one time point");
        }
        if self.outcome.shape() != (n, d) {
            return invalid(format!("outcome is {:?}, expected {:?}", self.outcome.shape(), (n, d)));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("times must be strictly increasing");
        }
        if self.outcome.iter().any(|v| v.is_infinite()) {
            return invalid("outcome contains infinite values");
        }
        match &self.treatment {
            Treatment::PerUnit(v) if v.len() != d => return invalid("treatment needs one value per unit"),
            Treatment::PerTime(m) if m.shape() != (n, d) => return invalid("time-varying treatment must be n x d"),
            _ => {}
        }
        let bad_t = match &self.treatment {
            Treatment::PerUnit(v) => v.iter().any(|x| !(x.is_finite() && *x >= 0.0)),
            Treatment::PerTime(m) => m.iter().any(|x| !(x.is_finite() && *x >= 0.0)),
        };
        if bad_t {
            return invalid("treatment values must be finite and nonnegative");
        }
        if let Some(x) = &self.x_pre {
            if x.len() != d {
                return invalid("x_pre needs one value per unit");
            }
            if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                return invalid(format!("x_pre is missing for unit {}", self.units[i]));
            }
        }
        for (k, z) in self.z.iter().enumerate() {
            if z.shape() != (n, d) {
                return invalid(format!("covariate z{} is {:?}, expected {:?}", k + 1, z.shape(), (n, d)));
            }
        }
        if let Some(g) = &self.g {
            if g.codes.len() != d {
                return invalid("group factor needs one value per unit");
            }
            if g.codes.iter().any(|c| *c >= g.levels.len()) {
                return invalid("group code out of range");
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != d || w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return invalid("weights must be positive, one per unit");
            }
        }
        Ok(())
    }

    /// Rows `range` as a panel of their own (covariates and weights carried over).
    pub fn slice_times(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.n() || range.start >= range.end {
            return invalid(format!("time range {range:?} outside 0..{}", self.n()));
        }
        let rows = range.len();
        let cut = |m: &DMatrix<f64>| m.rows(range.start, rows).into_owned();
        let treatment = match &self.treatment {
            Treatment::PerUnit(v) => Treatment::PerUnit(v.clone()),
            Treatment::PerTime(m) => Treatment::PerTime(cut(m)),
        };
        Ok(PanelDataset {
            units: self.units.clone(),
            times: self.times[range.clone()].to_vec(),
            outcome: cut(&self.outcome),
            treatment,
            x_pre: self.x_pre.clone(),
            z: self.z.iter().map(cut).collect(),
            g: self.g.clone(),
            weights: self.weights.clone(),
        })
    }
}
