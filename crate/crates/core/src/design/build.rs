use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::{PanelDataset, Treatment};
use super::formula::{ArCoefficients, ModelFormula, Term};
use crate::error::{invalid, Error, Result};
use crate::estimation::{FreeParam, ModelBuilder, ParameterSpec, Role};
use crate::ssm::{StateSpaceModel, TimeVarying};

/// How states map to design columns.
///
/// Shared layout: one state per observational term, then one per treatment
/// term. Unit-specific layout: `d` states per observational term (term-major,
/// unit-minor), then the shared treatment states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub unit_specific: bool,
    pub d: usize,
    pub obs_terms: Vec<Term>,
    pub treatment_terms: Vec<Term>,
}

impl StateLayout {
    pub fn new(dataset: &PanelDataset, formula: &ModelFormula) -> Result<Self> {
        let mut obs_terms = Vec::new();
        if formula.intercept {
            obs_terms.push(Term::Intercept);
        }
        if formula.x_pre {
            if dataset.x_pre.is_none() {
                return invalid("formula uses x_pre but the dataset has none");
            }
            obs_terms.push(Term::XPre);
        }
        if formula.z {
            if dataset.z.is_empty() {
                return invalid("formula uses z but the dataset has none");
            }
            obs_terms.extend((0..dataset.z.len()).map(Term::Z));
        }
        let mut treatment_terms = Vec::new();
        if formula.treatment {
            treatment_terms.push(Term::T);
        }
        if formula.treatment_x_pre {
            if dataset.x_pre.is_none() {
                return invalid("formula uses T:x_pre but the dataset has no x_pre");
            }
            treatment_terms.push(Term::TXPre);
        }
        if formula.treatment_g {
            let g = match &dataset.g {
                Some(g) if g.n_dummies() > 0 => g,
                Some(_) => return invalid("group factor has a single level"),
                None => return invalid("formula uses T:g but the dataset has no group factor"),
            };
            treatment_terms.extend((0..g.n_dummies()).map(Term::TG));
        }
        if obs_terms.is_empty() && treatment_terms.is_empty() {
            return invalid("formula has no terms");
        }
        Ok(StateLayout { unit_specific: formula.unit_specific, d: dataset.d(), obs_terms, treatment_terms })
    }

    pub fn n_obs_states(&self) -> usize {
        if self.unit_specific {
            self.d * self.obs_terms.len()
        } else {
            self.obs_terms.len()
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n_obs_states() + self.treatment_terms.len()
    }

    /// State index of a treatment term.
    pub fn treatment_index(&self, term: &Term) -> Option<usize> {
        self.treatment_terms.iter().position(|t| t == term).map(|k| self.n_obs_states() + k)
    }

    pub fn state_labels(&self, units: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.state_dim());
        for term in &self.obs_terms {
            if self.unit_specific {
                out.extend(units.iter().map(|u| format!("{}@{u}", term.label())));
            } else {
                out.push(term.label());
            }
        }
        out.extend(self.treatment_terms.iter().map(Term::label));
        out
    }
}

fn covariate(dataset: &PanelDataset, term: &Term, t: usize, i: usize) -> Result<f64> {
    let v = match term {
        Term::Intercept => 1.0,
        Term::XPre => dataset.x_pre.as_ref().expect("layout checked x_pre")[i],
        Term::Z(k) => {
            let v = dataset.z[*k][(t, i)];
            if v.is_nan() {
                return invalid(format!(
                    "covariate z{} is missing for unit {} at time {}",
                    k + 1,
                    dataset.units[i],
                    dataset.times[t]
                ));
            }
            v
        }
        Term::T | Term::TXPre | Term::TG(_) => unreachable!("treatment terms are scaled separately"),
    };
    Ok(v)
}

fn treatment_value(dataset: &PanelDataset, term: &Term, i: usize, dose: f64) -> f64 {
    match term {
        Term::T => dose,
        Term::TXPre => dose * dataset.x_pre.as_ref().expect("layout checked x_pre")[i],
        Term::TG(k) => dose * dataset.g.as_ref().expect("layout checked g").dummy(i, *k),
        _ => unreachable!("observational terms are not scaled by treatment"),
    }
}

fn design_with(dataset: &PanelDataset, layout: &StateLayout, t: usize, treatment: &Treatment) -> Result<DMatrix<f64>> {
    if t >= dataset.n() {
        return invalid(format!("time index {t} outside the panel of length {}", dataset.n()));
    }
    let d = dataset.d();
    let p = layout.obs_terms.len();
    let base = layout.n_obs_states();
    let mut f = DMatrix::zeros(d, layout.state_dim());
    for i in 0..d {
        for (k, term) in layout.obs_terms.iter().enumerate() {
            let col = if layout.unit_specific { k * d + i } else { k };
            f[(i, col)] = covariate(dataset, term, t, i)?;
        }
        let dose = treatment.at(t, i);
        for (k, term) in layout.treatment_terms.iter().enumerate() {
            f[(i, base + k)] = treatment_value(dataset, term, i, dose);
        }
    }
    debug_assert!(p == 0 || base % p == 0);
    Ok(f)
}

/// Factual design `F_t` at zero-based time index `t`. Dispatches on
/// `formula.unit_specific`.
pub fn build_design(dataset: &PanelDataset, formula: &ModelFormula, t: usize) -> Result<DMatrix<f64>> {
    let layout = StateLayout::new(dataset, formula)?;
    design_with(dataset, &layout, t, &dataset.treatment)
}

/// Design with `T` replaced by `|T - 1|`; rejects non-binary treatment.
pub fn build_counterfactual_design(dataset: &PanelDataset, formula: &ModelFormula, t: usize) -> Result<DMatrix<f64>> {
    if !dataset.treatment.is_binary() {
        return invalid("counterfactual design is undefined for non-binary dose treatment");
    }
    let layout = StateLayout::new(dataset, formula)?;
    design_with(dataset, &layout, t, &dataset.treatment.flipped())
}

/// Unit-specific design regardless of `formula.unit_specific`.
pub fn build_unit_specific_design(dataset: &PanelDataset, formula: &ModelFormula, t: usize) -> Result<DMatrix<f64>> {
    let f = ModelFormula { unit_specific: true, ..formula.clone() };
    build_design(dataset, &f, t)
}

/// Why a panel cannot identify the requested model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    NoControlUnits,
    NoTreatedUnits,
    TimeVaryingTreatment { unit: String },
    NoPrePeriod,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoControlUnits => write!(f, "no control units"),
            Diagnostic::NoTreatedUnits => write!(f, "no treated units"),
            Diagnostic::TimeVaryingTreatment { unit } => {
                write!(f, "treatment of unit {unit} varies over time, which the shared layout does not allow")
            }
            Diagnostic::NoPrePeriod => write!(f, "no pre-period with every unit untreated"),
        }
    }
}

pub fn validate_identifiability(dataset: &PanelDataset, formula: &ModelFormula) -> std::result::Result<(), Diagnostic> {
    if !formula.has_treatment_terms() {
        return Ok(());
    }
    if formula.unit_specific {
        let pre = (0..dataset.n()).any(|t| (0..dataset.d()).all(|i| dataset.treatment.at(t, i) == 0.0));
        return if pre { Ok(()) } else { Err(Diagnostic::NoPrePeriod) };
    }
    let per_unit = dataset
        .treatment
        .per_unit()
        .map_err(|i| Diagnostic::TimeVaryingTreatment { unit: dataset.units[i].clone() })?;
    if !per_unit.iter().any(|v| *v == 0.0) {
        return Err(Diagnostic::NoControlUnits);
    }
    if !per_unit.iter().any(|v| *v > 0.0) {
        return Err(Diagnostic::NoTreatedUnits);
    }
    Ok(())
}

/// Overrides for the data-driven starting values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamDefaults {
    /// Defaults to the pooled per-time OLS residual variance.
    pub obs_var: Option<f64>,
    /// Defaults to `0.01 * obs_var`.
    pub state_var: Option<f64>,
}

/// Everything needed to fit and query the working model of one panel.
#[derive(Debug, Clone)]
pub struct AssembledModel {
    pub formula: ModelFormula,
    pub layout: StateLayout,
    pub designs: Arc<[DMatrix<f64>]>,
    /// `None` when the treatment is a non-binary dose.
    pub cf_designs: Option<Arc<[DMatrix<f64>]>>,
    pub spec: ParameterSpec,
    /// The model at the initial parameter values.
    pub model: StateSpaceModel,
    pub observations: DMatrix<f64>,
}

impl AssembledModel {
    pub fn model_at(&self, psi: &[f64]) -> Result<StateSpaceModel> {
        self.spec.build(psi)
    }

    /// Factual and counterfactual designs for time points after the fitted
    /// panel, taken from `future` (same units, covariates for the new times).
    pub fn future_designs(&self, future: &PanelDataset) -> Result<(Vec<DMatrix<f64>>, Option<Vec<DMatrix<f64>>>)> {
        if future.d() != self.layout.d {
            return invalid("future panel has a different number of units");
        }
        let f = (0..future.n())
            .map(|t| design_with(future, &self.layout, t, &future.treatment))
            .collect::<Result<Vec<_>>>()?;
        let cf = if future.treatment.is_binary() {
            let flipped = future.treatment.flipped();
            Some((0..future.n()).map(|t| design_with(future, &self.layout, t, &flipped)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok((f, cf))
    }
}

/// Shared-coefficient regression of each time point's observed outcomes on
/// the factual covariates, pooled: `sum RSS / sum (n_obs - p)`.
fn pooled_residual_variance(dataset: &PanelDataset, layout: &StateLayout) -> Option<f64> {
    let shared = StateLayout { unit_specific: false, ..layout.clone() };
    let (mut rss, mut dof) = (0.0, 0usize);
    for t in 0..dataset.n() {
        let Ok(f) = design_with(dataset, &shared, t, &dataset.treatment) else {
            continue;
        };
        let obs: Vec<usize> = (0..dataset.d()).filter(|&i| !dataset.outcome[(t, i)].is_nan()).collect();
        let p = f.ncols();
        if obs.len() <= p {
            continue;
        }
        let fo = crate::linalg::select_rows(&f, &obs);
        let y = DVector::from_fn(obs.len(), |k, _| dataset.outcome[(t, obs[k])]);
        let svd = fo.clone().svd(true, true);
        if svd.rank(1e-10 * svd.singular_values.max().max(1e-300)) < p {
            continue;
        }
        let Ok(beta) = svd.solve(&y, 1e-12) else {
            continue;
        };
        rss += (&y - &fo * beta).norm_squared();
        dof += obs.len() - p;
    }
    (dof > 0 && rss > 0.0).then(|| rss / dof as f64)
}

fn observed_variance(dataset: &PanelDataset) -> f64 {
    let vals: Vec<f64> = dataset.outcome.iter().copied().filter(|v| !v.is_nan()).collect();
    if vals.len() < 2 {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

/// Builds designs, the parameter spec and the initial model.
///
/// Free parameters, in order: observation variance(s) `sigma2` (one per
/// unit in the unit-specific layout), state variances `w[..]` (one per
/// state, or `w[beta]` for the whole observational block when tied), AR
/// constants `c[..]` when estimated, then drift terms `alpha[..]` /
/// `delta[..]` when `trend_offsets` is set.
pub fn assemble_model(dataset: &PanelDataset, formula: &ModelFormula, defaults: &ParamDefaults) -> Result<AssembledModel> {
    dataset.validate()?;
    validate_identifiability(dataset, formula).map_err(|d| Error::Identifiability(d.to_string()))?;
    let layout = StateLayout::new(dataset, formula)?;
    let (n, d, m) = (dataset.n(), dataset.d(), layout.state_dim());
    let n_beta = layout.n_obs_states();
    let labels = layout.state_labels(&dataset.units);

    let designs: Arc<[DMatrix<f64>]> =
        (0..n).map(|t| design_with(dataset, &layout, t, &dataset.treatment)).collect::<Result<Vec<_>>>()?.into();
    let cf_designs: Option<Arc<[DMatrix<f64>]>> = if dataset.treatment.is_binary() {
        let flipped = dataset.treatment.flipped();
        Some((0..n).map(|t| design_with(dataset, &layout, t, &flipped)).collect::<Result<Vec<_>>>()?.into())
    } else {
        None
    };

    let obs_var = match defaults.obs_var {
        Some(v) => v,
        None => pooled_residual_variance(dataset, &layout).unwrap_or_else(|| observed_variance(dataset)),
    };
    let state_var = defaults.state_var.unwrap_or(0.01 * obs_var);

    let mut params = Vec::new();
    let n_obs_params = if layout.unit_specific { d } else { 1 };
    if layout.unit_specific {
        for u in &dataset.units {
            params.push(FreeParam::variance(format!("sigma2[{u}]"), Role::ObsVar, obs_var));
        }
    } else {
        params.push(FreeParam::variance("sigma2", Role::ObsVar, obs_var));
    }
    // maps each state to its variance parameter
    let mut w_index = Vec::with_capacity(m);
    if formula.tie_beta_variances && n_beta > 0 {
        params.push(FreeParam::variance("w[beta]", Role::StateVar, state_var));
        w_index.extend(std::iter::repeat_n(params.len() - 1, n_beta));
    } else {
        for label in &labels[..n_beta] {
            params.push(FreeParam::variance(format!("w[{label}]"), Role::StateVar, state_var));
            w_index.push(params.len() - 1);
        }
    }
    for label in &labels[n_beta..] {
        params.push(FreeParam::variance(format!("w[{label}]"), Role::StateVar, state_var));
        w_index.push(params.len() - 1);
    }
    let ar_start = params.len();
    let fixed_c = match formula.ar {
        ArCoefficients::Estimate(c0) => {
            for label in &labels[n_beta..] {
                params.push(FreeParam::ar(format!("c[{label}]"), c0));
            }
            None
        }
        ArCoefficients::Fixed(c) => Some(c),
    };
    let offset_start = params.len();
    if formula.trend_offsets {
        for label in &labels[..n_beta] {
            params.push(FreeParam::offset(format!("alpha[{label}]"), 0.0));
        }
        for label in &labels[n_beta..] {
            params.push(FreeParam::offset(format!("delta[{label}]"), 0.0));
        }
    }

    let weights = dataset.weights.clone().map(DVector::from_vec);
    let trend = formula.trend_offsets;
    let builder_designs = designs.clone();
    let builder: ModelBuilder = Arc::new(move |psi: &[f64]| {
        let v = if n_obs_params == 1 {
            DMatrix::from_diagonal_element(d, d, psi[0])
        } else {
            DMatrix::from_diagonal(&DVector::from_column_slice(&psi[..d]))
        };
        let w = DMatrix::from_diagonal(&DVector::from_fn(m, |j, _| psi[w_index[j]]));
        let g = DMatrix::from_diagonal(&DVector::from_fn(m, |j, _| {
            if j < n_beta {
                1.0
            } else {
                fixed_c.unwrap_or_else(|| psi[ar_start + j - n_beta])
            }
        }));
        let mut model =
            StateSpaceModel::new(n, TimeVarying::Varying(builder_designs.clone()), TimeVarying::Constant(g), v, w)?;
        if trend {
            model = model.with_state_offset(DVector::from_column_slice(&psi[offset_start..offset_start + m]))?;
        }
        if let Some(wt) = &weights {
            model = model.with_obs_weights(wt.clone())?;
        }
        Ok(model)
    });
    let spec = ParameterSpec::new(params, builder)?;
    let model = spec.build(&spec.initial())?;
    Ok(AssembledModel {
        formula: formula.clone(),
        layout,
        designs,
        cf_designs,
        spec,
        model,
        observations: dataset.outcome.clone(),
    })
}
