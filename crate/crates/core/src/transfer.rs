//! End-to-end causal transfer: assemble the working model, fit it by
//! maximum likelihood, smooth, and read off effects.

use nalgebra::DMatrix;

use crate::design::{assemble_model, AssembledModel, ModelFormula, PanelDataset, ParamDefaults};
use crate::effects::{
    future_population_effects, future_sample_effects, population_effects, sample_effects, EffectRequest, EffectSeries,
};
use crate::error::{invalid, Result};
use crate::estimation::{fit_mle_with, FitOptions, FitResult};
use crate::robust::{robust_filter, RobustConfig};
use crate::ssm::{filter, forecast, smooth, FilterResult, ForecastStep, SmootherResult, StateSpaceModel};

#[derive(Debug, Clone, Default)]
pub struct TransferOptions {
    pub fit: FitOptions,
    pub defaults: ParamDefaults,
    /// Filter with a robust loss instead of the Kalman update. Parameters
    /// are still fitted on the Gaussian likelihood.
    pub robust: Option<RobustConfig>,
}

#[derive(Debug, Clone)]
pub struct CausalTransfer {
    pub dataset: PanelDataset,
    pub assembled: AssembledModel,
    pub fit: FitResult,
    pub model: StateSpaceModel,
    pub filtered: FilterResult,
    pub smoothed: SmootherResult,
}

impl CausalTransfer {
    pub fn fit(dataset: &PanelDataset, formula: &ModelFormula, opts: &TransferOptions) -> Result<Self> {
        let assembled = assemble_model(dataset, formula, &opts.defaults)?;
        let fit = fit_mle_with(&assembled.spec, &assembled.observations, &opts.fit)?;
        Self::finish(dataset, assembled, fit, opts.robust.as_ref())
    }

    /// Skips estimation and uses the natural-scale parameters `psi`.
    pub fn with_params(
        dataset: &PanelDataset,
        formula: &ModelFormula,
        psi: &[f64],
        robust: Option<&RobustConfig>,
    ) -> Result<Self> {
        let assembled = assemble_model(dataset, formula, &ParamDefaults::default())?;
        if psi.len() != assembled.spec.params().len() {
            return invalid(format!("expected {} parameters, got {}", assembled.spec.params().len(), psi.len()));
        }
        let loglik = assembled.spec.loglik(psi, &assembled.observations)?;
        let fit = FitResult {
            names: assembled.spec.names(),
            psi_hat: psi.to_vec(),
            loglik,
            starts: vec![],
            best_start_index: 0,
        };
        Self::finish(dataset, assembled, fit, robust)
    }

    fn finish(
        dataset: &PanelDataset,
        assembled: AssembledModel,
        fit: FitResult,
        robust: Option<&RobustConfig>,
    ) -> Result<Self> {
        let model = assembled.model_at(&fit.psi_hat)?;
        let filtered = match robust {
            Some(cfg) => robust_filter(&model, &assembled.observations, cfg)?.filter,
            None => filter(&model, &assembled.observations)?,
        };
        let smoothed = smooth(&model, &filtered)?;
        Ok(CausalTransfer { dataset: dataset.clone(), assembled, fit, model, filtered, smoothed })
    }

    fn cf_designs(&self) -> Result<&[DMatrix<f64>]> {
        match &self.assembled.cf_designs {
            Some(cf) => Ok(cf),
            None => invalid("counterfactual designs need a binary treatment"),
        }
    }

    /// Effects over the fitted time points.
    pub fn past_effects(&self, request: &EffectRequest) -> Result<EffectSeries> {
        if request.estimand.is_sample() {
            sample_effects(&self.model, &self.smoothed, &self.dataset, self.cf_designs()?, request)
        } else {
            population_effects(&self.smoothed, &self.assembled.layout, &self.dataset, request)
        }
    }

    /// Forecast over the time points of `future`, whose covariates and
    /// treatment define the future designs.
    pub fn forecast(&self, future: &PanelDataset) -> Result<Vec<ForecastStep>> {
        let last = self.filtered.last_state().expect("fitted panel is nonempty");
        let (designs, cf) = self.assembled.future_designs(future)?;
        forecast(&self.model, &last, future.n(), &designs, cf.as_deref())
    }

    pub fn future_effects(&self, future: &PanelDataset, request: &EffectRequest) -> Result<EffectSeries> {
        let steps = self.forecast(future)?;
        if request.estimand.is_sample() {
            future_sample_effects(&steps, future, request)
        } else {
            future_population_effects(&steps, &self.assembled.layout, &self.dataset, &future.times, request)
        }
    }
}
