//! Panel datasets, working-model formulas and their state-space designs.

mod build;
mod dataset;
mod formula;

pub use build::{
    assemble_model, build_counterfactual_design, build_design, build_unit_specific_design, validate_identifiability,
    AssembledModel, Diagnostic, ParamDefaults, StateLayout,
};
pub use dataset::{GroupFactor, PanelDataset, Treatment};
pub use formula::{ArCoefficients, ModelFormula, Term};
