//! Heterogeneous causal effects for panel time series via linear-Gaussian
//! state-space models.
//!
//! The pipeline is: describe a panel ([`design::PanelDataset`]) and a working
//! model ([`design::ModelFormula`]), assemble a [`ssm::StateSpaceModel`], fit
//! its variances by maximum likelihood ([`estimation::fit_mle`]), then draw
//! Monte Carlo effect samples from the smoothed or forecast states
//! ([`effects`]).

pub mod baselines;
pub mod design;
pub mod effects;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod rng;
pub mod robust;
pub mod ssm;
pub mod transfer;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
