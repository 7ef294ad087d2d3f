//! Linear-Gaussian state-space models and exact inference.

mod filter;
mod forecast;
mod model;
mod smoother;

pub use filter::{filter, log_likelihood, FilterResult, FilterStep};
pub(crate) use filter::{observed_indices, predict};
pub use forecast::{forecast, ForecastStep};
pub use model::{GaussianState, StateSpaceModel, TimeVarying, DIFFUSE_KAPPA};
pub use smoother::{smooth, SmootherResult};
