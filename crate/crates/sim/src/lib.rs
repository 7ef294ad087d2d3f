//! Synthetic panels with known treatment effects and a benchmark harness
//! that scores effect estimators against them.
//!
//! [`generate`] draws one replication of one of six generators, [`assign`]
//! picks treated units within the two covariate groups, [`score`] compares
//! an [`dynfx::effects::EffectSeries`] with the truth and
//! [`bench::run_benchmark`] runs the whole loop over replications.

pub mod assign;
pub mod bench;
pub mod error;
pub mod generate;
pub mod score;

pub use assign::{assign, stratum_counts};
pub use error::{Result, SimError};
pub use generate::{generate, SimConfig, SimData, TruthTrace};
pub use score::{score, Score};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
