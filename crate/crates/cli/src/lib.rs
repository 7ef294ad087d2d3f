//! Batch front end for dynfx: panel CSV ingestion, estimation and
//! forecasting runs, simulation and benchmarking, with a JSON manifest that
//! makes every run repeatable.

pub mod config;
pub mod error;
pub mod ingest;
pub mod plot;
pub mod run;

pub use config::{Command, MethodName, OutcomeTransform, OutputFormat, Overrides, RunConfig, WeightScheme};
pub use error::{CliError, Result};
pub use ingest::{ingest_panel, parse_panel, write_panel, IngestOptions};
pub use plot::emit_plotdata;
pub use run::{run, Manifest, RunOutput};
