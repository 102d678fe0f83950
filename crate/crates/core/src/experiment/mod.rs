//! Experiment runner: JSON configs in, CSV rows and a JSON summary out.

pub mod config;
pub mod record;
pub mod runs;
pub mod svg;

pub use config::{Budgets, ExperimentConfig, ExperimentKind, RSpec, TvPolicy};
pub use record::{write_csv, Frequency, RunRecord, Slope, Summary, CSV_HEADER};
pub use runs::{run, RunOutput, Series};
