//! Config-driven experiments: TOML configs, concrete-strength data and the
//! pipelines that write CSV/JSON artifact bundles.

pub mod concrete;
pub mod config;
pub mod run;

pub use concrete::{bootstrap_noise, load_concrete_csv, ConcreteRecord};
pub use config::{DataSource, ExperimentConfig, ExperimentKind};
pub use run::{concrete_pipeline, run, solve_pipeline, RunOutcome};
