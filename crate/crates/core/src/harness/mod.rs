//! Configuration, experiment sweeps and result files.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind, RxMode};
pub use experiment::{run_experiment, DetectionRun, ExperimentResult, Point};
pub use output::{write_tables, Table};
