//! Experiment harness: configuration, training runs, output files and the
//! verification battery behind the `kalmanopt` binary.

pub mod config;
pub mod output;
pub mod train;
pub mod verify;

pub use config::{DatasetSpec, OptimizerKind, Preset, RunConfig, Settings};
pub use output::{content_hash, metrics_csv, RecordKind, RunRecord};
pub use train::{cmd_diagnose, cmd_train, exit_code, run_training, Engine, RunFailure, RunOutcome};
pub use verify::{run_verify, CheckResult};
