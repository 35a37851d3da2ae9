//! Config-driven runs over the `arn-core` pipeline: synthetic data
//! generation, training, checkpoint evaluation and method comparisons.

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_eval, cmd_synth, cmd_train, BenchReport, BenchRow, ClassTable, TrainOutcome};
pub use config::{BenchConfig, DatasetConfig, ModelConfig, RunConfig, SplitConfig};
