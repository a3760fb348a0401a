//! Experiment configs, runners, rate fits and output files.

pub mod config;
pub mod experiments;
pub mod fit;
pub mod output;
pub mod selftest;

pub use config::{ExperimentConfig, ExperimentKind, ModelConfig, Options};
pub use experiments::{run, Cell, Outcome, Table};
pub use fit::{fit_rate, fit_series, FitOutcome, RateFit};
pub use selftest::{selftest, Check};
