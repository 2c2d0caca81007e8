//! Config-driven experiments: moment-law validation, FedAvg runs and
//! parameter sweeps with CSV / JSON output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, FedPlan, MomentPlan, SweepAxis};
