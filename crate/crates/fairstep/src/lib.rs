//! File formats, the experiment driver and plotting for `fairstep-core`.

pub mod config;
pub mod formats;
pub mod harness;
pub mod plot;
pub mod verify;

pub use config::{ExperimentConfig, Method};
pub use harness::{run_experiment, MetricsRow};
