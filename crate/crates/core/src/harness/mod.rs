//! Slot loop, baselines, metrics and CSV output.

pub mod env;
pub mod experiment;
pub mod metrics;
pub mod policy;

use thiserror::Error;

pub use env::{random_game, World};
pub use experiment::{run_experiment, run_many, ExperimentOutput, RunOptions};
pub use metrics::{emit_csv, episode_aggregate, read_csv, write_csv, PolicyKind, SlotMetrics};
pub use policy::{AgentMode, PolicyRunner, SlotReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
    #[error(transparent)]
    Net(#[from] crate::scaa::NetError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write {path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("the proposed policy needs an agent")]
    MissingAgent,
}
