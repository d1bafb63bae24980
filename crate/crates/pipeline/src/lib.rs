//! Bounded-queue staged execution with latency and throughput accounting.
//!
//! Every stage runs on its own thread. Stages talk only through bounded
//! FIFO queues; a producer facing a full queue blocks instead of dropping
//! data, and each such stall is counted as an overflow event.

pub mod budget;
pub mod engine;
pub mod hif;
pub mod stats;

pub use budget::{processor_budget, LoopBudget};
pub use engine::{run_pipeline, Pacing, Packet, PipelineRun, StageFn, StageSpec, StageTag, DEFAULT_CAPACITY};
pub use stats::{latency_report, LatencyReport, PipelineStats, StageCounts};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("no results to summarize")]
    Empty,
    #[error(transparent)]
    Core(#[from] gridwatch_core::Error),
    #[error(transparent)]
    Nn(#[from] NnErrorText),
}

/// Neural-network errors carried as text so that the pipeline error stays
/// `Clone + PartialEq`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct NnErrorText(pub String);

impl From<gridwatch_nn::NnError> for PipelineError {
    fn from(e: gridwatch_nn::NnError) -> Self {
        PipelineError::Nn(NnErrorText(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
