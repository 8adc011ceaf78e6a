//! Pipeline orchestration: demonstration collection, pretraining sweeps,
//! fine-tuning, evaluation and reporting.

mod ops;
mod pipeline;
mod report;
pub mod stats;
pub mod svg;

use thiserror::Error;

use crate::agent::AgentError;
use crate::bc::BcError;
use crate::cells::CellError;
use crate::env::EnvError;
use crate::persist::PersistError;

pub use ops::{
    collect_demos, evaluate_policy, finetune, CollectSummary, EvalResult, FinetuneLog, LapRow,
};
pub use pipeline::{
    cmd_collect, cmd_evaluate, cmd_finetune, cmd_pretrain, run_pipeline, CellFilter, CellId,
    CellRecord, EvalRow, ExperimentPlan, Manifest, Phase, PhaseOutcome, PhaseRecord, PhaseStatus,
    RunDir,
};
pub use report::{cmd_report, shows_recovery, LapSummaryRow, ReportData, SummaryRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("expert failed in episode {episode} at lap {lap}: {reason}")]
    Expert {
        episode: usize,
        lap: usize,
        reason: String,
    },
    #[error("learning fault at step {step}: {reason}")]
    Learning {
        step: usize,
        reason: String,
        partial: Box<FinetuneLog>,
    },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Bc(#[from] BcError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 learning fault, 4 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Env(EnvError::Config(_))
            | HarnessError::Persist(PersistError::Config(_)) => 2,
            HarnessError::Learning { .. } | HarnessError::Agent(_) | HarnessError::Bc(_) => 3,
            HarnessError::MissingArtifact(_) => 4,
            HarnessError::Io(e) | HarnessError::Persist(PersistError::Io(e))
                if e.kind() == std::io::ErrorKind::NotFound =>
            {
                4
            }
            _ => 1,
        }
    }
}
