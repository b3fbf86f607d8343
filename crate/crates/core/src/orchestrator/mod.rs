//! Repair-run driver: detect MUPs, plan, generate, gate, persist.
//!
//! A run lives in its own directory. Every step appends to `events.jsonl`, then
//! rewrites the checksummed `state.json` snapshot atomically, so a run can be
//! resumed after a crash or a backend outage without repeating billed work.

mod config;
mod driver;
pub mod experiments;
mod report;
mod state;

use thiserror::Error;

use crate::distribution_test::DistributionError;
use crate::generator_client::GeneratorError;
use crate::guide_selection::GuideError;
use crate::patterns::PatternError;
use crate::quality_test::QualityError;
use crate::selection::SelectionError;

pub use config::{
    Backend, CalibrationCounts, DisparityInputs, EvaluatorMode, GroupMetric, KernelKind,
    RewardMode, RunConfig,
};
pub use driver::{PendingEvaluation, RunDriver, StepOutcome};
pub use report::{build_report, disparity, CoverageLine, DisparityLine, GateRate, RunReport};
pub use state::{
    fingerprint, sha256_hex, CandidateRecord, CombinationProgress, DatasetRef, GateSummary,
    Outcome, Phase, Round, RunDir, RunState, ACCEPTED_FILE, CONFIG_FILE, DATASET_DIR, EVENTS_FILE,
    MODEL_FILE, PAYLOAD_DIR, REPORT_FILE, STATE_FILE,
};

#[derive(Debug, Error, PartialEq)]
pub enum OrchestratorError {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Guide(#[from] GuideError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt run state: {0}")]
    CorruptState(String),
    #[error("no run found at {0}")]
    NotFound(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no candidate `{0}` is awaiting evaluation")]
    NotAwaiting(String),
    #[error("overall metric must be positive")]
    ZeroOverallMetric,
}
