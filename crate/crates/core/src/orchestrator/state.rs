use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OrchestratorError, RunConfig};
use crate::distribution_test::DistributionVerdict;
use crate::generator_client::CostLedger;
use crate::guide_selection::{BanditState, Guide};
use crate::patterns::{write_tuples, MupSet, Pattern, TupleRecord};
use crate::quality_test::QualityVerdict;
use crate::selection::{AugmentationPlan, GapTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Generating,
    AwaitingEvaluations,
    Done,
    Exhausted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Exhausted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    DistributionRejected,
    QualityRejected,
    BackendError,
    AwaitingEvaluation,
}

/// One generated candidate and its verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub sequence: u64,
    pub request_id: String,
    pub round: usize,
    pub target: Pattern,
    pub guide: Guide,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realism: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityVerdict>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationProgress {
    pub planned: u64,
    pub accepted: u64,
    /// Attempts since the last acceptance for this combination.
    pub attempts: u32,
    pub total_attempts: u64,
    pub exhausted: bool,
}

impl CombinationProgress {
    pub fn open(&self) -> bool {
        !self.exhausted && self.accepted < self.planned
    }
}

/// One pass of detect, plan, and generate at a single MUP level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub level: usize,
    pub mups: MupSet,
    pub gaps: GapTable,
    pub plan: AugmentationPlan,
    pub progress: BTreeMap<Pattern, CombinationProgress>,
    pub coverage_before: BTreeMap<Pattern, usize>,
}

impl Round {
    pub fn current(&self) -> Option<&Pattern> {
        self.progress.iter().find(|(_, p)| p.open()).map(|(c, _)| c)
    }
}

/// Identity of the dataset a run works on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    /// Directory that relative payload and mask paths resolve against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dir: Option<String>,
    pub real_tuples: usize,
    /// SHA-256 of the canonical tuple serialization.
    pub fingerprint: String,
}

/// Summary of the trained distribution gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub kernel: crate::distribution_test::KernelSpec,
    pub nu: f64,
    pub rho: f64,
    pub n_train: usize,
    pub support_vectors: usize,
    pub converged: bool,
    pub embedding_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config: RunConfig,
    pub dataset: DatasetRef,
    pub phase: Phase,
    pub gate: GateSummary,
    pub p_real: f64,
    pub rounds: Vec<Round>,
    pub records: Vec<CandidateRecord>,
    pub accepted: Vec<TupleRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandit: Option<BanditState>,
    pub ledger: CostLedger,
    /// Next global attempt number.
    pub sequence: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suspended: Option<String>,
    pub unresolved: Vec<Pattern>,
}

impl RunState {
    pub fn current_round(&self) -> Option<&Round> {
        self.rounds.last()
    }

    pub fn pending_record(&self) -> Option<&CandidateRecord> {
        self.records
            .last()
            .filter(|r| r.outcome == Outcome::AwaitingEvaluation)
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("run state serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn fingerprint(tuples: &[TupleRecord]) -> String {
    let mut h = Sha256::new();
    for t in tuples {
        h.update(
            serde_json::to_string(t)
                .expect("tuple serializes")
                .as_bytes(),
        );
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const ACCEPTED_FILE: &str = "accepted.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.json";
pub const DATASET_DIR: &str = "dataset";
pub const PAYLOAD_DIR: &str = "payloads";

/// File layout of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> OrchestratorError {
    OrchestratorError::Io(format!("{}: {e}", path.display()))
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<(), OrchestratorError> {
        std::fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))
    }

    pub fn exists(&self) -> bool {
        self.path(STATE_FILE).is_file()
    }

    /// Write a file through a temporary sibling and a rename.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), OrchestratorError> {
        let path = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    /// Snapshot format: the SHA-256 of the state JSON on the first line, the JSON on the second.
    pub fn save_state(&self, state: &RunState) -> Result<(), OrchestratorError> {
        let json = state.to_canonical_json();
        let text = format!("{}\n{}\n", sha256_hex(json.as_bytes()), json);
        self.write_atomic(STATE_FILE, text.as_bytes())
    }

    pub fn load_state(&self) -> Result<RunState, OrchestratorError> {
        let path = self.path(STATE_FILE);
        if !path.is_file() {
            return Err(OrchestratorError::NotFound(self.root.display().to_string()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let (sum, json) = text
            .split_once('\n')
            .ok_or_else(|| OrchestratorError::CorruptState("missing checksum line".into()))?;
        let json = json.strip_suffix('\n').unwrap_or(json);
        if sha256_hex(json.as_bytes()) != sum.trim() {
            return Err(OrchestratorError::CorruptState("checksum mismatch".into()));
        }
        serde_json::from_str(json).map_err(|e| OrchestratorError::CorruptState(e.to_string()))
    }

    pub fn append_event(&self, event: &serde_json::Value) -> Result<(), OrchestratorError> {
        let path = self.path(EVENTS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(f, "{event}").map_err(|e| io_err(&path, e))
    }

    pub fn write_accepted(&self, tuples: &[TupleRecord]) -> Result<(), OrchestratorError> {
        let tmp = self.path(&format!(".{ACCEPTED_FILE}.tmp"));
        write_tuples(&tmp, tuples).map_err(|e| io_err(&tmp, e))?;
        let path = self.path(ACCEPTED_FILE);
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }
}
