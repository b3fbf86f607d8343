use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::report::{build_report, RunReport};
use super::state::{
    fingerprint, CandidateRecord, CombinationProgress, DatasetRef, GateSummary, Outcome, Phase,
    Round, RunDir, RunState, ACCEPTED_FILE, CONFIG_FILE, DATASET_DIR, MODEL_FILE, PAYLOAD_DIR,
    REPORT_FILE,
};
use super::{Backend, EvaluatorMode, OrchestratorError, RewardMode, RunConfig};
use crate::distribution_test::{distribution_test, train_ocsvm, EmbeddingStats, OcsvmModel};
use crate::generator_client::{
    build_prompt, CostLedger, GenerationRequest, Generator, GeneratorError, LiveConfig,
    LiveGenerator, MockGenerator,
};
use crate::guide_selection::{
    combination_index, select_guide, BanditState, GuideContext, Strategy,
};
use crate::patterns::{find_mups, min_level_mups, Dataset, InvertedIndex, TupleRecord};
use crate::quality_test::{calibrate_p_with_floor, quality_test, simulate_labels, EvaluationBatch};
use crate::selection::{compute_gaps, greedy_plan};
use crate::Decision;

const GUIDE_STREAM_SALT: u64 = 0x6775_6964_6500_0001;
const EVAL_STREAM_SALT: u64 = 0x6576_616c_0000_0002;

/// What one call to [`RunDriver::step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// A plan was computed for a new round.
    Planned {
        round: usize,
        total: u64,
    },
    /// A candidate was generated and scored (or failed at the backend).
    Candidate {
        sequence: u64,
        outcome: Outcome,
    },
    /// Waiting for realism labels for the named candidate.
    AwaitingEvaluation {
        request_id: String,
    },
    /// The backend could not be reached; the run can be resumed later.
    Suspended {
        reason: String,
    },
    Finished(Phase),
}

/// Candidate waiting for human labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEvaluation {
    pub request_id: String,
    pub payload_path: Option<String>,
    pub n_eval: usize,
}

/// Single-writer state machine for one repair run.
pub struct RunDriver {
    state: RunState,
    dir: RunDir,
    real: Dataset,
    real_index: InvertedIndex,
    model: OcsvmModel,
    generator: Box<dyn Generator>,
}

fn build_generator(
    config: &RunConfig,
    real: &Dataset,
    base_dir: Option<&Path>,
    dir: &RunDir,
) -> Result<Box<dyn Generator>, OrchestratorError> {
    Ok(match config.backend {
        Backend::Mock => Box::new(MockGenerator::new(real, config.mock.clone(), config.seed)),
        Backend::Live => {
            let live = LiveConfig::from_env(&dir.path(PAYLOAD_DIR))?;
            Box::new(LiveGenerator::new(live, real, base_dir)?)
        }
    })
}

impl RunDriver {
    /// Start a new run in `run_dir` over the real tuples of `dataset`.
    ///
    /// `base_dir` is where relative payload and mask paths resolve.
    pub fn create(
        dataset: &Dataset,
        base_dir: Option<&Path>,
        config: RunConfig,
        run_dir: &Path,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let dir = RunDir::new(run_dir);
        let real = dataset.real_only();
        let generator = build_generator(&config, &real, base_dir, &dir)?;
        Self::create_with_generator(&real, base_dir, config, run_dir, generator)
    }

    /// Like [`RunDriver::create`] with an explicit generator.
    pub fn create_with_generator(
        dataset: &Dataset,
        base_dir: Option<&Path>,
        config: RunConfig,
        run_dir: &Path,
        generator: Box<dyn Generator>,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let dir = RunDir::new(run_dir);
        if dir.exists() {
            return Err(OrchestratorError::InvalidConfig(format!(
                "run directory {} already holds a run",
                run_dir.display()
            )));
        }
        dir.create()?;
        let real = dataset.real_only();
        if real.is_empty() {
            return Err(OrchestratorError::InvalidConfig(
                "dataset has no real tuples".into(),
            ));
        }
        real.save_dir(&dir.path(DATASET_DIR))?;
        let config_text = serde_json::to_string_pretty(&config).expect("config serializes");
        dir.write_atomic(CONFIG_FILE, config_text.as_bytes())?;

        let embeddings: Vec<Vec<f64>> = real.tuples.iter().map(|t| t.embedding.clone()).collect();
        let kernel = config.kernel_spec(&embeddings);
        let model = train_ocsvm(&embeddings, config.nu, kernel, config.svm_tol)?;
        model.save(&dir.path(MODEL_FILE))?;
        let p_real =
            calibrate_p_with_floor(&config.calibration.sample(), config.min_calibration_labels)?;

        let bandit = if config.strategy == Strategy::LinUcb {
            Some(load_bandit(&config, &real)?)
        } else {
            None
        };
        let run_id = run_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let state = RunState {
            run_id,
            dataset: DatasetRef {
                base_dir: base_dir.map(|p| p.to_string_lossy().into_owned()),
                real_tuples: real.len(),
                fingerprint: fingerprint(&real.tuples),
            },
            phase: Phase::Planning,
            gate: GateSummary {
                kernel: model.kernel,
                nu: model.nu,
                rho: model.rho,
                n_train: model.n_train,
                support_vectors: model.alphas.len(),
                converged: model.converged,
                embedding_mean: EmbeddingStats::from_embeddings(&embeddings).mean,
            },
            p_real,
            rounds: Vec::new(),
            records: Vec::new(),
            accepted: Vec::new(),
            bandit,
            ledger: CostLedger::new(config.unit_cost),
            sequence: 0,
            suspended: None,
            unresolved: Vec::new(),
            config,
        };
        let real_index = InvertedIndex::build(&real);
        let driver = Self {
            state,
            dir,
            real,
            real_index,
            model,
            generator,
        };
        driver.dir.write_accepted(&[])?;
        driver.event(
            "created",
            json!({ "real_tuples": driver.real.len(), "p_real": driver.state.p_real }),
        )?;
        driver.persist()?;
        Ok(driver)
    }

    /// Reopen a run from its directory, rebuilding the generator from the saved configuration.
    pub fn resume(run_dir: &Path) -> Result<Self, OrchestratorError> {
        let dir = RunDir::new(run_dir);
        let state = dir.load_state()?;
        let real = Dataset::load_dir(&dir.path(DATASET_DIR))?;
        let base_dir = state.dataset.base_dir.as_ref().map(PathBuf::from);
        let generator = build_generator(&state.config, &real, base_dir.as_deref(), &dir)?;
        Self::resume_with_generator(run_dir, generator)
    }

    pub fn resume_with_generator(
        run_dir: &Path,
        generator: Box<dyn Generator>,
    ) -> Result<Self, OrchestratorError> {
        let dir = RunDir::new(run_dir);
        let mut state = dir.load_state()?;
        let real = Dataset::load_dir(&dir.path(DATASET_DIR))?;
        if fingerprint(&real.tuples) != state.dataset.fingerprint {
            return Err(OrchestratorError::CorruptState(
                "dataset snapshot does not match the run".into(),
            ));
        }
        let model = OcsvmModel::load(&dir.path(MODEL_FILE))?;
        state.suspended = None;
        let real_index = InvertedIndex::build(&real);
        let driver = Self {
            state,
            dir,
            real,
            real_index,
            model,
            generator,
        };
        // Bring derived files in line with the snapshot in case the process stopped between writes.
        driver.dir.write_accepted(&driver.state.accepted)?;
        driver.event("resumed", json!({ "sequence": driver.state.sequence }))?;
        Ok(driver)
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn dataset(&self) -> &Dataset {
        &self.real
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir.root
    }

    pub fn model(&self) -> &OcsvmModel {
        &self.model
    }

    /// Real plus accepted synthetic tuples.
    pub fn augmented(&self) -> Dataset {
        let mut ds = self.real.clone();
        ds.tuples.extend(self.state.accepted.iter().cloned());
        ds
    }

    pub fn report(&self) -> Result<RunReport, OrchestratorError> {
        let augmented = InvertedIndex::build(&self.augmented());
        build_report(&self.state, &self.real.schema, &augmented)
    }

    pub fn pending_evaluation(&self) -> Option<PendingEvaluation> {
        self.state.pending_record().map(|r| PendingEvaluation {
            request_id: r.request_id.clone(),
            payload_path: r.payload_path.clone(),
            n_eval: self.state.config.n_eval,
        })
    }

    fn event(&self, kind: &str, detail: serde_json::Value) -> Result<(), OrchestratorError> {
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.dir.append_event(&json!({
            "ts_ms": ts,
            "kind": kind,
            "sequence": self.state.sequence,
            "detail": detail,
        }))
    }

    fn persist(&self) -> Result<(), OrchestratorError> {
        self.dir.save_state(&self.state)
    }

    fn finish(&mut self, phase: Phase) -> Result<StepOutcome, OrchestratorError> {
        self.state.phase = phase;
        let report = self.report()?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        self.dir.write_atomic(REPORT_FILE, text.as_bytes())?;
        if let (Some(path), Some(bandit)) = (&self.state.config.bandit_file, &self.state.bandit) {
            let text = serde_json::to_string(bandit).expect("bandit serializes");
            std::fs::write(path, text)
                .map_err(|e| OrchestratorError::Io(format!("{path}: {e}")))?;
        }
        self.event("finished", json!({ "phase": phase }))?;
        self.persist()?;
        Ok(StepOutcome::Finished(phase))
    }

    /// Advance the run by one unit of work.
    pub fn step(&mut self) -> Result<StepOutcome, OrchestratorError> {
        if let Some(reason) = &self.state.suspended {
            return Ok(StepOutcome::Suspended {
                reason: reason.clone(),
            });
        }
        match self.state.phase {
            Phase::Done | Phase::Exhausted => Ok(StepOutcome::Finished(self.state.phase)),
            Phase::AwaitingEvaluations => {
                let request_id = self
                    .state
                    .pending_record()
                    .map(|r| r.request_id.clone())
                    .unwrap_or_default();
                Ok(StepOutcome::AwaitingEvaluation { request_id })
            }
            Phase::Planning => self.plan_round(),
            Phase::Generating => self.generate_one(),
        }
    }

    /// Step until the run finishes, suspends, or waits for labels.
    pub fn run(&mut self) -> Result<StepOutcome, OrchestratorError> {
        loop {
            match self.step()? {
                StepOutcome::Planned { .. } | StepOutcome::Candidate { .. } => continue,
                other => return Ok(other),
            }
        }
    }

    /// Run to completion and return the report (simulated evaluators only).
    pub fn run_to_completion(&mut self) -> Result<RunReport, OrchestratorError> {
        match self.run()? {
            StepOutcome::Finished(_) => self.report(),
            StepOutcome::AwaitingEvaluation { request_id } => {
                Err(OrchestratorError::InvalidConfig(format!(
                    "run is waiting for human labels on {request_id}"
                )))
            }
            StepOutcome::Suspended { reason } => Err(OrchestratorError::Generator(
                GeneratorError::BackendUnavailable {
                    message: reason,
                    reached: false,
                },
            )),
            other => unreachable!("run() stopped on {other:?}"),
        }
    }

    fn plan_round(&mut self) -> Result<StepOutcome, OrchestratorError> {
        if !self.state.rounds.is_empty() {
            let exhausted = self
                .state
                .rounds
                .last()
                .is_some_and(|r| r.progress.values().any(|p| p.exhausted));
            if exhausted {
                return self.finish(Phase::Exhausted);
            }
            if !self.state.config.iterate_levels {
                return self.finish(Phase::Done);
            }
        }
        let augmented = self.augmented();
        let index = InvertedIndex::build(&augmented);
        let tau = self.state.config.tau;
        let all = find_mups(&index, &augmented.schema, tau);
        if all.is_empty() {
            return self.finish(Phase::Done);
        }
        let targets = min_level_mups(&all)?;
        let gaps = compute_gaps(&targets, &index, tau)?;
        let plan = greedy_plan(&targets, &gaps, &augmented.schema, &index);
        let progress = plan
            .sigma
            .iter()
            .map(|(c, &n)| {
                (
                    c.clone(),
                    CombinationProgress {
                        planned: n,
                        ..Default::default()
                    },
                )
            })
            .collect();
        let coverage_before = targets
            .iter()
            .map(|m| (m.clone(), index.coverage_count(m)))
            .collect();
        let round = Round {
            level: targets.min_level().unwrap_or(0),
            mups: targets,
            gaps,
            plan,
            progress,
            coverage_before,
        };
        let total = round.plan.total;
        let n = self.state.rounds.len() + 1;
        let schema = &self.real.schema;
        let detail = json!({
            "round": n,
            "level": round.level,
            "mups": round.mups.iter().map(|m| m.render(schema)).collect::<Vec<_>>(),
            "eta": round.gaps.eta(),
            "plan": round.plan.sigma.iter().map(|(c, s)| (c.render(schema), *s)).collect::<BTreeMap<_, _>>(),
        });
        self.state.rounds.push(round);
        self.state.phase = Phase::Generating;
        self.event("planned", detail)?;
        self.persist()?;
        Ok(StepOutcome::Planned { round: n, total })
    }

    fn generate_one(&mut self) -> Result<StepOutcome, OrchestratorError> {
        let round_no = self.state.rounds.len() - 1;
        let Some(target) = self.state.rounds[round_no].current().cloned() else {
            self.state.phase = Phase::Planning;
            return self.plan_round();
        };
        let config = self.state.config.clone();
        let sequence = self.state.sequence;
        let base_dir = self.state.dataset.base_dir.as_ref().map(PathBuf::from);
        let ctx = GuideContext {
            dataset: &self.real,
            index: &self.real_index,
            mask_level: config.mask_level,
            base_dir: base_dir.as_deref(),
            require_masks: config.require_masks,
        };
        let mut guide_rng = stream_rng(config.seed ^ GUIDE_STREAM_SALT, sequence);
        let guide = select_guide(
            config.strategy,
            &target,
            self.state.bandit.as_ref(),
            &mut guide_rng,
            &ctx,
        )?;
        let prompt = build_prompt(&target, &self.real.schema)?;
        let request_id = format!("{}-{:06}", self.state.run_id, sequence);
        let request = GenerationRequest {
            request_id: request_id.clone(),
            sequence,
            prompt,
            guide: guide.clone(),
            target: target.clone(),
        };

        let mut record = CandidateRecord {
            sequence,
            request_id: request_id.clone(),
            round: round_no + 1,
            target: target.clone(),
            guide,
            outcome: Outcome::BackendError,
            error: None,
            embedding: Vec::new(),
            payload_path: None,
            realism: None,
            distribution: None,
            labels: Vec::new(),
            quality: None,
        };

        let queries_before = self.state.ledger.queries;
        let candidate = match self.generator.generate(&request, &mut self.state.ledger) {
            Ok(c) => c,
            Err(e) => {
                let billed = self.state.ledger.queries > queries_before;
                if billed {
                    record.error = Some(e.to_string());
                    self.state.sequence += 1;
                    self.conclude(record, None)?;
                }
                if e.suspends_run() {
                    let reason = e.to_string();
                    self.state.suspended = Some(reason.clone());
                    self.event("suspended", json!({ "reason": reason }))?;
                    self.persist()?;
                    return Ok(StepOutcome::Suspended { reason });
                }
                if !billed {
                    return Err(e.into());
                }
                return Ok(StepOutcome::Candidate {
                    sequence,
                    outcome: Outcome::BackendError,
                });
            }
        };
        self.state.sequence += 1;
        record.embedding = candidate.embedding;
        record.payload_path = candidate.payload_path;
        record.realism = candidate.simulated_realism;

        let verdict = distribution_test(&self.model, &record.embedding)?;
        record.distribution = Some(verdict);
        if verdict.decision == Decision::Reject {
            record.outcome = Outcome::DistributionRejected;
            self.conclude(record, None)?;
            return Ok(StepOutcome::Candidate {
                sequence,
                outcome: Outcome::DistributionRejected,
            });
        }

        match config.evaluator {
            EvaluatorMode::Simulated => {
                let realism = record.realism.unwrap_or(config.default_realism);
                let mut eval_rng = stream_rng(config.seed ^ EVAL_STREAM_SALT, sequence);
                let labels = simulate_labels(&mut eval_rng, realism, config.n_eval);
                let outcome = self.score(record, labels)?;
                Ok(StepOutcome::Candidate { sequence, outcome })
            }
            EvaluatorMode::Human => {
                record.outcome = Outcome::AwaitingEvaluation;
                let payload = record.payload_path.clone();
                self.state.records.push(record);
                self.state.phase = Phase::AwaitingEvaluations;
                self.event(
                    "awaiting_evaluation",
                    json!({ "request_id": request_id, "payload": payload }),
                )?;
                self.persist()?;
                Ok(StepOutcome::AwaitingEvaluation { request_id })
            }
        }
    }

    /// Score the pending candidate with a complete batch of human labels.
    pub fn submit_evaluations(
        &mut self,
        request_id: &str,
        labels: Vec<bool>,
    ) -> Result<Outcome, OrchestratorError> {
        let pending = self
            .state
            .pending_record()
            .filter(|r| r.request_id == request_id)
            .ok_or_else(|| OrchestratorError::NotAwaiting(request_id.to_string()))?;
        if labels.len() != self.state.config.n_eval {
            return Err(OrchestratorError::InvalidConfig(format!(
                "expected {} labels, got {}",
                self.state.config.n_eval,
                labels.len()
            )));
        }
        let record = pending.clone();
        self.state.records.pop();
        self.state.phase = Phase::Generating;
        self.score(record, labels)
    }

    fn score(
        &mut self,
        mut record: CandidateRecord,
        labels: Vec<bool>,
    ) -> Result<Outcome, OrchestratorError> {
        let batch = EvaluationBatch::new(record.request_id.clone(), labels);
        let verdict = quality_test(&batch, self.state.p_real, self.state.config.alpha_quality)?;
        record.labels = batch.labels;
        record.quality = Some(verdict);
        record.outcome = if verdict.decision == Decision::Accept {
            Outcome::Accepted
        } else {
            Outcome::QualityRejected
        };
        let outcome = record.outcome;
        self.conclude(record, Some(verdict.decision == Decision::Accept))?;
        Ok(outcome)
    }

    /// Apply a finished candidate: bandit reward, progress, acceptance, persistence.
    fn conclude(
        &mut self,
        record: CandidateRecord,
        quality_passed: Option<bool>,
    ) -> Result<(), OrchestratorError> {
        let accepted = record.outcome == Outcome::Accepted;
        let reward = match self.state.config.reward {
            RewardMode::Joint => Some(accepted),
            RewardMode::QualityOnly => quality_passed,
        };
        if let (Some(bandit), Some(arm), Some(r)) =
            (self.state.bandit.as_mut(), record.guide.arm, reward)
        {
            let context = combination_index(&record.target, &self.real.schema.cardinalities());
            bandit.update(arm, context, r);
        }

        let max_attempts = self.state.config.max_attempts_per_tuple;
        let round = self
            .state
            .rounds
            .last_mut()
            .expect("generating implies a round");
        let progress = round
            .progress
            .get_mut(&record.target)
            .expect("target is planned");
        progress.total_attempts += 1;
        if accepted {
            progress.accepted += 1;
            progress.attempts = 0;
            self.state.accepted.push(TupleRecord {
                id: record.request_id.clone(),
                values: record.target.values().expect("targets are combinations"),
                embedding: record.embedding.clone(),
                payload_path: record.payload_path.clone().map(PathBuf::from),
                mask_path: None,
                synthetic: true,
            });
        } else {
            progress.attempts += 1;
            if progress.attempts >= max_attempts {
                progress.exhausted = true;
                self.state.unresolved.push(record.target.clone());
            }
        }
        let exhausted_now = progress.exhausted && !accepted;

        let schema = &self.real.schema;
        let detail = json!({
            "request_id": record.request_id,
            "target": record.target.render(schema),
            "guide": record.guide.tuple_id,
            "arm": record.guide.arm,
            "outcome": record.outcome,
            "distribution_score": record.distribution.map(|d| d.score),
            "labels": record.labels,
            "p_value": record.quality.map(|q| q.p_value),
            "error": record.error,
        });
        let target_text = record.target.render(schema);
        self.state.records.push(record);
        self.event("candidate", detail)?;
        if accepted {
            self.dir.write_accepted(&self.state.accepted)?;
        }
        if exhausted_now {
            self.event("attempts_exhausted", json!({ "target": target_text }))?;
        }
        self.persist()
    }

    /// Copy of the accepted-tuples file location.
    pub fn accepted_path(&self) -> PathBuf {
        self.dir.path(ACCEPTED_FILE)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn load_bandit(config: &RunConfig, real: &Dataset) -> Result<BanditState, OrchestratorError> {
    let fresh = || BanditState::for_schema(&real.schema, config.alpha_ucb);
    let Some(path) = &config.bandit_file else {
        return Ok(fresh());
    };
    if config.reset_bandit || !Path::new(path).is_file() {
        return Ok(fresh());
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| OrchestratorError::Io(format!("{path}: {e}")))?;
    let mut state: BanditState = serde_json::from_str(&text)
        .map_err(|e| OrchestratorError::CorruptState(format!("{path}: {e}")))?;
    if state.arms != real.schema.arity() || state.contexts != real.schema.combination_count() {
        return Err(OrchestratorError::CorruptState(format!(
            "{path}: bandit shape does not match the schema"
        )));
    }
    state.alpha_ucb = config.alpha_ucb;
    Ok(state)
}
