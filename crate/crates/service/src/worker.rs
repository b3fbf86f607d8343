//! One thread per run owns its driver; everything else talks to it through a mailbox
//! and reads a status snapshot.

use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use covrepair::generator_client::Money;
use covrepair::orchestrator::{GateRate, Outcome, Phase, RunDriver, RunReport, StepOutcome};
use serde::Serialize;

use crate::queue::EvaluationQueue;

pub enum Command {
    Submit {
        request_id: String,
        labels: Vec<bool>,
    },
    Pause,
    Resume,
    Shutdown,
}

/// Read-only view of a run served by `GET /runs/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub run_id: String,
    pub dataset_id: Option<String>,
    pub phase: Phase,
    pub paused: bool,
    pub suspended: Option<String>,
    pub error: Option<String>,
    pub mups: usize,
    /// Missing tuples summed over the targeted MUPs.
    pub gaps_remaining: u64,
    pub eta: u64,
    pub planned: u64,
    pub queries: u64,
    pub accepted: u64,
    pub distribution_rejected: u64,
    pub quality_rejected: u64,
    pub backend_errors: u64,
    /// Candidates whose labels went through the quality gate.
    pub scored: u64,
    /// Candidate currently waiting for labels.
    pub awaiting: Option<String>,
    pub distribution_gate: GateRate,
    pub quality_gate: GateRate,
    pub joint_pass_rate: Option<f64>,
    pub cost_total: Money,
    pub cost_display: String,
    pub unresolved: Vec<String>,
}

impl RunStatus {
    fn from_report(report: &RunReport, dataset_id: Option<String>) -> Self {
        Self {
            run_id: report.run_id.clone(),
            dataset_id,
            phase: report.phase,
            paused: false,
            suspended: None,
            error: None,
            mups: report.mups_targeted,
            gaps_remaining: report
                .coverage
                .values()
                .map(|c| c.tau.saturating_sub(c.after) as u64)
                .sum(),
            eta: report.eta,
            planned: report.planned,
            queries: report.queries,
            accepted: report.accepted,
            distribution_rejected: report.distribution_rejected,
            quality_rejected: report.quality_rejected,
            backend_errors: report.backend_errors,
            scored: report.quality_gate.evaluated,
            awaiting: None,
            distribution_gate: report.distribution_gate,
            quality_gate: report.quality_gate,
            joint_pass_rate: report.joint_pass_rate,
            cost_total: report.cost_total,
            cost_display: report.cost_display.clone(),
            unresolved: report.unresolved.clone(),
        }
    }
}

pub struct RunHandle {
    pub run_id: String,
    pub run_dir: PathBuf,
    tx: Sender<Command>,
    status: Arc<RwLock<RunStatus>>,
    thread: Option<JoinHandle<()>>,
}

impl RunHandle {
    pub fn status(&self) -> RunStatus {
        self.status.read().expect("status lock").clone()
    }

    /// Returns false when the worker has already stopped.
    pub fn send(&self, command: Command) -> bool {
        self.tx.send(command).is_ok()
    }

    pub fn shutdown(mut self) {
        let _ = self.tx.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct Worker {
    driver: RunDriver,
    dataset_id: Option<String>,
    status: Arc<RwLock<RunStatus>>,
    queue: Arc<Mutex<EvaluationQueue>>,
    paused: bool,
    error: Option<String>,
}

/// Start the worker thread for an opened driver.
pub fn spawn(
    driver: RunDriver,
    dataset_id: Option<String>,
    queue: Arc<Mutex<EvaluationQueue>>,
) -> RunHandle {
    let run_id = driver.state().run_id.clone();
    let run_dir = driver.run_dir().to_path_buf();
    let initial = driver
        .report()
        .map(|r| RunStatus::from_report(&r, dataset_id.clone()))
        .expect("report of an opened run");
    let status = Arc::new(RwLock::new(initial));
    let (tx, rx) = mpsc::channel();
    let mut worker = Worker {
        driver,
        dataset_id,
        status: status.clone(),
        queue,
        paused: false,
        error: None,
    };
    let thread = std::thread::Builder::new()
        .name(format!("run-{run_id}"))
        .spawn(move || worker.main(rx))
        .expect("spawn run worker");
    RunHandle {
        run_id,
        run_dir,
        tx,
        status,
        thread: Some(thread),
    }
}

impl Worker {
    fn main(&mut self, rx: Receiver<Command>) {
        self.enqueue_pending();
        self.publish();
        loop {
            let command = if self.runnable() {
                match rx.try_recv() {
                    Ok(c) => Some(c),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return,
                }
            } else {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            };
            match command {
                Some(Command::Shutdown) => return,
                Some(c) => self.handle(c),
                None => self.step(),
            }
            self.publish();
        }
    }

    fn runnable(&self) -> bool {
        let state = self.driver.state();
        !self.paused
            && self.error.is_none()
            && state.suspended.is_none()
            && !state.phase.is_terminal()
            && state.phase != Phase::AwaitingEvaluations
    }

    fn handle(&mut self, command: Command) {
        match command {
            Command::Submit { request_id, labels } => {
                match self.driver.submit_evaluations(&request_id, labels) {
                    Ok(outcome) => {
                        tracing::info!(run = %self.driver.state().run_id, %request_id, ?outcome, "labels scored")
                    }
                    Err(e) => {
                        tracing::warn!(run = %self.driver.state().run_id, %request_id, "labels not applied: {e}")
                    }
                }
            }
            Command::Pause => self.paused = true,
            Command::Resume => {
                self.paused = false;
                if self.driver.state().suspended.is_some() || self.error.is_some() {
                    match RunDriver::resume(self.driver.run_dir()) {
                        Ok(d) => {
                            self.driver = d;
                            self.error = None;
                        }
                        Err(e) => self.error = Some(e.to_string()),
                    }
                }
                self.enqueue_pending();
            }
            Command::Shutdown => {}
        }
    }

    fn step(&mut self) {
        match self.driver.step() {
            Ok(StepOutcome::AwaitingEvaluation { .. }) => self.enqueue_pending(),
            Ok(StepOutcome::Suspended { reason }) => {
                tracing::warn!(run = %self.driver.state().run_id, "suspended: {reason}")
            }
            Ok(StepOutcome::Finished(phase)) => {
                tracing::info!(run = %self.driver.state().run_id, ?phase, "run finished")
            }
            Ok(_) => {}
            Err(e) => {
                tracing::error!(run = %self.driver.state().run_id, "run stopped: {e}");
                self.error = Some(e.to_string());
            }
        }
    }

    /// Put the candidate waiting for labels in front of evaluators.
    fn enqueue_pending(&self) {
        if let Some(p) = self.driver.pending_evaluation() {
            let payload = p.payload_path.map(PathBuf::from);
            self.queue.lock().expect("queue lock").add_tuple(
                &self.driver.state().run_id,
                &p.request_id,
                payload,
                p.n_eval,
            );
        }
    }

    fn publish(&self) {
        let mut status = match self.driver.report() {
            Ok(r) => RunStatus::from_report(&r, self.dataset_id.clone()),
            Err(e) => {
                let mut s = self.status.read().expect("status lock").clone();
                s.error = Some(e.to_string());
                s
            }
        };
        let state = self.driver.state();
        status.paused = self.paused;
        status.suspended = state.suspended.clone();
        status.error = status.error.take().or_else(|| self.error.clone());
        status.awaiting = state
            .pending_record()
            .filter(|r| r.outcome == Outcome::AwaitingEvaluation)
            .map(|r| r.request_id.clone());
        *self.status.write().expect("status lock") = status;
    }
}
