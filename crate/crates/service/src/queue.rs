//! Human-evaluation task queue.
//!
//! Each candidate waiting for labels owns a slot needing `n_eval` labels.
//! Evaluators claim tasks round-robin over slots; a slot is never offered to
//! the same evaluator twice, and a claimed task that stays unlabeled past the
//! expiry returns its place to the pool.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_EXPIRY: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Labeled,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvaluationTask {
    pub task_id: String,
    pub tuple_id: String,
    pub run_id: String,
    pub evaluator: String,
    /// Where the UI fetches the candidate, when it has a payload.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub assigned_at: u64,
    pub state: TaskState,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("task `{0}` expired before it was labeled")]
    Expired(String),
}

/// A slot that just received its last label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedBatch {
    pub run_id: String,
    pub tuple_id: String,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Submitted {
    Recorded { received: usize, needed: usize },
    Complete(CompletedBatch),
}

#[derive(Debug)]
struct Slot {
    run_id: String,
    payload: Option<PathBuf>,
    needed: usize,
    labels: Vec<bool>,
    outstanding: usize,
    evaluators: BTreeSet<String>,
    scored: bool,
}

impl Slot {
    fn open_for(&self, evaluator: &str) -> bool {
        !self.scored
            && self.labels.len() + self.outstanding < self.needed
            && !self.evaluators.contains(evaluator)
    }
}

#[derive(Debug)]
struct Task {
    view: EvaluationTask,
    claimed: Instant,
}

#[derive(Debug)]
pub struct EvaluationQueue {
    expiry: Duration,
    slots: BTreeMap<String, Slot>,
    order: Vec<String>,
    cursor: usize,
    tasks: HashMap<String, Task>,
    active: HashMap<String, String>,
    next_task: u64,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl EvaluationQueue {
    pub fn new(expiry: Duration) -> Self {
        Self {
            expiry,
            slots: BTreeMap::new(),
            order: Vec::new(),
            cursor: 0,
            tasks: HashMap::new(),
            active: HashMap::new(),
            next_task: 1,
        }
    }

    /// Register a candidate; re-adding a known tuple is a no-op.
    pub fn add_tuple(
        &mut self,
        run_id: &str,
        tuple_id: &str,
        payload: Option<PathBuf>,
        needed: usize,
    ) {
        if self.slots.contains_key(tuple_id) {
            return;
        }
        self.slots.insert(
            tuple_id.to_string(),
            Slot {
                run_id: run_id.to_string(),
                payload,
                needed,
                labels: Vec::new(),
                outstanding: 0,
                evaluators: BTreeSet::new(),
                scored: false,
            },
        );
        self.order.push(tuple_id.to_string());
    }

    pub fn payload(&self, tuple_id: &str) -> Option<&Path> {
        self.slots.get(tuple_id)?.payload.as_deref()
    }

    /// Slots still collecting labels.
    pub fn open_slots(&self) -> usize {
        self.slots.values().filter(|s| !s.scored).count()
    }

    /// Labels received so far for a tuple.
    pub fn labels(&self, tuple_id: &str) -> Option<&[bool]> {
        self.slots.get(tuple_id).map(|s| s.labels.as_slice())
    }

    pub fn task(&self, task_id: &str) -> Option<&EvaluationTask> {
        self.tasks.get(task_id).map(|t| &t.view)
    }

    /// Expire pending tasks claimed more than the expiry ago.
    pub fn expire(&mut self, now: Instant) {
        for task in self.tasks.values_mut() {
            if task.view.state == TaskState::Pending
                && now.duration_since(task.claimed) >= self.expiry
            {
                task.view.state = TaskState::Expired;
                if let Some(slot) = self.slots.get_mut(&task.view.tuple_id) {
                    slot.outstanding -= 1;
                }
                if self.active.get(&task.view.evaluator) == Some(&task.view.task_id) {
                    self.active.remove(&task.view.evaluator);
                }
            }
        }
    }

    /// The evaluator's pending task, or a new one; `None` when nothing is open for them.
    pub fn claim(&mut self, evaluator: &str, now: Instant) -> Option<EvaluationTask> {
        self.expire(now);
        if let Some(task_id) = self.active.get(evaluator) {
            return Some(self.tasks[task_id].view.clone());
        }
        let n = self.order.len();
        let pick = (0..n)
            .map(|i| (self.cursor + i) % n)
            .find(|&i| self.slots[&self.order[i]].open_for(evaluator))?;
        self.cursor = (pick + 1) % n;
        let tuple_id = self.order[pick].clone();
        let slot = self.slots.get_mut(&tuple_id).expect("ordered slots exist");
        slot.outstanding += 1;
        slot.evaluators.insert(evaluator.to_string());
        let task_id = format!("task-{:06}", self.next_task);
        self.next_task += 1;
        let view = EvaluationTask {
            task_id: task_id.clone(),
            tuple_id: tuple_id.clone(),
            run_id: slot.run_id.clone(),
            evaluator: evaluator.to_string(),
            payload: slot
                .payload
                .as_ref()
                .map(|_| format!("/tuples/{tuple_id}/payload")),
            assigned_at: unix_ms(),
            state: TaskState::Pending,
        };
        self.tasks.insert(
            task_id.clone(),
            Task {
                view: view.clone(),
                claimed: now,
            },
        );
        self.active.insert(evaluator.to_string(), task_id);
        Some(view)
    }

    /// Record one label. The slot's batch is returned exactly once, with its last label.
    pub fn submit(
        &mut self,
        task_id: &str,
        realistic: bool,
        now: Instant,
    ) -> Result<Submitted, QueueError> {
        self.expire(now);
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| QueueError::UnknownTask(task_id.to_string()))?;
        match task.view.state {
            TaskState::Labeled => return Err(QueueError::AlreadyLabeled(task_id.to_string())),
            TaskState::Expired => return Err(QueueError::Expired(task_id.to_string())),
            TaskState::Pending => {}
        }
        task.view.state = TaskState::Labeled;
        self.active.remove(&task.view.evaluator);
        let slot = self
            .slots
            .get_mut(&task.view.tuple_id)
            .expect("tasks point at slots");
        slot.outstanding -= 1;
        slot.labels.push(realistic);
        if slot.labels.len() < slot.needed {
            return Ok(Submitted::Recorded {
                received: slot.labels.len(),
                needed: slot.needed,
            });
        }
        slot.scored = true;
        Ok(Submitted::Complete(CompletedBatch {
            run_id: slot.run_id.clone(),
            tuple_id: task.view.tuple_id.clone(),
            labels: slot.labels.clone(),
        }))
    }
}
