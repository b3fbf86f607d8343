//! HTTP facade over datasets, runs, and the evaluation queue.
//!
//! Layout under the data directory:
//! `datasets/{id}/` holds `schema.json`, `tuples.jsonl`, and `meta.json`;
//! `runs/{id}/` is a run directory plus `service.json` naming its dataset.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use covrepair::orchestrator::{
    fingerprint, sha256_hex, OrchestratorError, RunConfig, RunDriver, STATE_FILE,
};
use covrepair::patterns::{AttributeSchema, Dataset, TupleRecord};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::queue::{EvaluationQueue, QueueError, Submitted};
use crate::worker::{self, Command, RunHandle, RunStatus};

const DATASETS: &str = "datasets";
const RUNS: &str = "runs";
const DATASET_META: &str = "meta.json";
const RUN_META: &str = "service.json";

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let status = match e {
            QueueError::UnknownTask(_) => StatusCode::NOT_FOUND,
            QueueError::AlreadyLabeled(_) => StatusCode::CONFLICT,
            QueueError::Expired(_) => StatusCode::GONE,
        };
        Self::new(status, e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match e {
            OrchestratorError::NotFound(_) => StatusCode::NOT_FOUND,
            OrchestratorError::Io(_) | OrchestratorError::CorruptState(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_dir: Option<PathBuf>,
    tuples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunMeta {
    dataset_id: String,
}

struct DatasetEntry {
    dir: PathBuf,
    meta: DatasetMeta,
    /// Tuple id to resolved payload path.
    payloads: HashMap<String, PathBuf>,
}

impl DatasetEntry {
    fn open(dir: PathBuf) -> Result<Self, String> {
        let text = std::fs::read_to_string(dir.join(DATASET_META)).map_err(|e| e.to_string())?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let ds = Dataset::load_dir(&dir).map_err(|e| e.to_string())?;
        let payloads = payload_map(&ds, meta.base_dir.as_deref());
        Ok(Self {
            dir,
            meta,
            payloads,
        })
    }
}

fn payload_map(ds: &Dataset, base_dir: Option<&Path>) -> HashMap<String, PathBuf> {
    ds.tuples
        .iter()
        .filter_map(|t| {
            let p = t.payload_path.as_ref()?;
            Some((
                t.id.clone(),
                base_dir.map_or_else(|| p.clone(), |b| b.join(p)),
            ))
        })
        .collect()
}

/// Shared service state.
pub struct Service {
    data_dir: PathBuf,
    queue: Arc<Mutex<EvaluationQueue>>,
    datasets: RwLock<BTreeMap<String, DatasetEntry>>,
    runs: RwLock<BTreeMap<String, RunHandle>>,
}

impl Service {
    /// Open the data directory and re-attach the datasets and runs it holds.
    pub fn open(data_dir: &Path, task_expiry: Duration) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(data_dir.join(DATASETS))?;
        std::fs::create_dir_all(data_dir.join(RUNS))?;
        let service = Arc::new(Self {
            data_dir: data_dir.to_path_buf(),
            queue: Arc::new(Mutex::new(EvaluationQueue::new(task_expiry))),
            datasets: RwLock::new(BTreeMap::new()),
            runs: RwLock::new(BTreeMap::new()),
        });
        for dir in sorted_subdirs(&data_dir.join(DATASETS))? {
            let id = dir_name(&dir);
            match DatasetEntry::open(dir) {
                Ok(entry) => {
                    service
                        .datasets
                        .write()
                        .expect("datasets lock")
                        .insert(id, entry);
                }
                Err(e) => tracing::warn!(dataset = %id, "skipping dataset: {e}"),
            }
        }
        for dir in sorted_subdirs(&data_dir.join(RUNS))? {
            if !dir.join(STATE_FILE).exists() {
                continue;
            }
            let id = dir_name(&dir);
            let dataset_id = std::fs::read_to_string(dir.join(RUN_META))
                .ok()
                .and_then(|t| serde_json::from_str::<RunMeta>(&t).ok())
                .map(|m| m.dataset_id);
            match RunDriver::resume(&dir) {
                Ok(driver) => {
                    let handle = worker::spawn(driver, dataset_id, service.queue.clone());
                    service.runs.write().expect("runs lock").insert(id, handle);
                }
                Err(e) => tracing::warn!(run = %id, "cannot re-attach run: {e}"),
            }
        }
        Ok(service)
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/datasets", post(create_dataset))
            .route("/runs", post(create_run).get(list_runs))
            .route("/runs/{id}", get(run_status))
            .route("/runs/{id}/pause", post(pause_run))
            .route("/runs/{id}/resume", post(resume_run))
            .route("/evaluations/next", get(next_evaluation))
            .route("/evaluations", post(submit_evaluation))
            .route("/tuples/{id}/payload", get(tuple_payload))
            .with_state(self.clone())
    }

    pub fn run_status(&self, run_id: &str) -> Option<RunStatus> {
        self.runs
            .read()
            .expect("runs lock")
            .get(run_id)
            .map(|h| h.status())
    }

    /// Stop every run worker after its current step.
    pub fn shutdown(&self) {
        let runs = std::mem::take(&mut *self.runs.write().expect("runs lock"));
        for (_, handle) in runs {
            handle.shutdown();
        }
    }
}

fn sorted_subdirs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn parse<T: for<'de> Deserialize<'de>>(value: Value) -> ApiResult<T> {
    serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetBody {
    schema: AttributeSchema,
    tuples: Vec<TupleRecord>,
    #[serde(default)]
    base_dir: Option<PathBuf>,
}

async fn create_dataset(
    State(svc): State<Arc<Service>>,
    Json(body): Json<Value>,
) -> ApiResult<Response> {
    let body: DatasetBody = parse(body)?;
    let ds = Dataset::new(body.schema, body.tuples)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let schema_text = serde_json::to_string(&ds.schema).expect("schema serializes");
    let digest = sha256_hex(format!("{schema_text}\n{}", fingerprint(&ds.tuples)).as_bytes());
    let id = format!("ds-{}", &digest[..12]);
    if svc
        .datasets
        .read()
        .expect("datasets lock")
        .contains_key(&id)
    {
        return Ok((
            StatusCode::OK,
            Json(json!({ "dataset_id": id, "tuples": ds.len() })),
        )
            .into_response());
    }
    let dir = svc.data_dir.join(DATASETS).join(&id);
    let meta = DatasetMeta {
        base_dir: body.base_dir,
        tuples: ds.len(),
    };
    let payloads = payload_map(&ds, meta.base_dir.as_deref());
    ds.save_dir(&dir).map_err(ApiError::internal)?;
    let meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(dir.join(DATASET_META), meta_text).map_err(ApiError::internal)?;
    tracing::info!(dataset = %id, tuples = ds.len(), "dataset ingested");
    svc.datasets.write().expect("datasets lock").insert(
        id.clone(),
        DatasetEntry {
            dir,
            meta,
            payloads,
        },
    );
    Ok((
        StatusCode::CREATED,
        Json(json!({ "dataset_id": id, "tuples": ds.len() })),
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunBody {
    dataset_id: String,
    #[serde(default)]
    config: Option<RunConfig>,
    #[serde(default)]
    run_id: Option<String>,
}

async fn create_run(
    State(svc): State<Arc<Service>>,
    Json(body): Json<Value>,
) -> ApiResult<Response> {
    let body: RunBody = parse(body)?;
    let (dataset_dir, base_dir) = {
        let datasets = svc.datasets.read().expect("datasets lock");
        let entry = datasets.get(&body.dataset_id).ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                format!("unknown dataset `{}`", body.dataset_id),
            )
        })?;
        (entry.dir.clone(), entry.meta.base_dir.clone())
    };
    let runs_dir = svc.data_dir.join(RUNS);
    let run_id = match body.run_id {
        Some(id) if !valid_id(&id) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "run_id must be 1-64 characters of [A-Za-z0-9_-]",
            ))
        }
        Some(id) => id,
        None => (1..)
            .map(|n| format!("run-{n:04}"))
            .find(|id| !runs_dir.join(id).exists())
            .expect("unbounded ids"),
    };
    let run_dir = runs_dir.join(&run_id);
    if run_dir.exists() || svc.runs.read().expect("runs lock").contains_key(&run_id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("run `{run_id}` already exists"),
        ));
    }
    let config = body.config.unwrap_or_default();
    let dataset_id = body.dataset_id.clone();
    let queue = svc.queue.clone();
    let handle = tokio::task::spawn_blocking(move || -> ApiResult<RunHandle> {
        let ds = Dataset::load_dir(&dataset_dir).map_err(ApiError::internal)?;
        let driver = match RunDriver::create(&ds, base_dir.as_deref(), config, &run_dir) {
            Ok(d) => d,
            Err(e) => {
                // A rejected configuration leaves no half-made run behind.
                if !run_dir.join(STATE_FILE).exists() {
                    let _ = std::fs::remove_dir_all(&run_dir);
                }
                return Err(e.into());
            }
        };
        let meta = serde_json::to_string(&RunMeta {
            dataset_id: dataset_id.clone(),
        })
        .expect("meta serializes");
        std::fs::write(run_dir.join(RUN_META), meta).map_err(ApiError::internal)?;
        Ok(worker::spawn(driver, Some(dataset_id), queue))
    })
    .await
    .map_err(ApiError::internal)??;
    let status = handle.status();
    tracing::info!(run = %run_id, "run started");
    svc.runs
        .write()
        .expect("runs lock")
        .insert(run_id.clone(), handle);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "run_id": run_id, "status": status })),
    )
        .into_response())
}

async fn list_runs(State(svc): State<Arc<Service>>) -> Json<Vec<RunStatus>> {
    Json(
        svc.runs
            .read()
            .expect("runs lock")
            .values()
            .map(|h| h.status())
            .collect(),
    )
}

async fn run_status(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<RunStatus>> {
    svc.run_status(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run `{id}`")))
}

fn control(svc: &Service, id: &str, command: Command) -> ApiResult<Response> {
    let runs = svc.runs.read().expect("runs lock");
    let handle = runs
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run `{id}`")))?;
    if !handle.send(command) {
        return Err(ApiError::internal(format!(
            "run `{id}` is no longer running"
        )));
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": id }))).into_response())
}

async fn pause_run(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    control(&svc, &id, Command::Pause)
}

async fn resume_run(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    control(&svc, &id, Command::Resume)
}

async fn next_evaluation(
    State(svc): State<Arc<Service>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let evaluator = params
        .get("evaluator")
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "missing `evaluator` query parameter",
            )
        })?;
    let task = svc
        .queue
        .lock()
        .expect("queue lock")
        .claim(evaluator, Instant::now());
    Ok(match task {
        Some(t) => (StatusCode::OK, Json(t)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum Label {
    Realistic,
    Unrealistic,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    task_id: String,
    label: Label,
}

async fn submit_evaluation(
    State(svc): State<Arc<Service>>,
    Json(body): Json<Value>,
) -> ApiResult<Response> {
    let body: LabelBody = parse(body)?;
    let realistic = matches!(body.label, Label::Realistic);
    let (submitted, tuple_id) = {
        let mut queue = svc.queue.lock().expect("queue lock");
        let submitted = queue.submit(&body.task_id, realistic, Instant::now())?;
        let tuple_id = queue
            .task(&body.task_id)
            .map(|t| t.tuple_id.clone())
            .unwrap_or_default();
        (submitted, tuple_id)
    };
    let (received, needed, complete) = match submitted {
        Submitted::Recorded { received, needed } => (received, needed, false),
        Submitted::Complete(batch) => {
            let n = batch.labels.len();
            let runs = svc.runs.read().expect("runs lock");
            let delivered = runs.get(&batch.run_id).is_some_and(|h| {
                h.send(Command::Submit {
                    request_id: batch.tuple_id.clone(),
                    labels: batch.labels,
                })
            });
            if !delivered {
                tracing::warn!(run = %batch.run_id, tuple = %batch.tuple_id, "labels complete but the run is not attached");
            }
            (n, n, true)
        }
    };
    Ok(Json(json!({
        "task_id": body.task_id,
        "tuple_id": tuple_id,
        "state": "labeled",
        "received": received,
        "needed": needed,
        "complete": complete,
    }))
    .into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("pgm") => "image/x-portable-graymap",
        _ => "application/octet-stream",
    }
}

async fn tuple_payload(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let path = svc
        .queue
        .lock()
        .expect("queue lock")
        .payload(&id)
        .map(Path::to_path_buf)
        .or_else(|| {
            svc.datasets
                .read()
                .expect("datasets lock")
                .values()
                .find_map(|d| d.payloads.get(&id).cloned())
        })
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                format!("tuple `{id}` has no payload"),
            )
        })?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("payload of `{id}`: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_are_plain_names() {
        assert!(valid_id("run-0001"));
        assert!(valid_id("A_b-9"));
        assert!(!valid_id(""));
        assert!(!valid_id("../x"));
        assert!(!valid_id("a/b"));
        assert!(!valid_id(&"x".repeat(65)));
    }

    #[test]
    fn content_type_follows_extension() {
        assert_eq!(content_type(Path::new("a.PNG")), "image/png");
        assert_eq!(content_type(Path::new("a.jpeg")), "image/jpeg");
        assert_eq!(content_type(Path::new("m.pgm")), "image/x-portable-graymap");
        assert_eq!(content_type(Path::new("blob")), "application/octet-stream");
    }

    #[test]
    fn queue_errors_map_to_statuses() {
        let status = |e: QueueError| ApiError::from(e).status;
        assert_eq!(
            status(QueueError::UnknownTask("t".into())),
            StatusCode::NOT_FOUND
        );
        assert_eq!(
            status(QueueError::AlreadyLabeled("t".into())),
            StatusCode::CONFLICT
        );
        assert_eq!(status(QueueError::Expired("t".into())), StatusCode::GONE);
    }
}
