use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use covrepair::fixtures::{feret_config, feretdb};
use covrepair::orchestrator::{EvaluatorMode, RunConfig};
use covrepair::patterns::Dataset;
use covrepair_service::api::Service;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

const SEED: u64 = 5;

struct Server {
    base: String,
    client: Client,
    service: Arc<Service>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl Server {
    async fn start(data_dir: &Path) -> Self {
        Self::start_with_expiry(data_dir, Duration::from_secs(600)).await
    }

    async fn start_with_expiry(data_dir: &Path, expiry: Duration) -> Self {
        let service = Service::open(data_dir, expiry).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = service.router();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
        Self {
            base: format!("http://{addr}"),
            client: Client::new(),
            service,
            stop: Some(tx),
            task: Some(task),
        }
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.take().unwrap().await.unwrap();
        let service = self.service.clone();
        tokio::task::spawn_blocking(move || service.shutdown())
            .await
            .unwrap();
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    async fn ingest(&self, ds: &Dataset) -> String {
        let (status, body) = self
            .post(
                "/datasets",
                &json!({ "schema": ds.schema, "tuples": ds.tuples }),
            )
            .await;
        assert!(status.is_success(), "{status} {body}");
        body["dataset_id"].as_str().unwrap().to_string()
    }

    async fn start_run(&self, dataset_id: &str, config: &RunConfig, run_id: &str) {
        let (status, body) = self
            .post(
                "/runs",
                &json!({ "dataset_id": dataset_id, "config": config, "run_id": run_id }),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        assert_eq!(body["run_id"], run_id);
    }

    /// Poll the run status until `done` holds.
    async fn wait_for(&self, run_id: &str, what: &str, done: impl Fn(&Value) -> bool) -> Value {
        let deadline = Instant::now() + Duration::from_secs(300);
        loop {
            let (status, body) = self.get(&format!("/runs/{run_id}")).await;
            assert_eq!(status, StatusCode::OK);
            if done(&body) {
                return body;
            }
            assert!(body["error"].is_null(), "run failed: {body}");
            assert!(
                Instant::now() < deadline,
                "timed out waiting for {what}: {body}"
            );
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

fn human_config() -> RunConfig {
    RunConfig {
        tau: 30,
        evaluator: EvaluatorMode::Human,
        ..feret_config(SEED)
    }
}

fn awaiting(v: &Value) -> bool {
    v["awaiting"].is_string()
}

async fn label(server: &Server, task_id: &str, label: &str) -> (StatusCode, Value) {
    server
        .post(
            "/evaluations",
            &json!({ "task_id": task_id, "label": label }),
        )
        .await
}

#[tokio::test(flavor = "multi_thread")]
async fn dataset_ingestion_validates_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let ds = feretdb(SEED);
    let first = server.ingest(&ds).await;
    assert!(first.starts_with("ds-"));
    let (status, body) = server
        .post(
            "/datasets",
            &json!({ "schema": ds.schema, "tuples": ds.tuples }),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["dataset_id"], first.as_str());

    let mut bad = ds.tuples.clone();
    bad[0].values[0] = 99;
    let (status, body) = server
        .post("/datasets", &json!({ "schema": ds.schema, "tuples": bad }))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string());

    let (status, _) = server.post("/datasets", &json!({ "tuples": [] })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn run_creation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(SEED)).await;

    let (status, _) = server
        .post("/runs", &json!({ "dataset_id": "ds-missing" }))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad = RunConfig {
        nu: 2.0,
        ..human_config()
    };
    let (status, body) = server
        .post(
            "/runs",
            &json!({ "dataset_id": id, "config": bad, "run_id": "bad" }),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(!tmp.path().join("runs/bad").exists());

    let (status, _) = server
        .post(
            "/runs",
            &json!({ "dataset_id": id, "config": { "no_such_field": 1 } }),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = server
        .post("/runs", &json!({ "dataset_id": id, "run_id": "../escape" }))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    server.start_run(&id, &human_config(), "dup").await;
    let (status, _) = server
        .post(
            "/runs",
            &json!({ "dataset_id": id, "config": human_config(), "run_id": "dup" }),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = server.get("/runs/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, list) = server.get("/runs").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn mock_feret_run_reports_231_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(0)).await;
    server.start_run(&id, &feret_config(0), "feret").await;
    let status = server
        .wait_for("feret", "completion", |v| v["phase"] == "done")
        .await;
    assert_eq!(status["accepted"], 231);
    assert_eq!(status["planned"], 231);
    assert_eq!(status["gaps_remaining"], 0);
    assert_eq!(status["dataset_id"], id.as_str());
    let queries = status["queries"].as_u64().unwrap();
    let rejected = [
        "distribution_rejected",
        "quality_rejected",
        "backend_errors",
    ]
    .iter()
    .map(|k| status[k].as_u64().unwrap())
    .sum::<u64>();
    assert_eq!(queries, 231 + rejected);
    assert!(status["cost_display"].as_str().unwrap().starts_with('$'));
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn five_labels_score_the_waiting_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(SEED)).await;
    server.start_run(&id, &human_config(), "human").await;
    let status = server.wait_for("human", "a candidate", awaiting).await;
    let tuple = status["awaiting"].as_str().unwrap().to_string();
    assert_eq!(status["phase"], "awaiting_evaluations");
    assert_eq!(status["scored"], 0);

    let (code, _) = server.get("/evaluations/next").await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let mut tasks = Vec::new();
    for e in ["e1", "e2", "e3", "e4"] {
        let (code, task) = server
            .get(&format!("/evaluations/next?evaluator={e}"))
            .await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(task["tuple_id"], tuple.as_str());
        assert_eq!(task["run_id"], "human");
        assert_eq!(task["state"], "pending");
        tasks.push(task["task_id"].as_str().unwrap().to_string());
    }
    for (i, t) in tasks.iter().enumerate() {
        let (code, body) = label(&server, t, "realistic").await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(body["received"], i + 1);
        assert_eq!(body["complete"], false);
    }

    // A second submission for a task conflicts and leaves the batch alone.
    let (code, _) = label(&server, &tasks[0], "unrealistic").await;
    assert_eq!(code, StatusCode::CONFLICT);
    let (code, _) = label(&server, "task-unknown", "realistic").await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _) = label(&server, &tasks[0], "maybe").await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);

    // e1 already labeled the only waiting tuple.
    let (code, _) = server.get("/evaluations/next?evaluator=e1").await;
    assert_eq!(code, StatusCode::NO_CONTENT);
    assert_eq!(server.get("/runs/human").await.1["scored"], 0);

    let (code, task) = server.get("/evaluations/next?evaluator=e5").await;
    assert_eq!(code, StatusCode::OK);
    let (code, body) = label(&server, task["task_id"].as_str().unwrap(), "realistic").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["complete"], true);
    assert_eq!(body["received"], 5);

    let status = server
        .wait_for("human", "the batch to be scored", |v| {
            v["scored"] == 1 && v["awaiting"] != tuple.as_str()
        })
        .await;
    assert_eq!(status["quality_gate"]["evaluated"], 1);

    // The next candidate is a different tuple, which e1 may now label.
    let next = server
        .wait_for("human", "the next candidate", awaiting)
        .await;
    let (code, task) = server.get("/evaluations/next?evaluator=e1").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(task["tuple_id"], next["awaiting"]);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn no_evaluator_sees_a_tuple_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(SEED)).await;
    let mut waiting = Vec::new();
    for run in ["r1", "r2", "r3"] {
        server.start_run(&id, &human_config(), run).await;
        let s = server.wait_for(run, "a candidate", awaiting).await;
        waiting.push(s["awaiting"].as_str().unwrap().to_string());
    }
    let mut seen = Vec::new();
    loop {
        let (code, task) = server.get("/evaluations/next?evaluator=solo").await;
        if code == StatusCode::NO_CONTENT {
            break;
        }
        assert_eq!(code, StatusCode::OK);
        seen.push(task["tuple_id"].as_str().unwrap().to_string());
        let (code, _) = label(&server, task["task_id"].as_str().unwrap(), "realistic").await;
        assert_eq!(code, StatusCode::OK);
        assert!(seen.len() <= waiting.len(), "repeated assignment: {seen:?}");
    }
    seen.sort();
    waiting.sort();
    assert_eq!(seen, waiting);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn expired_claims_return_to_the_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start_with_expiry(tmp.path(), Duration::from_millis(200)).await;
    let id = server.ingest(&feretdb(SEED)).await;
    server.start_run(&id, &human_config(), "slow").await;
    server.wait_for("slow", "a candidate", awaiting).await;
    let mut claimed = Vec::new();
    for e in ["a", "b", "c", "d", "e"] {
        let (code, task) = server
            .get(&format!("/evaluations/next?evaluator={e}"))
            .await;
        assert_eq!(code, StatusCode::OK);
        claimed.push(task["task_id"].as_str().unwrap().to_string());
    }
    let (code, _) = server.get("/evaluations/next?evaluator=f").await;
    assert_eq!(code, StatusCode::NO_CONTENT);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (code, _) = server.get("/evaluations/next?evaluator=f").await;
    assert_eq!(code, StatusCode::OK);
    let (code, _) = label(&server, &claimed[0], "realistic").await;
    assert_eq!(code, StatusCode::GONE);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn payloads_resolve_against_the_base_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let media = tmp.path().join("media");
    std::fs::create_dir_all(&media).unwrap();
    std::fs::write(media.join("face0.png"), b"\x89PNG fake").unwrap();
    let server = Server::start(&tmp.path().join("data")).await;
    let mut ds = feretdb(SEED);
    ds.tuples[0].payload_path = Some("face0.png".into());
    let first = ds.tuples[0].id.clone();
    let second = ds.tuples[1].id.clone();
    let (status, _) = server
        .post(
            "/datasets",
            &json!({ "schema": ds.schema, "tuples": ds.tuples, "base_dir": media }),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);

    let resp = server
        .client
        .get(format!("{}/tuples/{first}/payload", server.base))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    assert_eq!(resp.bytes().await.unwrap().as_ref(), b"\x89PNG fake");

    let (status, body) = server.get(&format!("/tuples/{second}/payload")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn pause_holds_the_run_and_resume_finishes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(SEED)).await;
    let config = RunConfig {
        tau: 30,
        ..feret_config(SEED)
    };
    server.start_run(&id, &config, "p").await;
    let (code, _) = server.post("/runs/p/pause", &json!({})).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let held = server
        .wait_for("p", "the pause", |v| v["paused"] == true)
        .await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let later = server.get("/runs/p").await.1;
    assert_eq!(held["queries"], later["queries"]);

    let (code, _) = server.post("/runs/p/resume", &json!({})).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let done = server
        .wait_for("p", "completion", |v| v["phase"] == "done")
        .await;
    assert_eq!(done["paused"], false);
    assert_eq!(done["gaps_remaining"], 0);
    let (code, _) = server.post("/runs/nope/pause", &json!({})).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_reattaches_runs_and_waiting_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path()).await;
    let id = server.ingest(&feretdb(SEED)).await;
    server.start_run(&id, &human_config(), "keep").await;
    let before = server.wait_for("keep", "a candidate", awaiting).await;
    server.stop().await;

    let server = Server::start(tmp.path()).await;
    let after = server
        .wait_for("keep", "the re-attached run", awaiting)
        .await;
    assert_eq!(after["awaiting"], before["awaiting"]);
    assert_eq!(after["queries"], before["queries"]);
    assert_eq!(after["dataset_id"], id.as_str());
    let (code, task) = server.get("/evaluations/next?evaluator=e1").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(task["tuple_id"], before["awaiting"]);
    assert_eq!(server.ingest(&feretdb(SEED)).await, id);
    server.stop().await;
}
