use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use covrepair::fixtures::{feretdb, FERET_DIM};
use covrepair::generator_client::{
    build_prompt, CostLedger, GenerationRequest, Generator, GeneratorError, LiveConfig,
    LiveGenerator, Money, RetryPolicy,
};
use covrepair::guide_selection::{Guide, MaskLevel, Raster, Strategy};
use covrepair::patterns::{Dataset, Pattern};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// HTTP server answering each path from its own script of `(status, body)` replies.
struct Script {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Script {
    fn start(replies: Vec<(&str, u16, Value)>) -> Script {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let mut queues: HashMap<String, VecDeque<(u16, Value)>> = HashMap::new();
        for (path, status, body) in replies {
            queues
                .entry(path.to_string())
                .or_default()
                .push_back((status, body));
        }
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
                let (mut length, mut auth) = (0, None);
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (name, value) = h.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => length = value.trim().parse().unwrap(),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(Seen {
                    path: path.clone(),
                    auth,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                });
                let (status, reply) = queues
                    .get_mut(&path)
                    .and_then(VecDeque::pop_front)
                    .unwrap_or((500, json!({"error": "script exhausted"})));
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        Script { url, seen }
    }

    fn requests(&self, path: &str) -> Vec<Seen> {
        self.seen
            .lock()
            .unwrap()
            .iter()
            .filter(|s| s.path == path)
            .cloned()
            .collect()
    }
}

fn config(generator_url: String, embedder_url: String, payload_dir: &Path) -> LiveConfig {
    let retry = RetryPolicy {
        attempts: 3,
        base_delay_ms: 1,
    };
    LiveConfig {
        generator_url,
        embedder_url,
        api_key: Some("secret".into()),
        generator_retry: retry,
        embedder_retry: retry,
        timeout: Duration::from_secs(10),
        payload_dir: payload_dir.to_path_buf(),
    }
}

fn client(script: &Script, payload_dir: &Path, ds: &Dataset, base: Option<&Path>) -> LiveGenerator {
    let cfg = config(
        format!("{}/gen", script.url),
        format!("{}/embed", script.url),
        payload_dir,
    );
    LiveGenerator::new(cfg, ds, base).unwrap()
}

fn unguided_request(ds: &Dataset) -> GenerationRequest {
    let target = Pattern::combination(&[4, 1]);
    GenerationRequest {
        request_id: "run-000003".into(),
        sequence: 3,
        prompt: build_prompt(&target, &ds.schema).unwrap(),
        guide: Guide::none(&target),
        target,
    }
}

fn image_reply() -> Value {
    json!({ "image": B64.encode(b"generated bytes") })
}

fn embedding_reply(dim: usize) -> Value {
    json!({ "embedding": vec![0.25; dim] })
}

#[test]
fn successful_call_stores_payload_and_bills_once() {
    let ds = feretdb(0);
    let script = Script::start(vec![
        ("/gen", 200, image_reply()),
        ("/embed", 200, embedding_reply(FERET_DIM)),
    ]);
    let tmp = tempfile::tempdir().unwrap();
    let mut live = client(&script, tmp.path(), &ds, None);
    let mut ledger = CostLedger::new(Money::from_ratio(2, 100));
    let c = live.generate(&unguided_request(&ds), &mut ledger).unwrap();

    assert_eq!(ledger.queries, 1);
    assert_eq!(c.embedding, vec![0.25; FERET_DIM]);
    assert_eq!(
        std::fs::read(c.payload_path.unwrap()).unwrap(),
        b"generated bytes"
    );
    let gen = script.requests("/gen");
    assert_eq!(gen.len(), 1);
    assert_eq!(gen[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(
        gen[0].body["prompt"],
        "A realistic frontal photo of a MiddleEastern Female person"
    );
    assert!(gen[0].body.get("image").is_none());
    assert_eq!(
        script.requests("/embed")[0].body["request_id"],
        "run-000003"
    );
}

#[test]
fn guide_image_and_mask_are_sent() {
    let mut ds = feretdb(0);
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("guide.png"), b"guide image").unwrap();
    ds.tuples[0].payload_path = Some("guide.png".into());
    let guide_id = ds.tuples[0].id.clone();
    let script = Script::start(vec![
        ("/gen", 200, image_reply()),
        ("/embed", 200, embedding_reply(FERET_DIM)),
    ]);
    let mut live = client(&script, &tmp.path().join("payloads"), &ds, Some(tmp.path()));

    let mut mask = Raster::new(4, 3);
    mask.set(1, 1, true);
    let mut request = unguided_request(&ds);
    request.guide = Guide {
        strategy: Strategy::RandomGuide,
        tuple_id: Some(guide_id),
        source_combination: Pattern::combination(&ds.tuples[0].values),
        mask_level: Some(MaskLevel::Accurate),
        arm: None,
        mask_cells: Some(1),
        mask: Some(mask.clone()),
    };
    live.generate(&request, &mut CostLedger::new(Money::ZERO))
        .unwrap();
    let body = &script.requests("/gen")[0].body;
    assert_eq!(
        B64.decode(body["image"].as_str().unwrap()).unwrap(),
        b"guide image"
    );
    let sent = Raster::from_pgm(&B64.decode(body["mask"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(sent, mask);
}

#[test]
fn server_errors_are_retried_within_one_billed_query() {
    let ds = feretdb(0);
    let script = Script::start(vec![
        ("/gen", 503, json!({})),
        ("/gen", 200, image_reply()),
        ("/embed", 500, json!({})),
        ("/embed", 200, embedding_reply(FERET_DIM)),
    ]);
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = CostLedger::new(Money::ZERO);
    client(&script, tmp.path(), &ds, None)
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap();
    assert_eq!(ledger.queries, 1);
    assert_eq!(script.requests("/gen").len(), 2);
    assert_eq!(script.requests("/embed").len(), 2);
}

#[test]
fn persistent_server_errors_are_billed_and_suspend() {
    let ds = feretdb(0);
    let script = Script::start(vec![]);
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = client(&script, tmp.path(), &ds, None)
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap_err();
    assert!(
        matches!(
            err,
            GeneratorError::BackendUnavailable { reached: true, .. }
        ),
        "{err:?}"
    );
    assert!(err.suspends_run());
    assert_eq!(ledger.queries, 1);
    assert_eq!(script.requests("/gen").len(), 3);
}

#[test]
fn auth_failure_is_billed_and_not_retried() {
    let ds = feretdb(0);
    let script = Script::start(vec![("/gen", 401, json!({"error": "bad key"}))]);
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = client(&script, tmp.path(), &ds, None)
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap_err();
    assert_eq!(err, GeneratorError::AuthFailure);
    assert!(err.suspends_run());
    assert_eq!(ledger.queries, 1);
    assert_eq!(script.requests("/gen").len(), 1);
}

#[test]
fn refused_content_is_billed_and_not_retried() {
    let ds = feretdb(0);
    let script = Script::start(vec![("/gen", 400, json!({"error": "policy"}))]);
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = client(&script, tmp.path(), &ds, None)
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap_err();
    assert!(matches!(err, GeneratorError::ContentRejected(_)), "{err:?}");
    assert!(!err.suspends_run());
    assert_eq!(ledger.queries, 1);
    assert_eq!(script.requests("/gen").len(), 1);
}

#[test]
fn unreachable_backend_is_not_billed() {
    let ds = feretdb(0);
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        format!("http://127.0.0.1:{port}/gen"),
        format!("http://127.0.0.1:{port}/embed"),
        tmp.path(),
    );
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = LiveGenerator::new(cfg, &ds, None)
        .unwrap()
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap_err();
    assert!(
        matches!(
            err,
            GeneratorError::BackendUnavailable { reached: false, .. }
        ),
        "{err:?}"
    );
    assert!(err.suspends_run());
    assert_eq!(ledger.queries, 0);
}

#[test]
fn wrong_embedding_dimension_is_rejected_but_billed() {
    let ds = feretdb(0);
    let script = Script::start(vec![
        ("/gen", 200, image_reply()),
        ("/embed", 200, embedding_reply(FERET_DIM + 1)),
    ]);
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = client(&script, tmp.path(), &ds, None)
        .generate(&unguided_request(&ds), &mut ledger)
        .unwrap_err();
    assert!(
        matches!(err, GeneratorError::EmbeddingUnavailable(_)),
        "{err:?}"
    );
    assert!(err.reached_backend());
    assert_eq!(ledger.queries, 1);
}

#[test]
fn empty_prompt_never_reaches_the_backend() {
    let ds = feretdb(0);
    let script = Script::start(vec![]);
    let tmp = tempfile::tempdir().unwrap();
    let mut request = unguided_request(&ds);
    request.prompt = "  ".into();
    let mut ledger = CostLedger::new(Money::ZERO);
    let err = client(&script, tmp.path(), &ds, None)
        .generate(&request, &mut ledger)
        .unwrap_err();
    assert_eq!(err, GeneratorError::EmptyPrompt);
    assert_eq!(ledger.queries, 0);
    assert!(script.requests("/gen").is_empty());
}
