use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn covrepair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covrepair"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("COVREPAIR_GENERATOR_URL")
        .env_remove("COVREPAIR_EMBEDDER_URL")
        .output()
        .unwrap()
}

fn json_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn feret_fixture(dir: &Path) -> std::path::PathBuf {
    let ds = dir.join("feret");
    let out = covrepair(&[
        "gen-fixture",
        "--kind",
        "feret",
        "--seed",
        "0",
        "--out",
        s(&ds),
    ]);
    let v = json_of(&out);
    assert!(v["tuples"].as_u64().unwrap() > 0);
    assert!(ds.join("schema.json").exists());
    assert!(ds.join("tuples.jsonl").exists());
    assert!(ds.join("run-config.json").exists());
    ds
}

#[test]
fn detect_mups_and_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = feret_fixture(tmp.path());

    let mups = json_of(&covrepair(&[
        "detect-mups",
        "--dataset",
        s(&ds),
        "--tau",
        "100",
    ]));
    assert_eq!(mups["tau"], 100);
    let rows = mups["mups"].as_array().unwrap();
    assert!(!rows.is_empty());
    let level = mups["min_level"].as_u64().unwrap();
    let mut eta = 0;
    for r in rows {
        assert_eq!(r["level"].as_u64().unwrap(), level);
        assert_eq!(
            r["count"].as_u64().unwrap() + r["gap"].as_u64().unwrap(),
            100
        );
        eta += r["gap"].as_u64().unwrap();
    }

    let plan_path = tmp.path().join("plan.json");
    let out = covrepair(&[
        "plan",
        "--dataset",
        s(&ds),
        "--tau",
        "100",
        "--solver",
        "greedy",
        "--out",
        s(&plan_path),
    ]);
    assert!(out.status.success());
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    assert_eq!(plan["solver"], "greedy");
    assert_eq!(plan["eta"], eta);
    let total = plan["total"].as_u64().unwrap();
    assert!(total <= eta);
    let summed: u64 = plan["combinations"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(summed, total);

    let random = json_of(&covrepair(&[
        "plan",
        "--dataset",
        s(&ds),
        "--tau",
        "100",
        "--solver",
        "random",
        "--seed",
        "3",
    ]));
    assert_eq!(random["seed"], 3);
    assert!(random["total"].as_u64().unwrap() >= total);

    let bad = covrepair(&[
        "plan",
        "--dataset",
        s(&ds),
        "--tau",
        "100",
        "--solver",
        "magic",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn repair_then_report_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = feret_fixture(tmp.path());
    let run = tmp.path().join("run");
    let config = ds.join("run-config.json");
    let repaired = json_of(&covrepair(&[
        "repair",
        "--dataset",
        s(&ds),
        "--config",
        s(&config),
        "--run-dir",
        s(&run),
    ]));
    assert_eq!(repaired["phase"], "done");
    assert_eq!(repaired["accepted"], 231);
    assert_eq!(repaired["conservation_holds"], true);
    for name in [
        "state.json",
        "events.jsonl",
        "accepted.jsonl",
        "report.json",
        "config.json",
    ] {
        assert!(run.join(name).exists(), "{name} missing");
    }

    let report = json_of(&covrepair(&["report", "--run-dir", s(&run)]));
    assert_eq!(report, repaired);

    let state = std::fs::read(run.join("state.json")).unwrap();
    let again = json_of(&covrepair(&["repair", "--run-dir", s(&run)]));
    assert_eq!(again["accepted"], 231);
    assert_eq!(again["queries"], repaired["queries"]);
    assert_eq!(std::fs::read(run.join("state.json")).unwrap(), state);
}

#[test]
fn run_flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = feret_fixture(tmp.path());
    let run = tmp.path().join("run");
    let out = covrepair(&[
        "repair",
        "--dataset",
        s(&ds),
        "--config",
        s(&ds.join("run-config.json")),
        "--run-dir",
        s(&run),
        "--tau",
        "30",
        "--evaluator",
        "human",
        "--n-eval",
        "7",
        "--unit-cost",
        "0.02",
        "--strategy",
        "random-guide",
        "--mask-level",
        "imprecise",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["phase"], "awaiting_evaluations");
    assert_eq!(report["pending_evaluation"], 1);
    assert_eq!(report["strategy"], "random-guide");
    let cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["tau"], 30);
    assert_eq!(cfg["n_eval"], 7);
    assert_eq!(cfg["mask_level"], "imprecise");
    assert_eq!(cfg["evaluator"], "human");
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = feret_fixture(tmp.path());

    let live = covrepair(&[
        "repair",
        "--dataset",
        s(&ds),
        "--run-dir",
        s(&tmp.path().join("live")),
        "--backend",
        "live",
    ]);
    assert_eq!(live.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&live.stderr).contains("COVREPAIR_GENERATOR_URL"));

    let missing = covrepair(&["report", "--run-dir", s(&tmp.path().join("nothing"))]);
    assert_eq!(missing.status.code(), Some(1));

    let no_dataset = covrepair(&["repair", "--run-dir", s(&tmp.path().join("fresh"))]);
    assert_eq!(no_dataset.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_dataset.stderr).contains("--dataset"));

    let bad_kernel = covrepair(&[
        "repair",
        "--dataset",
        s(&ds),
        "--run-dir",
        s(&tmp.path().join("k")),
        "--kernel",
        "cubic",
    ]);
    assert!(!bad_kernel.status.success());
}

#[test]
fn other_fixtures_generate() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["utk", "guide"] {
        let out_dir = tmp.path().join(kind);
        let v = json_of(&covrepair(&[
            "gen-fixture",
            "--kind",
            kind,
            "--seed",
            "1",
            "--n",
            "300",
            "--out",
            s(&out_dir),
        ]));
        assert_eq!(v["tuples"], 300);
        assert_eq!(out_dir.join("run-config.json").exists(), kind == "guide");
    }
}

#[test]
fn serve_answers_http() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_covrepair"))
        .args([
            "serve",
            "--addr",
            "127.0.0.1:0",
            "--data-dir",
            s(&tmp.path().join("data")),
        ])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    let resp = reqwest::blocking::get(format!("{base}/runs"));
    child.kill().unwrap();
    child.wait().unwrap();
    let resp = resp.unwrap();
    assert_eq!(resp.status(), reqwest::StatusCode::OK);
    assert_eq!(resp.json::<Value>().unwrap(), Value::Array(vec![]));
    assert!(tmp.path().join("data/datasets").is_dir());
}
