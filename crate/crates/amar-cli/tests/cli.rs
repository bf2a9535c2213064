//! Command-line surface tests: exit codes, error JSON, idempotent outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn amar_bin() -> &'static str {
    env!("CARGO_BIN_EXE_amar")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run_in(dir: &Path, args: &[&str]) -> (String, String, i32) {
    let output = Command::new(amar_bin())
        .args(args)
        .current_dir(dir)
        .env_remove("AMAR_API_KEY")
        .output()
        .expect("binary runs");
    (
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
        output.status.code().unwrap_or(-1),
    )
}

#[test]
fn help_lists_commands_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _, code) = run_in(dir.path(), &["--help"]);
    assert_eq!(code, 0);
    for command in ["ingest", "index", "plan", "ask", "bench", "evaluate", "stats", "construct-qa"] {
        assert!(out.contains(command), "help must mention {command}");
    }
    // every global flag shows up
    for flag in ["--config", "--seed", "--k-coarse", "--m-fine", "--lambda"] {
        assert!(out.contains(flag), "help must mention {flag}");
    }
}

#[test]
fn unknown_flag_exits_one_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, err, code) = run_in(dir.path(), &["stats", "x.jsonl", "--frobnicate"]);
    assert_eq!(code, 1);
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["code"], 1);
    assert_eq!(parsed["category"], "config");
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, err, code) = run_in(dir.path(), &["stats", "missing.jsonl"]);
    assert_eq!(code, 2);
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["category"], "io");
}

#[test]
fn explicit_missing_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, code) = run_in(
        dir.path(),
        &[
            "stats",
            fixture("artcot_qa.jsonl").to_str().unwrap(),
            "--config",
            "nope.json",
        ],
    );
    assert_eq!(code, 2);
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("amar.json"), "{\"surprise\": 1}").unwrap();
    let (_, err, code) = run_in(
        dir.path(),
        &["stats", fixture("artcot_qa.jsonl").to_str().unwrap()],
    );
    assert_eq!(code, 1);
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["category"], "config");
}

#[test]
fn unknown_mode_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let (_, err, code) = run_in(
        dir.path(),
        &[
            "ask",
            fixture("artwork.json").to_str().unwrap(),
            "question",
            "--mode",
            "telepathy",
        ],
    );
    assert_eq!(code, 4);
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["category"], "validation");
}

#[test]
fn remote_backend_without_key_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "seed": 1,
        "backends": {
            "planner": { "kind": "mock", "model_id": "mock-planner" },
            "generator": {
                "kind": "remote",
                "model_id": "remote-model",
                "endpoint": "http://127.0.0.1:1/unreachable"
            },
            "embedder": { "kind": "mock", "model_id": "mock-embedder" },
            "scorer": { "kind": "mock", "model_id": "mock-scorer" },
            "judge": { "kind": "mock", "model_id": "mock-judge" }
        }
    });
    std::fs::write(
        dir.path().join("amar.json"),
        serde_json::to_string_pretty(&config).unwrap(),
    )
    .unwrap();
    let (_, err, code) = run_in(
        dir.path(),
        &[
            "ask",
            fixture("artwork.json").to_str().unwrap(),
            "why?",
            "--mode",
            "mllm-cot",
        ],
    );
    assert_eq!(code, 3, "stderr: {err}");
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["category"], "backend");
}

#[test]
fn ingest_twice_writes_identical_graph_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus");
    let (_, err, code) = run_in(
        dir.path(),
        &["ingest", corpus.to_str().unwrap(), "a.jsonl"],
    );
    assert_eq!(code, 0, "{err}");
    let (_, _, code) = run_in(
        dir.path(),
        &["ingest", corpus.to_str().unwrap(), "b.jsonl"],
    );
    assert_eq!(code, 0);
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b);
    // a different seed produces a different graph
    let (_, _, code) = run_in(
        dir.path(),
        &["ingest", corpus.to_str().unwrap(), "c.jsonl", "--seed", "7"],
    );
    assert_eq!(code, 0);
    let c = std::fs::read(dir.path().join("c.jsonl")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn index_twice_writes_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus");
    run_in(dir.path(), &["ingest", corpus.to_str().unwrap(), "graph.jsonl"]);
    let (_, _, code) = run_in(dir.path(), &["index", "graph.jsonl", "i1.jsonl"]);
    assert_eq!(code, 0);
    let (_, _, code) = run_in(dir.path(), &["index", "graph.jsonl", "i2.jsonl"]);
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read(dir.path().join("i1.jsonl")).unwrap(),
        std::fs::read(dir.path().join("i2.jsonl")).unwrap()
    );
}

#[test]
fn plan_command_prints_plan_and_intent() {
    let dir = tempfile::tempdir().unwrap();
    let (out, err, code) = run_in(
        dir.path(),
        &[
            "plan",
            fixture("artwork.json").to_str().unwrap(),
            "What does the gleaning custom signify?",
        ],
    );
    assert_eq!(code, 0, "{err}");
    let parsed: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let steps = parsed["plan"]["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 4);
    assert_eq!(steps[0]["step"], 1);
    assert!(steps[0]["evidence"].is_string());
    let intent_text = parsed["intent"]["text"].as_str().unwrap();
    assert!(intent_text.starts_with("The Gleaners at Dusk; Henri Belleau; step 1 ["));
    // text-only planning also works
    let (_, _, code) = run_in(
        dir.path(),
        &[
            "plan",
            fixture("artwork.json").to_str().unwrap(),
            "What does the gleaning custom signify?",
            "--text-only",
        ],
    );
    assert_eq!(code, 0);
}

#[test]
fn construct_qa_filters_and_builds_items() {
    let dir = tempfile::tempdir().unwrap();
    let rich = serde_json::json!({
        "painting_id": "p-rich",
        "image_ref": "img/p-rich.jpg",
        "metadata": {
            "title": "T", "author": "A", "technique": "Oil",
            "timeframe": "1800", "tags": "x"
        },
        "description": format!(
            "CONTENT: the depiction shows a scene rich in symbolism. {} CONTEXT: its meaning.",
            vec!["w"; 120].join(" ")
        ),
    });
    let poor = serde_json::json!({
        "painting_id": "p-poor",
        "image_ref": "img/p-poor.jpg",
        "metadata": { "title": "T" },
        "description": "too short",
    });
    let records = dir.path().join("records.jsonl");
    std::fs::write(&records, format!("{rich}\n{poor}\n")).unwrap();
    let (out, err, code) = run_in(
        dir.path(),
        &[
            "construct-qa",
            records.to_str().unwrap(),
            "dataset.jsonl",
        ],
    );
    assert_eq!(code, 0, "{err}");
    let summary: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary["input"], 2);
    assert_eq!(summary["filtered_out"], 1);
    assert_eq!(summary["constructed"], 1);
    // the constructed dataset is loadable and valid
    let (out, _, code) = run_in(dir.path(), &["stats", "dataset.jsonl"]);
    assert_eq!(code, 0);
    let stats: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(stats["n_questions"], 1);
}

#[test]
fn bench_manifest_lists_every_item() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus");
    run_in(dir.path(), &["ingest", corpus.to_str().unwrap(), "graph.jsonl"]);
    run_in(dir.path(), &["index", "graph.jsonl", "index.jsonl"]);
    let (out, err, code) = run_in(
        dir.path(),
        &[
            "bench",
            fixture("artcot_qa.jsonl").to_str().unwrap(),
            "--modes",
            "static-retrieval",
            "--parallelism",
            "3",
        ],
    );
    assert_eq!(code, 0, "{err}");
    let summary: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary["records"], 5);
    assert_eq!(summary["failures"], 0);
    let manifest = std::fs::read_to_string(dir.path().join("runs/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    for line in manifest.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["status"], "ok");
        assert_eq!(entry["mode"], "static-retrieval");
    }
}
