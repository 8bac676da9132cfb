mod common;

use std::fs;

use serde_json::Value;

use common::*;
use seedforge::exit;

fn batches(n: usize) -> Vec<String> {
    (0..n)
        .map(|b| reply_line(&Value::Array(valid_items(&b.to_string(), 5)).to_string(), 200, 800))
        .collect()
}

#[test]
fn create_writes_k_records() {
    let ws = Workspace::new(&Settings::default(), &batches(2));
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));

    let records = ws.lines("out/dataset.jsonl");
    assert_eq!(records.len(), 10);
    assert_eq!(records[0]["meta"]["iteration"], 1);
    assert!(ws.read("out/rejects.jsonl").is_empty());
    let report = ws.report();
    assert_eq!(report["status"], "complete");
    assert_eq!(report["records_written"], 10);
    assert_eq!(report["ledger"]["total_tokens"], 2000);
    assert_eq!(report["drift_available"], false);
    assert_eq!(ws.read("out/report.drift.csv").lines().count(), 3);
    assert!(stderr(&out).contains("10 records in 2 iteration(s)"));
}

#[test]
fn overrides_apply() {
    let ws = Workspace::new(&Settings::default(), &batches(4));
    let out = ws.create(&["--k", "15", "--strategy", "tree", "--rng-seed", "4"]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));
    assert_eq!(ws.lines("out/dataset.jsonl").len(), 15);
    assert_eq!(ws.report()["strategy"], "tree");
    assert_eq!(code(&ws.create(&["--strategy", "sideways"])), 2);
}

#[test]
fn similar_without_embedder_is_a_config_error() {
    // no script file exists: the config must be rejected before any backend is built
    let settings = Settings {
        strategy: "similar",
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &[]);
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::CONFIG);
    assert!(stderr(&out).contains("embed_url"));
    assert!(!ws.path("out").exists());

    let ws = Workspace::new(&Settings::default(), &batches(2));
    let out = ws.create(&["--strategy", "contrastive"]);
    assert_eq!(code(&out), exit::CONFIG);
}

#[test]
fn strict_config_and_seed_errors() {
    let settings = Settings {
        extra: "\n[surprise]\nkey = 1\n",
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &batches(2));
    assert_eq!(code(&ws.create(&[])), exit::CONFIG);

    let ws = Workspace::new(&Settings::default(), &batches(2));
    let config = ws.read("config.toml").replace("label_mode = \"fixed\"", "label_mode = \"fixed\"\nfixed_options = [\"true\", \"false\"]");
    fs::write(ws.config(), config).unwrap();
    assert_eq!(code(&ws.create(&[])), exit::SEED);

    let ws = Workspace::new(&Settings::default(), &batches(2));
    fs::write(ws.path("seed.json"), r#"{"question": "q?", "options": ["yes"], "answer": "yes"}"#).unwrap();
    assert_eq!(code(&ws.create(&[])), exit::SEED);
}

#[test]
fn reruns_are_byte_identical() {
    let settings = Settings {
        target_count: 12,
        strategy: "similar",
        embed_url: Some("stub:16"),
        ..Settings::default()
    };
    let a = Workspace::new(&settings, &batches(3));
    let b = Workspace::new(&settings, &batches(3));
    assert_eq!(code(&a.create(&[])), exit::OK);
    assert_eq!(code(&b.create(&[])), exit::OK);
    for name in ["out/dataset.jsonl", "out/report.json", "out/rejects.jsonl", "out/report.drift.csv"] {
        assert_eq!(fs::read(a.path(name)).unwrap(), fs::read(b.path(name)).unwrap(), "{name}");
    }
    // rerunning in place overwrites rather than appends
    assert_eq!(code(&a.create(&[])), exit::OK);
    assert_eq!(a.read("out/dataset.jsonl"), b.read("out/dataset.jsonl"));
}

#[test]
fn dry_run_prints_request_without_backend() {
    let ws = Workspace::new(&Settings::default(), &[]);
    let out = ws.create(&["--dry-run"]);
    assert_eq!(code(&out), exit::OK);
    let request: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(request["model"], "gpt-3.5-turbo");
    assert_eq!(request["messages"][0]["role"], "system");
    assert!(request["messages"][0]["content"].as_str().unwrap().contains("same options"));
    assert!(request["messages"][1]["content"].as_str().unwrap().starts_with("{\n  \"options\""));
    assert!(!ws.path("out").exists());
}

#[test]
fn budget_exceeded_exit_code_and_partial_output() {
    let script: Vec<String> = (0..5)
        .map(|b| reply_line(&Value::Array(valid_items(&b.to_string(), 5)).to_string(), 500, 1500))
        .collect();
    let settings = Settings {
        target_count: 25,
        budget_cap: Some(0.01),
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &script);
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::BUDGET_EXCEEDED);
    assert_eq!(ws.lines("out/dataset.jsonl").len(), 10);
    let report = ws.report();
    assert_eq!(report["status"], "budget_exceeded");
    assert_eq!(report["ledger"]["calls"], 2);
}

#[test]
fn attempts_exhausted_exit_code() {
    let script = vec![reply_line("no json here", 1, 1); 3];
    let settings = Settings {
        max_attempts: Some(3),
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &script);
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::ATTEMPTS_EXHAUSTED);
    assert_eq!(ws.report()["rejections"]["malformed"], 3);
    assert_eq!(ws.lines("out/rejects.jsonl").len(), 3);
}

#[test]
fn backend_failures_exit_code() {
    let ws = Workspace::new(&Settings::default(), &[fault_line("auth")]);
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::BACKEND);
    assert_eq!(ws.report()["status"], "backend_failure");

    // no credentials in the environment
    let settings = Settings {
        chat_url: Some("http://127.0.0.1:9/v1".into()),
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &[]);
    let out = ws.create(&[]);
    assert_eq!(code(&out), exit::BACKEND);
    assert!(stderr(&out).contains("SEEDFORGE_API_KEY"));
}

fn write_dataset(ws: &Workspace, answers: &[(&str, &str)]) -> String {
    let lines: Vec<String> = answers
        .iter()
        .map(|(q, a)| {
            serde_json::json!({"question": q, "options": ["yes", "no"], "answer": a, "meta": {"iteration": 1, "parent_seed_id": "ex-000000000000"}})
                .to_string()
        })
        .collect();
    let path = ws.path("data.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn stats_histogram_and_audit() {
    let ws = Workspace::new(&Settings::default(), &[]);
    let questions: Vec<String> = (0..10).map(|i| format!("Q{i}?")).collect();
    let rows: Vec<(&str, &str)> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (q.as_str(), if i < 6 { "yes" } else { "no" }))
        .collect();
    let path = write_dataset(&ws, &rows);
    let out = seedforge(&["stats", &path, "--json"]);
    assert_eq!(code(&out), exit::OK);
    let stats: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats["count"], 10);
    assert_eq!(stats["answer_histogram"]["yes"], 6);
    assert_eq!(stats["answer_histogram"]["no"], 4);
    assert_eq!(stats["option_count_histogram"]["2"], 10);
    assert_eq!(stats["duplicate_keys"], 0);

    let text = stdout(&seedforge(&["stats", &path]));
    assert!(text.contains("records: 10") && text.contains("yes: 6") && text.contains("no: 4"));

    let path = write_dataset(&ws, &[("Is it?", "yes"), ("is  IT?", "no")]);
    let out = seedforge(&["stats", &path]);
    assert_eq!(code(&out), exit::AUDIT);
    assert!(stdout(&out).contains("duplicate keys: 1"));

    fs::write(ws.path("empty.jsonl"), "").unwrap();
    let out = seedforge(&["stats", ws.path("empty.jsonl").to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), exit::OK);
    let stats: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats["count"], 0);
    assert_eq!(stats["mean_question_length"], 0.0);

    fs::write(ws.path("broken.jsonl"), "{\"question\": 1}\n").unwrap();
    let out = seedforge(&["stats", ws.path("broken.jsonl").to_str().unwrap()]);
    assert_eq!(code(&out), exit::FAILURE);
    assert!(stderr(&out).contains(":1"));
}

#[test]
fn drift_report_from_runs() {
    let settings = Settings {
        target_count: 25,
        strategy: "tree",
        embed_url: Some("stub"),
        ..Settings::default()
    };
    let ws = Workspace::new(&settings, &batches(5));
    assert_eq!(code(&ws.create(&[])), exit::OK);
    let report = ws.path("out/report.json");
    let out = seedforge(&["drift-report", report.to_str().unwrap()]);
    assert_eq!(code(&out), exit::OK);
    let csv = stdout(&out);
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next().unwrap(), "iteration,seed_id,mean_cosine_to_initial");
    assert_eq!(csv, ws.read("out/report.drift.csv"));
    for line in csv.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((-1.0..=1.0).contains(&value));
    }

    let ws = Workspace::new(&Settings::default(), &batches(2));
    assert_eq!(code(&ws.create(&[])), exit::OK);
    let out = seedforge(&["drift-report", ws.path("out/report.json").to_str().unwrap()]);
    assert_eq!(code(&out), exit::MISSING_DRIFT);
}

#[test]
fn drift_report_fixture() {
    let out = seedforge(&["drift-report", data_dir().join("drift_report.json").to_str().unwrap()]);
    assert_eq!(code(&out), exit::OK, "{}", stderr(&out));
    let expected = fs::read_to_string(data_dir().join("drift_report.expected.csv")).unwrap();
    assert_eq!(stdout(&out), expected);
}

#[test]
fn validate_rejects_bad_corpus_lines() {
    let ws = Workspace::new(&Settings::default(), &[]);
    fs::write(ws.path("raw.jsonl"), "{\"id\": \"a\"}\n").unwrap();
    let config = ws.config();
    let out = seedforge(&[
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--raw",
        ws.path("raw.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), exit::FAILURE);
    assert!(stderr(&out).contains("raw.jsonl:1"));
}
