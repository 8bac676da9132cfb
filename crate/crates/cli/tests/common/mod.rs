#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

pub const SEED: &str = r#"{"question": "Is the sky blue on a clear day?", "options": ["yes", "no"], "answer": "yes"}"#;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn item(question: &str, answer: &str) -> Value {
    json!({"options": ["yes", "no"], "answer": answer, "question": question})
}

/// `n` distinct valid yes/no records tagged with `tag`, alternating answers.
pub fn valid_items(tag: &str, n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| item(&format!("Question {tag}-{i}?"), if i % 2 == 0 { "yes" } else { "no" }))
        .collect()
}

/// One script line replying with `text` and the given token usage.
pub fn reply_line(text: &str, prompt_tokens: u64, completion_tokens: u64) -> String {
    json!({"text": text, "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens}})
        .to_string()
}

pub fn fault_line(fault: &str) -> String {
    json!({ "fault": fault }).to_string()
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub target_count: usize,
    pub strategy: &'static str,
    pub label_mode: &'static str,
    pub embed_url: Option<&'static str>,
    pub budget_cap: Option<f64>,
    pub max_attempts: Option<usize>,
    pub retry_attempts: u32,
    pub chat_url: Option<String>,
    pub extra: &'static str,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            target_count: 10,
            strategy: "random",
            label_mode: "fixed",
            embed_url: None,
            budget_cap: None,
            max_attempts: None,
            retry_attempts: 5,
            chat_url: None,
            extra: "",
        }
    }
}

/// A temporary directory holding a seed, a script and a config that refer to each other.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new(settings: &Settings, script: &[String]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("seed.json"), SEED).unwrap();
        if !script.is_empty() {
            fs::write(dir.path().join("script.jsonl"), script.join("\n") + "\n").unwrap();
        }
        let mut config = format!(
            "[task]\nlabel_mode = \"{}\"\n\n[seed]\npath = \"seed.json\"\n\n[creation]\ntarget_count = {}\nstrategy = \"{}\"\n",
            settings.label_mode, settings.target_count, settings.strategy
        );
        if let Some(n) = settings.max_attempts {
            config.push_str(&format!("max_attempts = {n}\n"));
        }
        let chat_url = settings.chat_url.clone().unwrap_or_else(|| "script:script.jsonl".into());
        config.push_str(&format!(
            "\n[backend]\nchat_url = \"{chat_url}\"\nmodel = \"gpt-3.5-turbo\"\nretry_attempts = {}\n",
            settings.retry_attempts
        ));
        if let Some(url) = settings.embed_url {
            config.push_str(&format!("embed_url = \"{url}\"\n"));
        }
        config.push_str("\n[cost]\nprice_per_1k_tokens = 0.002\n");
        if let Some(cap) = settings.budget_cap {
            config.push_str(&format!("budget_cap = {cap}\n"));
        }
        config.push_str(
            "\n[output]\ndataset_path = \"out/dataset.jsonl\"\nreport_path = \"out/report.json\"\nrejects_path = \"out/rejects.jsonl\"\n",
        );
        config.push_str(settings.extra);
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.toml")
    }

    pub fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    pub fn report(&self) -> Value {
        serde_json::from_str(&self.read("out/report.json")).unwrap()
    }

    pub fn lines(&self, name: &str) -> Vec<Value> {
        self.read(name).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }

    pub fn create(&self, args: &[&str]) -> Output {
        let config = self.config();
        let mut all = vec!["create", "--config", config.to_str().unwrap()];
        all.extend_from_slice(args);
        seedforge(&all)
    }
}

pub fn seedforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedforge"))
        .args(args)
        .env_remove("SEEDFORGE_API_KEY")
        .output()
        .expect("binary runs")
}

pub fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}
