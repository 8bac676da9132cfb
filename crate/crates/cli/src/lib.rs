//! Subcommand implementations for the `seedforge` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use seedforge_core::backend::{ChatBackend, RetryPolicy, RetryingBackend, ScriptedBackend, ThreadSleeper};
use seedforge_core::embedding::{CachedEmbedder, Embedder, StubEmbedder};
use seedforge_core::orchestrator::{create_dataset_with, RunError};
use seedforge_core::persistence::{
    self, ChatTarget, DatasetStats, EmbedTarget, FileSink, Overrides, PersistError, ReportFile,
    ResolvedConfig,
};
use seedforge_core::prompt::build_request;
use seedforge_core::validator::{dedup_key, validate_completion, DedupCache};
use seedforge_core::Strategy;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SEED: i32 = 3;
    pub const BUDGET_EXCEEDED: i32 = 4;
    pub const ATTEMPTS_EXHAUSTED: i32 = 5;
    pub const BACKEND: i32 = 6;
    pub const AUDIT: i32 = 7;
    pub const MISSING_DRIFT: i32 = 8;
}

#[derive(Debug, Parser)]
#[command(name = "seedforge", version, about = "Create labeled NLU datasets from a single seed example")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run dataset creation from a config file.
    Create {
        #[arg(long)]
        config: PathBuf,
        /// Override creation.target_count.
        #[arg(long = "k")]
        k: Option<usize>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long = "rng-seed")]
        rng_seed: Option<u64>,
        /// Resolve the config and print the first request without calling any backend.
        #[arg(long)]
        dry_run: bool,
    },
    /// Re-validate recorded raw completions offline.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// JSONL file of {"id": .., "text": ..} recorded completions.
        #[arg(long)]
        raw: PathBuf,
    },
    /// Summarize a dataset file.
    Stats {
        path: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print the per-iteration drift CSV from a run report.
    DriftReport { path: PathBuf },
}

/// Runs a parsed command, writing to the given streams. Returns the exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Create {
            config,
            k,
            strategy,
            rng_seed,
            dry_run,
        } => {
            let overrides = Overrides {
                target_count: k,
                strategy,
                rng_seed,
            };
            cmd_create(&config, &overrides, dry_run, out, err)
        }
        Command::Validate { config, raw } => cmd_validate(&config, &raw, out),
        Command::Stats { path, json } => cmd_stats(&path, json, out),
        Command::DriftReport { path } => cmd_drift_report(&path, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            match e.downcast_ref::<PersistError>() {
                Some(PersistError::Config(_)) => exit::CONFIG,
                Some(PersistError::Seed(_)) => exit::SEED,
                Some(PersistError::MissingDriftData) => exit::MISSING_DRIFT,
                _ => exit::FAILURE,
            }
        }
    }
}

fn retry_policy(config: &ResolvedConfig) -> RetryPolicy {
    RetryPolicy {
        max_attempts: config.retry_attempts,
        ..RetryPolicy::default()
    }
}

fn chat_backend(config: &ResolvedConfig) -> anyhow::Result<Box<dyn ChatBackend>> {
    let inner: Box<dyn ChatBackend> = match &config.chat {
        ChatTarget::Script(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
            let script = ScriptedBackend::from_jsonl(&text)
                .map_err(|e| PersistError::Config(format!("{}: {e}", path.display())))?;
            Box::new(script)
        }
        ChatTarget::Http { base_url } => http_chat(base_url, config.timeout)?,
    };
    Ok(Box::new(RetryingBackend::new(
        inner,
        retry_policy(config),
        Arc::new(ThreadSleeper),
        config.creation.rng_seed,
    )))
}

fn http_chat(base_url: &str, timeout: Duration) -> anyhow::Result<Box<dyn ChatBackend>> {
    let client = seedforge_core::backend::HttpChatBackend::from_env(base_url, timeout)?;
    Ok(Box::new(client))
}

fn embedder(config: &ResolvedConfig) -> anyhow::Result<Option<Box<dyn Embedder>>> {
    Ok(match &config.embed {
        None => None,
        Some(EmbedTarget::Stub { dimension }) => {
            Some(Box::new(CachedEmbedder::new(StubEmbedder::new(0, *dimension))))
        }
        Some(EmbedTarget::Http { base_url, model }) => Some(Box::new(CachedEmbedder::new(
            seedforge_core::embedding::HttpEmbedder::from_env(base_url, model, config.timeout)?,
        ))),
    })
}

fn exit_code_for(error: &RunError) -> i32 {
    match error {
        RunError::BudgetExceeded { .. } => exit::BUDGET_EXCEEDED,
        RunError::AttemptsExhausted { .. } => exit::ATTEMPTS_EXHAUSTED,
        RunError::Backend(_) | RunError::Embedding(_) => exit::BACKEND,
        RunError::Config(_) | RunError::Sampler(_) => exit::CONFIG,
        RunError::SeedMismatch(_) => exit::SEED,
        RunError::Sink(_) => exit::FAILURE,
    }
}

pub fn cmd_create(
    config_path: &Path,
    overrides: &Overrides,
    dry_run: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let config = persistence::load_config(config_path, overrides)?;

    if dry_run {
        let request = build_request(&config.creation, &config.seed);
        writeln!(out, "{}", serde_json::to_string_pretty(&request)?)?;
        return Ok(exit::OK);
    }

    let chat = match chat_backend(&config) {
        Ok(chat) => chat,
        Err(e) if e.downcast_ref::<PersistError>().is_some() => return Err(e),
        Err(e) => {
            writeln!(err, "error: {e:#}")?;
            return Ok(exit::BACKEND);
        }
    };
    let embedder = match embedder(&config) {
        Ok(e) => e,
        Err(e) => {
            writeln!(err, "error: {e:#}")?;
            return Ok(exit::BACKEND);
        }
    };

    let mut sink = FileSink::create(&config.output.dataset, &config.output.rejects)?;
    let result = create_dataset_with(
        &config.creation,
        &config.seed,
        chat.as_ref(),
        embedder.as_deref(),
        &mut sink,
    );
    let (report, error) = match &result {
        Ok(report) => (report, None),
        Err(failure) => (failure.report.as_ref(), Some(&failure.error)),
    };

    let report_file = ReportFile::from_run(&config.creation, report, error);
    persistence::write_report(&config.output.report, &report_file)?;
    persistence::write_drift(&config.output.drift, &report.drift_rows)?;

    writeln!(
        err,
        "{} records in {} iteration(s); rejected {} of {} candidates; spent {}{}",
        report.dataset.len(),
        report.iterations,
        report.rejections.total(),
        report.parsed_candidates,
        report.ledger.total(),
        if report.ledger.is_estimated() { " (estimated usage)" } else { "" },
    )?;
    match error {
        None => Ok(exit::OK),
        Some(e) => {
            writeln!(err, "error: {e}")?;
            Ok(exit_code_for(e))
        }
    }
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompletion {
    id: String,
    text: String,
}

/// Replays recorded completions through the validator with one dedup cache
/// seeded with the seed, emitting one JSON line per candidate fragment.
pub fn cmd_validate(config_path: &Path, raw_path: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let config = persistence::load_config(config_path, &Overrides::default())?;
    let text = fs::read_to_string(raw_path).with_context(|| format!("reading {}", raw_path.display()))?;

    let cache = DedupCache::new();
    cache.insert_if_absent(&dedup_key(&config.seed));
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCompletion = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", raw_path.display(), index + 1))?;
        let outcome = validate_completion(
            &raw.text,
            &config.creation.label_mode,
            &config.seed,
            &cache,
            index as u32 + 1,
        );
        let mut decisions: Vec<(u32, serde_json::Value)> = outcome
            .accepted
            .iter()
            .map(|r| {
                (
                    r.batch_index,
                    json!({"id": raw.id, "fragment": r.batch_index, "decision": "accept", "reason": null, "question": r.example.question()}),
                )
            })
            .chain(outcome.rejections.iter().map(|r| {
                (
                    r.index,
                    json!({"id": raw.id, "fragment": r.index, "decision": "reject", "reason": r.reason.name(), "question": null}),
                )
            }))
            .collect();
        decisions.sort_by_key(|(slot, _)| *slot);
        for (_, decision) in decisions {
            writeln!(out, "{decision}")?;
        }
    }
    Ok(exit::OK)
}

pub fn cmd_stats(path: &Path, as_json: bool, out: &mut dyn Write) -> anyhow::Result<i32> {
    let records = persistence::read_dataset(path)?;
    let stats = DatasetStats::compute(&records);
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
    } else {
        write!(out, "{}", stats.render_text())?;
    }
    Ok(if stats.duplicate_keys > 0 { exit::AUDIT } else { exit::OK })
}

pub fn cmd_drift_report(path: &Path, out: &mut dyn Write) -> anyhow::Result<i32> {
    let report = persistence::read_report(path)?;
    let csv = persistence::drift_report(&report)?;
    out.write_all(csv.as_bytes())?;
    Ok(exit::OK)
}
