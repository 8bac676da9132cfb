//! Run configuration and on-disk formats: JSONL datasets and rejects, the JSON
//! run report, and the drift CSV.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{
    normalize_text, CreationConfig, ExampleId, FormattingExample, GeneratedRecord, LabelMode,
    LedgerSnapshot, RejectionLog, Strategy, TokenPrice, Usd,
};
use crate::orchestrator::{DriftRow, IterationEvent, RunError, RunObserver, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("config error: {0}")]
    Config(String),
    #[error("seed error: {0}")]
    Seed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("report has no drift data (the run had no embedder)")]
    MissingDriftData,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfigDocument {
    pub task: TaskSection,
    pub seed: SeedSection,
    pub creation: CreationSection,
    #[serde(default)]
    pub decoding: DecodingSection,
    pub backend: BackendSection,
    #[serde(default)]
    pub cost: CostSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LabelModeName {
    Variable,
    Fixed,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub label_mode: LabelModeName,
    #[serde(default)]
    pub fixed_options: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CreationSection {
    pub target_count: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub strategy: Strategy,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub max_attempts: Option<usize>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_batch_size() -> usize {
    5
}

fn default_in_flight() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DecodingSection {
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

fn one() -> f64 {
    1.0
}

impl Default for DecodingSection {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// Base URL of an OpenAI-compatible API, or `script:PATH` for a recorded script.
    pub chat_url: String,
    /// Base URL of an embeddings API, or `stub` / `stub:DIM` for the offline embedder.
    #[serde(default)]
    pub embed_url: Option<String>,
    pub model: String,
    #[serde(default)]
    pub embed_model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retry_attempts")]
    pub retry_attempts: u32,
}

fn default_timeout() -> u64 {
    120
}

fn default_retry_attempts() -> u32 {
    5
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "default_price")]
    pub price_per_1k_tokens: f64,
    #[serde(default)]
    pub budget_cap: Option<f64>,
}

fn default_price() -> f64 {
    0.002
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            price_per_1k_tokens: default_price(),
            budget_cap: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dataset_path: PathBuf,
    pub report_path: PathBuf,
    pub rejects_path: PathBuf,
    #[serde(default)]
    pub drift_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub target_count: Option<usize>,
    pub strategy: Option<Strategy>,
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatTarget {
    Script(PathBuf),
    Http { base_url: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedTarget {
    Stub { dimension: usize },
    Http { base_url: String, model: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub dataset: PathBuf,
    pub report: PathBuf,
    pub rejects: PathBuf,
    pub drift: PathBuf,
}

/// A config document checked, defaulted and with paths resolved against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub creation: CreationConfig,
    pub seed: FormattingExample,
    pub chat: ChatTarget,
    pub embed: Option<EmbedTarget>,
    pub timeout: Duration,
    pub retry_attempts: u32,
    pub output: OutputPaths,
}

pub fn parse_config_document(text: &str) -> Result<RunConfigDocument, PersistError> {
    toml::from_str(text).map_err(|e| PersistError::Config(e.to_string()))
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ResolvedConfig, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc = parse_config_document(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_config(doc, base, overrides)
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}

pub fn resolve_config(
    mut doc: RunConfigDocument,
    base: &Path,
    overrides: &Overrides,
) -> Result<ResolvedConfig, PersistError> {
    let bad = |msg: String| PersistError::Config(msg);

    if let Some(k) = overrides.target_count {
        doc.creation.target_count = k;
    }
    if let Some(strategy) = overrides.strategy {
        doc.creation.strategy = strategy;
    }
    if let Some(seed) = overrides.rng_seed {
        doc.creation.rng_seed = seed;
    }

    if doc.creation.strategy.needs_embedder() && doc.backend.embed_url.is_none() {
        return Err(bad(format!(
            "strategy {} requires backend.embed_url",
            doc.creation.strategy
        )));
    }
    if doc.task.label_mode == LabelModeName::Variable && doc.task.fixed_options.is_some() {
        return Err(bad("task.fixed_options is only valid with label_mode = \"fixed\"".into()));
    }
    if !(doc.cost.price_per_1k_tokens >= 0.0) {
        return Err(bad("cost.price_per_1k_tokens must be non-negative".into()));
    }
    if let Some(cap) = doc.cost.budget_cap {
        if !(cap >= 0.0) {
            return Err(bad("cost.budget_cap must be non-negative".into()));
        }
    }

    let chat = match doc.backend.chat_url.strip_prefix("script:") {
        Some(p) => ChatTarget::Script(resolve(base, Path::new(p))),
        None => ChatTarget::Http {
            base_url: doc.backend.chat_url.clone(),
        },
    };
    let embed = match doc.backend.embed_url.as_deref() {
        None => None,
        Some("stub") => Some(EmbedTarget::Stub { dimension: 64 }),
        Some(url) => match url.strip_prefix("stub:") {
            Some(dim) => Some(EmbedTarget::Stub {
                dimension: dim
                    .parse()
                    .ok()
                    .filter(|d| *d > 0)
                    .ok_or_else(|| bad(format!("invalid stub dimension {dim:?}")))?,
            }),
            None => Some(EmbedTarget::Http {
                base_url: url.to_owned(),
                model: doc
                    .backend
                    .embed_model
                    .clone()
                    .ok_or_else(|| bad("backend.embed_model is required with an HTTP embed_url".into()))?,
            }),
        },
    };

    let seed_path = resolve(base, &doc.seed.path);
    let seed = load_seed(&seed_path)?;

    let label_mode = match doc.task.label_mode {
        LabelModeName::Variable => LabelMode::Variable,
        LabelModeName::Fixed => {
            let options = doc
                .task
                .fixed_options
                .clone()
                .unwrap_or_else(|| seed.options().to_vec());
            LabelMode::fixed(options).map_err(|e| bad(e.to_string()))?
        }
    };

    let mut creation = CreationConfig::new(doc.creation.target_count, doc.creation.strategy, label_mode);
    creation.batch_size = doc.creation.batch_size;
    creation.rng_seed = doc.creation.rng_seed;
    creation.max_attempts = doc.creation.max_attempts;
    creation.max_in_flight = doc.creation.max_in_flight;
    creation.temperature = doc.decoding.temperature;
    creation.top_p = doc.decoding.top_p;
    creation.max_tokens = doc.decoding.max_tokens;
    creation.model_name = doc.backend.model.clone();
    creation.price = TokenPrice::per_1k_dollars(doc.cost.price_per_1k_tokens);
    creation.budget_cap = doc.cost.budget_cap.map(Usd::from_dollars);
    creation.validate().map_err(|e| bad(e.to_string()))?;

    if let Some(fixed) = creation.label_mode.fixed_options() {
        let mut want: Vec<&String> = fixed.iter().collect();
        let mut got: Vec<&String> = seed.options().iter().collect();
        want.sort();
        got.sort();
        if want != got {
            return Err(PersistError::Seed(format!(
                "seed options {:?} do not match task.fixed_options {:?}",
                seed.options(),
                fixed
            )));
        }
    }

    let report = resolve(base, &doc.output.report_path);
    let drift = match &doc.output.drift_path {
        Some(p) => resolve(base, p),
        None => report.with_extension("drift.csv"),
    };
    Ok(ResolvedConfig {
        creation,
        seed,
        chat,
        embed,
        timeout: Duration::from_secs(doc.backend.timeout_secs),
        retry_attempts: doc.backend.retry_attempts,
        output: OutputPaths {
            dataset: resolve(base, &doc.output.dataset_path),
            report,
            rejects: resolve(base, &doc.output.rejects_path),
            drift,
        },
    })
}

/// Reads a seed file: one JSON object with question, options, answer and optional context.
pub fn load_seed(path: &Path) -> Result<FormattingExample, PersistError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PersistError::Seed(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Seed(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub iteration: u32,
    pub parent_seed_id: ExampleId,
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub meta: RecordMeta,
}

impl From<&GeneratedRecord> for DatasetRecord {
    fn from(record: &GeneratedRecord) -> Self {
        let ex = &record.example;
        Self {
            question: ex.question().to_owned(),
            options: ex.options().to_vec(),
            answer: ex.answer().to_owned(),
            context: ex.context().map(str::to_owned),
            meta: RecordMeta {
                iteration: record.iteration,
                parent_seed_id: record.parent_seed_id.clone(),
            },
        }
    }
}

impl DatasetRecord {
    pub fn to_example(&self) -> Result<FormattingExample, crate::model::ModelError> {
        FormattingExample::new(
            self.question.clone(),
            self.options.clone(),
            self.answer.clone(),
            self.context.clone(),
        )
    }
}

/// Append-only JSONL writer; each batch goes out in a single write followed by a sync.
pub struct JsonlWriter {
    file: File,
    path: PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, PersistError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            file,
            path: path.to_owned(),
        })
    }

    pub fn append_batch<T: Serialize>(&mut self, items: &[T]) -> Result<(), PersistError> {
        if items.is_empty() {
            return Ok(());
        }
        let mut buffer = String::new();
        for item in items {
            buffer.push_str(&serde_json::to_string(item).expect("serializable record"));
            buffer.push('\n');
        }
        self.file.write_all(buffer.as_bytes()).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

pub fn write_dataset(path: &Path, records: &[GeneratedRecord]) -> Result<(), PersistError> {
    let lines: Vec<DatasetRecord> = records.iter().map(DatasetRecord::from).collect();
    JsonlWriter::create(path)?.append_batch(&lines)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<DatasetRecord>, PersistError> {
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| PersistError::Parse {
            path: path.to_owned(),
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectLine {
    pub iteration: u32,
    pub seed_id: ExampleId,
    pub offset: usize,
    pub reason: crate::validator::RejectReason,
    pub fragment: String,
}

/// Streams accepted records and rejects to their JSONL files as the run progresses.
pub struct FileSink {
    dataset: JsonlWriter,
    rejects: JsonlWriter,
}

impl FileSink {
    pub fn create(dataset: &Path, rejects: &Path) -> Result<Self, PersistError> {
        Ok(Self {
            dataset: JsonlWriter::create(dataset)?,
            rejects: JsonlWriter::create(rejects)?,
        })
    }
}

impl RunObserver for FileSink {
    fn on_iteration(&mut self, event: &IterationEvent<'_>) -> Result<(), String> {
        let rejects: Vec<RejectLine> = event
            .rejections
            .iter()
            .map(|r| RejectLine {
                iteration: event.iteration,
                seed_id: event.seed_id.clone(),
                offset: r.offset,
                reason: r.reason,
                fragment: r.fragment.clone(),
            })
            .collect();
        self.rejects.append_batch(&rejects).map_err(|e| e.to_string())?;
        let records: Vec<DatasetRecord> = event.kept.iter().map(DatasetRecord::from).collect();
        self.dataset.append_batch(&records).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    BudgetExceeded,
    AttemptsExhausted,
    BackendFailure,
    Failed,
}

impl RunStatus {
    pub fn of(error: Option<&RunError>) -> Self {
        match error {
            None => Self::Complete,
            Some(RunError::BudgetExceeded { .. }) => Self::BudgetExceeded,
            Some(RunError::AttemptsExhausted { .. }) => Self::AttemptsExhausted,
            Some(RunError::Backend(_)) | Some(RunError::Embedding(_)) => Self::BackendFailure,
            Some(_) => Self::Failed,
        }
    }
}

/// The JSON run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub strategy: Strategy,
    pub label_mode: String,
    pub target_count: usize,
    pub records_written: usize,
    pub iterations: u32,
    pub parsed_candidates: u64,
    pub accepted: u64,
    pub truncated: u64,
    pub rejections: RejectionLog,
    pub ledger: LedgerSnapshot,
    pub drift_available: bool,
    pub drift: Vec<DriftRow>,
}

impl ReportFile {
    pub fn from_run(config: &CreationConfig, report: &RunReport, error: Option<&RunError>) -> Self {
        Self {
            status: RunStatus::of(error),
            error: error.map(ToString::to_string),
            strategy: report.strategy,
            label_mode: config.label_mode.name().to_owned(),
            target_count: config.target_count,
            records_written: report.dataset.len(),
            iterations: report.iterations,
            parsed_candidates: report.parsed_candidates,
            accepted: report.accepted,
            truncated: report.truncated,
            rejections: report.rejections,
            ledger: LedgerSnapshot::from(&report.ledger),
            drift_available: report.drift_available,
            drift: report.drift_rows.clone(),
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.accepted + self.rejections.total() == self.parsed_candidates
    }
}

pub fn write_report(path: &Path, report: &ReportFile) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(report).expect("serializable report");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<ReportFile, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Parse {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub const DRIFT_HEADER: [&str; 3] = ["iteration", "seed_id", "mean_cosine_to_initial"];

/// Drift rows as RFC 4180 CSV; absent similarities are empty fields.
pub fn drift_csv<W: io::Write>(rows: &[DriftRow], out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(DRIFT_HEADER)?;
    for row in rows {
        let cosine = row
            .mean_cosine_to_initial
            .map(|c| c.to_string())
            .unwrap_or_default();
        writer.write_record([row.iteration.to_string(), row.seed_id.to_string(), cosine])?;
    }
    writer.flush()?;
    Ok(())
}

/// Drift CSV for a report, or `MissingDriftData` when the run had no embedder.
pub fn drift_report(report: &ReportFile) -> Result<String, PersistError> {
    if !report.drift_available {
        return Err(PersistError::MissingDriftData);
    }
    let mut buffer = Vec::new();
    drift_csv(&report.drift, &mut buffer).expect("writing to memory cannot fail");
    Ok(String::from_utf8(buffer).expect("csv output is utf-8"))
}

pub fn write_drift(path: &Path, rows: &[DriftRow]) -> Result<(), PersistError> {
    let file = File::create(path).map_err(io_err(path))?;
    drift_csv(rows, file).map_err(|e| PersistError::Io {
        path: path.to_owned(),
        source: io::Error::other(e),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub answer_histogram: BTreeMap<String, usize>,
    pub option_count_histogram: BTreeMap<usize, usize>,
    pub duplicate_keys: usize,
    pub mean_question_length: f64,
}

impl DatasetStats {
    pub fn compute(records: &[DatasetRecord]) -> Self {
        let mut answer_histogram = BTreeMap::new();
        let mut option_count_histogram = BTreeMap::new();
        let mut keys = HashSet::new();
        let mut duplicate_keys = 0;
        let mut question_chars = 0usize;
        for record in records {
            *answer_histogram.entry(record.answer.clone()).or_insert(0) += 1;
            *option_count_histogram.entry(record.options.len()).or_insert(0) += 1;
            if !keys.insert(normalize_text(&record.question)) {
                duplicate_keys += 1;
            }
            question_chars += record.question.chars().count();
        }
        let mean_question_length = if records.is_empty() {
            0.0
        } else {
            question_chars as f64 / records.len() as f64
        };
        Self {
            count: records.len(),
            answer_histogram,
            option_count_histogram,
            duplicate_keys,
            mean_question_length,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("records: {}\n", self.count);
        out.push_str("answers:\n");
        for (answer, n) in &self.answer_histogram {
            out.push_str(&format!("  {answer}: {n}\n"));
        }
        out.push_str("option counts:\n");
        for (options, n) in &self.option_count_histogram {
            out.push_str(&format!("  {options}: {n}\n"));
        }
        out.push_str(&format!("duplicate keys: {}\n", self.duplicate_keys));
        out.push_str(&format!("mean question length: {:.1}\n", self.mean_question_length));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[task]
label_mode = "fixed"

[seed]
path = "seed.json"

[creation]
target_count = 10
strategy = "random"

[backend]
chat_url = "script:script.jsonl"
model = "gpt-3.5-turbo"

[output]
dataset_path = "out/data.jsonl"
report_path = "out/report.json"
rejects_path = "out/rejects.jsonl"
"#;

    fn write_seed(dir: &Path) {
        fs::write(
            dir.join("seed.json"),
            r#"{"question": "Is the sky blue?", "options": ["yes", "no"], "answer": "yes"}"#,
        )
        .unwrap();
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write_seed(dir.path());
        let doc = parse_config_document(MINIMAL).unwrap();
        let cfg = resolve_config(doc, dir.path(), &Overrides::default()).unwrap();
        assert_eq!(cfg.creation.batch_size, 5);
        assert_eq!(cfg.creation.temperature, 1.0);
        assert_eq!(cfg.creation.price, TokenPrice::per_1k_dollars(0.002));
        assert_eq!(cfg.creation.label_mode, LabelMode::fixed(["yes", "no"]).unwrap());
        assert_eq!(cfg.chat, ChatTarget::Script(dir.path().join("script.jsonl")));
        assert_eq!(cfg.output.drift, dir.path().join("out/report.drift.csv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("strategy = \"random\"", "strategy = \"random\"\nstrategie = \"tree\"");
        assert!(matches!(parse_config_document(&typo), Err(PersistError::Config(_))));
        let bad_name = MINIMAL.replace("\"random\"", "\"diverse\"");
        assert!(matches!(parse_config_document(&bad_name), Err(PersistError::Config(_))));
    }

    #[test]
    fn similar_without_embedder_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let doc = parse_config_document(&MINIMAL.replace("\"random\"", "\"similar\"")).unwrap();
        let err = resolve_config(doc, dir.path(), &Overrides::default()).unwrap_err();
        assert!(matches!(err, PersistError::Config(msg) if msg.contains("embed_url")));

        let doc = parse_config_document(MINIMAL).unwrap();
        let over = Overrides {
            strategy: Some(Strategy::Contrastive),
            ..Overrides::default()
        };
        assert!(matches!(resolve_config(doc, dir.path(), &over), Err(PersistError::Config(_))));
    }

    #[test]
    fn dataset_parse_errors_carry_line_numbers() {
        let good = r#"{"question":"q","options":["a","b"],"answer":"a","meta":{"iteration":1,"parent_seed_id":"ex-1"}}"#;
        let text = format!("{good}\n{{oops\n");
        match parse_dataset(&text, Path::new("d.jsonl")) {
            Err(PersistError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stats_counts() {
        let mk = |q: &str, a: &str| DatasetRecord {
            question: q.into(),
            options: vec!["yes".into(), "no".into()],
            answer: a.into(),
            context: None,
            meta: RecordMeta {
                iteration: 1,
                parent_seed_id: ExampleId::new("ex"),
            },
        };
        let records: Vec<_> = (0..10)
            .map(|i| mk(&format!("Q{i}?"), if i < 6 { "yes" } else { "no" }))
            .collect();
        let stats = DatasetStats::compute(&records);
        assert_eq!(stats.answer_histogram, BTreeMap::from([("yes".into(), 6), ("no".into(), 4)]));
        assert_eq!(stats.duplicate_keys, 0);
        assert_eq!(stats.option_count_histogram, BTreeMap::from([(2, 10)]));

        let mut dup = records.clone();
        dup.push(mk("q3?", "yes"));
        assert_eq!(DatasetStats::compute(&dup).duplicate_keys, 1);

        let empty = DatasetStats::compute(&[]);
        assert_eq!(empty.count, 0);
        assert!(empty.answer_histogram.is_empty());
    }

    #[test]
    fn drift_csv_shape() {
        let rows = vec![
            DriftRow {
                iteration: 1,
                seed_id: ExampleId::new("ex-a"),
                mean_cosine_to_initial: Some(0.5),
            },
            DriftRow {
                iteration: 2,
                seed_id: ExampleId::new("ex,b"),
                mean_cosine_to_initial: None,
            },
        ];
        let mut out = Vec::new();
        drift_csv(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iteration,seed_id,mean_cosine_to_initial\n1,ex-a,0.5\n2,\"ex,b\",\n"
        );
    }
}
