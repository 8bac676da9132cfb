//! Validated domain types shared by every stage of the pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("answer {answer:?} is not one of the options")]
    AnswerNotInOptions { answer: String },
    #[error("options contain a duplicate: {0:?}")]
    DuplicateOptions(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("at least 2 options are required, got {0}")]
    TooFewOptions(usize),
    #[error("fixed label mode needs a non-empty set of distinct options")]
    InvalidFixedOptions,
    #[error("invalid creation config: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy {0:?} (expected random, contrastive, similar or tree)")]
    UnknownStrategy(String),
}

/// NFC-normalize, lowercase, collapse internal whitespace and trim.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let lowered = nfc.to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Opaque identifier of a formatting example, derived from its content.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(String);

impl ExampleId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Whether each instance carries its own options or all share one global set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelMode {
    Variable,
    Fixed(Vec<String>),
}

impl LabelMode {
    pub fn fixed<I, S>(options: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let options: Vec<String> = options.into_iter().map(Into::into).collect();
        let distinct: BTreeSet<&String> = options.iter().collect();
        if options.is_empty() || distinct.len() != options.len() {
            return Err(ModelError::InvalidFixedOptions);
        }
        Ok(Self::Fixed(options))
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Self::Fixed(_))
    }

    pub fn fixed_options(&self) -> Option<&[String]> {
        match self {
            Self::Fixed(options) => Some(options),
            Self::Variable => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Variable => "variable",
            Self::Fixed(_) => "fixed",
        }
    }
}

/// One question/options/answer instance. Construction validates every invariant,
/// so a value of this type is always well formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FormattingExample {
    #[serde(skip)]
    id: ExampleId,
    question: String,
    options: Vec<String>,
    answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<String>,
}

impl FormattingExample {
    pub fn new<S: Into<String>>(
        question: impl Into<String>,
        options: impl IntoIterator<Item = S>,
        answer: impl Into<String>,
        context: Option<String>,
    ) -> Result<Self, ModelError> {
        let question = question.into();
        let options: Vec<String> = options.into_iter().map(Into::into).collect();
        let answer = answer.into();

        if question.trim().is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        if options.len() < 2 {
            return Err(ModelError::TooFewOptions(options.len()));
        }
        let mut seen = BTreeSet::new();
        for option in &options {
            if !seen.insert(normalize_text(option)) {
                return Err(ModelError::DuplicateOptions(option.clone()));
            }
        }
        if !options.iter().any(|o| *o == answer) {
            return Err(ModelError::AnswerNotInOptions { answer });
        }

        let id = content_id(&question, &options, &answer, context.as_deref());
        Ok(Self {
            id,
            question,
            options,
            answer,
            context,
        })
    }

    pub fn id(&self) -> &ExampleId {
        &self.id
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }

    pub fn context(&self) -> Option<&str> {
        self.context.as_deref()
    }
}

fn content_id(question: &str, options: &[String], answer: &str, context: Option<&str>) -> ExampleId {
    let mut hasher = Sha256::new();
    hasher.update(question.as_bytes());
    hasher.update([0u8]);
    for option in options {
        hasher.update(option.as_bytes());
        hasher.update([0x1fu8]);
    }
    hasher.update([0u8]);
    hasher.update(answer.as_bytes());
    hasher.update([0u8]);
    if let Some(context) = context {
        hasher.update([1u8]);
        hasher.update(context.as_bytes());
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    ExampleId(format!("ex-{hex}"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    question: String,
    options: Vec<String>,
    answer: String,
    #[serde(default)]
    context: Option<String>,
}

impl<'de> Deserialize<'de> for FormattingExample {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawExample::deserialize(deserializer)?;
        FormattingExample::new(raw.question, raw.options, raw.answer, raw.context)
            .map_err(serde::de::Error::custom)
    }
}

/// An accepted generated example plus the lineage needed by self-reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedRecord {
    pub example: FormattingExample,
    /// 1-based index of the completion call that produced this record; the seed is iteration 0.
    pub iteration: u32,
    pub parent_seed_id: ExampleId,
    /// Position of the fragment inside its raw completion.
    pub batch_index: u32,
    pub dedup_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Contrastive,
    Similar,
    Tree,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Self::Random, Self::Contrastive, Self::Similar, Self::Tree];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Contrastive => "contrastive",
            Self::Similar => "similar",
            Self::Tree => "tree",
        }
    }

    pub fn needs_embedder(self) -> bool {
        matches!(self, Self::Contrastive | Self::Similar)
    }
}

impl FromStr for Strategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "contrastive" => Ok(Self::Contrastive),
            "similar" => Ok(Self::Similar),
            "tree" => Ok(Self::Tree),
            _ => Err(ModelError::UnknownStrategy(s.to_owned())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An amount of money held as integer pico-USD so that accumulation is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd {
    pico: u64,
}

impl Usd {
    pub const ZERO: Usd = Usd { pico: 0 };

    pub fn from_pico(pico: u64) -> Self {
        Self { pico }
    }

    /// Rounds to the nearest pico-USD; negative and non-finite inputs clamp to zero.
    pub fn from_dollars(dollars: f64) -> Self {
        if !dollars.is_finite() || dollars <= 0.0 {
            return Self::ZERO;
        }
        Self {
            pico: (dollars * 1e12).round() as u64,
        }
    }

    pub fn pico(self) -> u64 {
        self.pico
    }

    pub fn dollars(self) -> f64 {
        self.pico as f64 / 1e12
    }

    pub fn saturating_add(self, other: Usd) -> Usd {
        Usd {
            pico: self.pico.saturating_add(other.pico),
        }
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.6}", self.dollars())
    }
}

/// Price of 1,000 tokens. Stored as nano-USD per 1K tokens, which is the same
/// number as pico-USD per single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenPrice {
    nano_per_1k: u64,
}

impl TokenPrice {
    pub const GPT35_TURBO_JUNE_2023: TokenPrice = TokenPrice { nano_per_1k: 2_000_000 };

    pub fn per_1k_dollars(dollars: f64) -> Self {
        let nano = if dollars.is_finite() && dollars > 0.0 {
            (dollars * 1e9).round() as u64
        } else {
            0
        };
        Self { nano_per_1k: nano }
    }

    pub fn per_1k(self) -> f64 {
        self.nano_per_1k as f64 / 1e9
    }

    pub fn cost_of(self, tokens: u64) -> Usd {
        Usd::from_pico(tokens.saturating_mul(self.nano_per_1k))
    }
}

impl Default for TokenPrice {
    fn default() -> Self {
        Self::GPT35_TURBO_JUNE_2023
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(self) -> u64 {
        self.prompt_tokens.saturating_add(self.completion_tokens)
    }
}

/// Running token and spend totals for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    prompt_tokens: u64,
    completion_tokens: u64,
    total: Usd,
    calls: u64,
    estimated: bool,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_usage(&mut self, usage: TokenUsage, price: TokenPrice) -> Usd {
        self.prompt_tokens = self.prompt_tokens.saturating_add(usage.prompt_tokens);
        self.completion_tokens = self.completion_tokens.saturating_add(usage.completion_tokens);
        let cost = price.cost_of(usage.total());
        self.total = self.total.saturating_add(cost);
        self.calls += 1;
        cost
    }

    /// Marks totals as containing character-count estimates rather than reported usage.
    pub fn mark_estimated(&mut self) {
        self.estimated = true;
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens.saturating_add(self.completion_tokens)
    }

    pub fn total(&self) -> Usd {
        self.total
    }

    pub fn total_usd(&self) -> f64 {
        self.total.dollars()
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn is_estimated(&self) -> bool {
        self.estimated
    }

    /// Mean spend per recorded call, or `None` before the first call.
    pub fn mean_call_cost(&self) -> Option<Usd> {
        (self.calls > 0).then(|| Usd::from_pico(self.total.pico().div_ceil(self.calls)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LedgerSnapshot {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub calls: u64,
    pub total_pico_usd: u64,
    pub total_usd: f64,
    pub usage_estimated: bool,
}

impl From<&CostLedger> for LedgerSnapshot {
    fn from(ledger: &CostLedger) -> Self {
        Self {
            prompt_tokens: ledger.prompt_tokens,
            completion_tokens: ledger.completion_tokens,
            total_tokens: ledger.total_tokens(),
            calls: ledger.calls,
            total_pico_usd: ledger.total.pico(),
            total_usd: ledger.total_usd(),
            usage_estimated: ledger.estimated,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionLog {
    pub malformed: u64,
    pub schema_violation: u64,
    pub duplicate: u64,
    pub option_mismatch: u64,
}

impl RejectionLog {
    pub fn total(&self) -> u64 {
        self.malformed + self.schema_violation + self.duplicate + self.option_mismatch
    }
}

/// Knobs for one dataset-creation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CreationConfig {
    pub target_count: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub label_mode: LabelMode,
    pub temperature: f64,
    pub top_p: f64,
    pub model_name: String,
    pub max_tokens: Option<u32>,
    pub price: TokenPrice,
    pub budget_cap: Option<Usd>,
    /// Completion calls allowed before giving up; `None` means 10 x ceil(k / batch_size).
    pub max_attempts: Option<usize>,
    /// Concurrent completions for the tree strategy. Other strategies are sequential.
    pub max_in_flight: usize,
    pub rng_seed: u64,
}

impl CreationConfig {
    pub fn new(target_count: usize, strategy: Strategy, label_mode: LabelMode) -> Self {
        Self {
            target_count,
            batch_size: 5,
            strategy,
            label_mode,
            temperature: 1.0,
            top_p: 1.0,
            model_name: "gpt-3.5-turbo".to_owned(),
            max_tokens: None,
            price: TokenPrice::default(),
            budget_cap: None,
            max_attempts: None,
            max_in_flight: 1,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_owned()));
        if self.target_count == 0 {
            return bad("target_count must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a non-negative number");
        }
        if self.max_attempts == Some(0) {
            return bad("max_attempts must be at least 1");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        Ok(())
    }

    pub fn effective_max_attempts(&self) -> usize {
        self.max_attempts
            .unwrap_or_else(|| 10 * self.target_count.div_ceil(self.batch_size))
    }
}
