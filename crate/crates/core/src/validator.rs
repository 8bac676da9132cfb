//! Turns raw completions into accepted records or classified rejections.
//!
//! Completions are scanned for top-level JSON spans (objects or arrays) so that
//! prose, code fences and one-object-per-line output are all tolerated. Each
//! span is parsed strictly; spans that look like JSON but fail to parse become
//! `Malformed` fragments. Every fragment is then schema-checked against the
//! seed and deduplicated on its normalized question.

use std::collections::HashSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{normalize_text, FormattingExample, GeneratedRecord, LabelMode, RejectionLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    SchemaViolation,
    OptionMismatch,
    Duplicate,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::Malformed => "malformed",
            Self::SchemaViolation => "schema_violation",
            Self::OptionMismatch => "option_mismatch",
            Self::Duplicate => "duplicate",
        }
    }
}

impl RejectionLog {
    pub fn record(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::Malformed => self.malformed += 1,
            RejectReason::SchemaViolation => self.schema_violation += 1,
            RejectReason::OptionMismatch => self.option_mismatch += 1,
            RejectReason::Duplicate => self.duplicate += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no parseable JSON payload")]
pub struct Malformed;

/// Normalized question text: NFC, lowercase, whitespace collapsed and trimmed.
pub fn dedup_key(example: &FormattingExample) -> String {
    normalize_text(example.question())
}

/// Insert-only set of dedup keys with atomic check-and-insert.
#[derive(Debug, Default)]
pub struct DedupCache {
    keys: Mutex<HashSet<String>>,
}

impl DedupCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true if `key` was absent and is now present.
    pub fn insert_if_absent(&self, key: &str) -> bool {
        let mut keys = self.keys.lock().unwrap();
        if keys.contains(key) {
            false
        } else {
            keys.insert(key.to_owned());
            true
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.keys.lock().unwrap().contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    start: usize,
    end: usize,
    closed: bool,
}

/// Finds balanced top-level `{...}` / `[...]` spans, skipping over string literals.
/// An unclosed or mismatched span is reported with `closed == false`.
fn top_level_spans(raw: &str) -> Vec<Span> {
    let bytes = raw.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' && bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let start = i;
        let mut stack = Vec::new();
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        let mut j = i;
        while j < bytes.len() {
            let b = bytes[j];
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
            } else {
                match b {
                    b'"' => in_string = true,
                    b'{' => stack.push(b'}'),
                    b'[' => stack.push(b']'),
                    b'}' | b']' => {
                        if stack.pop() != Some(b) {
                            end = Some((j + 1, false));
                            break;
                        }
                        if stack.is_empty() {
                            end = Some((j + 1, true));
                            break;
                        }
                    }
                    _ => {}
                }
            }
            j += 1;
        }
        let (stop, closed) = end.unwrap_or((bytes.len(), false));
        spans.push(Span {
            start,
            end: stop,
            closed,
        });
        i = stop;
    }
    spans
}

fn is_record_like(value: &Value) -> bool {
    value.is_object()
}

/// Unwraps `{"examples": [...]}` and promotes a bare record object to a one-element array.
fn as_record_list(value: Value) -> Vec<Value> {
    match value {
        Value::Array(items) => items,
        Value::Object(map) if map.len() == 1 && map.values().next().is_some_and(Value::is_array) => {
            match map.into_iter().next() {
                Some((_, Value::Array(items))) => items,
                _ => unreachable!(),
            }
        }
        other => vec![other],
    }
}

fn span_contributes(value: &Value) -> bool {
    match value {
        Value::Object(_) => true,
        Value::Array(items) => items.iter().any(is_record_like),
        _ => false,
    }
}

/// Returns the first JSON payload in `raw` as an array of candidate values.
pub fn extract_json_payload(raw: &str) -> Result<Value, Malformed> {
    for span in top_level_spans(raw) {
        if !span.closed {
            continue;
        }
        if let Ok(value) = serde_json::from_str::<Value>(&raw[span.start..span.end]) {
            if span_contributes(&value) {
                return Ok(Value::Array(as_record_list(value)));
            }
        }
    }
    Err(Malformed)
}

/// One candidate fragment of a completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Byte offset of the enclosing span within the raw completion.
    pub offset: usize,
    pub fragment: String,
    pub parsed: Option<Value>,
}

/// Splits a completion into candidates. A completion with no JSON at all
/// yields a single unparsed candidate covering the whole text.
pub fn split_candidates(raw: &str) -> Vec<Candidate> {
    let mut candidates = Vec::new();
    for span in top_level_spans(raw) {
        let text = &raw[span.start..span.end];
        let parsed = if span.closed {
            serde_json::from_str::<Value>(text).ok()
        } else {
            None
        };
        match parsed {
            Some(value) if span_contributes(&value) => {
                for item in as_record_list(value) {
                    candidates.push(Candidate {
                        offset: span.start,
                        fragment: item.to_string(),
                        parsed: Some(item),
                    });
                }
            }
            // bracketed prose such as "[1]" or "{see below}"
            Some(_) => {}
            None if !text.contains('"') => {}
            None => candidates.push(Candidate {
                offset: span.start,
                fragment: text.to_owned(),
                parsed: None,
            }),
        }
    }
    if candidates.is_empty() {
        candidates.push(Candidate {
            offset: 0,
            fragment: raw.to_owned(),
            parsed: None,
        });
    }
    candidates
}

fn string_field<'a>(object: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a str> {
    object.get(key).and_then(Value::as_str)
}

/// Schema and label-space check of one parsed candidate against the seed.
pub fn check_record(
    candidate: &Value,
    mode: &LabelMode,
    seed: &FormattingExample,
) -> Result<FormattingExample, RejectReason> {
    use RejectReason::*;

    let object = candidate.as_object().ok_or(SchemaViolation)?;
    let question = string_field(object, "question").ok_or(SchemaViolation)?;
    let answer = string_field(object, "answer").ok_or(SchemaViolation)?;
    let options: Vec<String> = object
        .get("options")
        .and_then(Value::as_array)
        .ok_or(SchemaViolation)?
        .iter()
        .map(|o| o.as_str().map(str::to_owned))
        .collect::<Option<_>>()
        .ok_or(SchemaViolation)?;
    let context = match seed.context() {
        Some(_) => {
            let context = string_field(object, "context").ok_or(SchemaViolation)?;
            if context.trim().is_empty() {
                return Err(SchemaViolation);
            }
            Some(context.to_owned())
        }
        None => None,
    };

    match mode {
        LabelMode::Fixed(allowed) => {
            let mut got: Vec<&String> = options.iter().collect();
            let mut want: Vec<&String> = allowed.iter().collect();
            got.sort();
            want.sort();
            if got != want {
                return Err(OptionMismatch);
            }
        }
        LabelMode::Variable => {
            if options.len() != seed.options().len() {
                return Err(OptionMismatch);
            }
        }
    }

    FormattingExample::new(question, options, answer, context).map_err(|_| SchemaViolation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the fragment among the completion's candidates.
    pub index: u32,
    pub offset: usize,
    pub fragment: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationOutcome {
    pub accepted: Vec<GeneratedRecord>,
    pub rejections: Vec<Rejection>,
}

impl ValidationOutcome {
    pub fn candidates(&self) -> usize {
        self.accepted.len() + self.rejections.len()
    }

    pub fn tally(&self, log: &mut RejectionLog) {
        for rejection in &self.rejections {
            log.record(rejection.reason);
        }
    }
}

/// Validates one raw completion produced from `seed` at `iteration`.
/// Accepted keys are inserted into `cache`.
pub fn validate_completion(
    raw: &str,
    mode: &LabelMode,
    seed: &FormattingExample,
    cache: &DedupCache,
    iteration: u32,
) -> ValidationOutcome {
    let mut outcome = ValidationOutcome::default();
    for (index, candidate) in split_candidates(raw).into_iter().enumerate() {
        let reject = |reason| Rejection {
            index: index as u32,
            offset: candidate.offset,
            fragment: candidate.fragment.clone(),
            reason,
        };
        let Some(value) = &candidate.parsed else {
            outcome.rejections.push(reject(RejectReason::Malformed));
            continue;
        };
        let example = match check_record(value, mode, seed) {
            Ok(example) => example,
            Err(reason) => {
                outcome.rejections.push(reject(reason));
                continue;
            }
        };
        let key = dedup_key(&example);
        if !cache.insert_if_absent(&key) {
            outcome.rejections.push(reject(RejectReason::Duplicate));
            continue;
        }
        outcome.accepted.push(GeneratedRecord {
            example,
            iteration,
            parent_seed_id: seed.id().clone(),
            batch_index: index as u32,
            dedup_key: key,
        });
    }
    outcome
}
