//! Browser playground: render prompts for a seed, validate a pasted completion,
//! and rank candidate seeds by similarity to the current one.
//!
//! Each exported function takes and returns JSON strings. The `*_json`
//! functions hold the logic and run natively in tests; the `#[wasm_bindgen]`
//! wrappers only convert errors to `JsValue`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use seedforge_core::embedding::{Embedder, StubEmbedder};
use seedforge_core::model::{FormattingExample, LabelMode};
use seedforge_core::prompt::{render_format_prompt, render_instruction_for};
use seedforge_core::sampler::{question_similarities, select_extreme, Extreme};
use seedforge_core::validator::{dedup_key, validate_completion, DedupCache};

fn parse_seed(seed_json: &str) -> Result<FormattingExample, String> {
    serde_json::from_str(seed_json).map_err(|e| format!("seed: {e}"))
}

fn parse_mode(mode: &str, seed: &FormattingExample) -> Result<LabelMode, String> {
    match mode {
        "variable" => Ok(LabelMode::Variable),
        "fixed" => LabelMode::fixed(seed.options().to_vec()).map_err(|e| e.to_string()),
        other => Err(format!("unknown label mode {other:?}")),
    }
}

#[derive(Serialize)]
struct RenderedPrompt {
    instruction: String,
    format_prompt: String,
}

pub fn render_prompt_json(seed_json: &str, mode: &str, batch_size: usize) -> Result<String, String> {
    let seed = parse_seed(seed_json)?;
    let mode = parse_mode(mode, &seed)?;
    let rendered = RenderedPrompt {
        instruction: render_instruction_for(batch_size.max(1), &mode),
        format_prompt: render_format_prompt(&seed, &mode),
    };
    Ok(serde_json::to_string(&rendered).expect("serializable"))
}

#[derive(Serialize)]
struct Decision {
    index: u32,
    accepted: bool,
    reason: Option<&'static str>,
    question: Option<String>,
    fragment: Option<String>,
}

#[derive(Serialize)]
struct ValidationView {
    decisions: Vec<Decision>,
    accepted: usize,
    rejected: usize,
}

pub fn validate_json(seed_json: &str, mode: &str, raw: &str) -> Result<String, String> {
    let seed = parse_seed(seed_json)?;
    let mode = parse_mode(mode, &seed)?;
    let cache = DedupCache::new();
    cache.insert_if_absent(&dedup_key(&seed));
    let outcome = validate_completion(raw, &mode, &seed, &cache, 1);

    let mut decisions: Vec<Decision> = outcome
        .accepted
        .iter()
        .map(|r| Decision {
            index: r.batch_index,
            accepted: true,
            reason: None,
            question: Some(r.example.question().to_owned()),
            fragment: None,
        })
        .chain(outcome.rejections.iter().map(|r| Decision {
            index: r.index,
            accepted: false,
            reason: Some(r.reason.name()),
            question: None,
            fragment: Some(r.fragment.clone()),
        }))
        .collect();
    decisions.sort_by_key(|d| d.index);
    let view = ValidationView {
        accepted: outcome.accepted.len(),
        rejected: outcome.rejections.len(),
        decisions,
    };
    Ok(serde_json::to_string(&view).expect("serializable"))
}

#[derive(Deserialize)]
struct RankInput {
    seed_question: String,
    candidates: Vec<String>,
    #[serde(default)]
    embed_seed: u64,
    #[serde(default = "default_dimension")]
    dimension: usize,
}

fn default_dimension() -> usize {
    StubEmbedder::DEFAULT_DIMENSION
}

#[derive(Serialize)]
struct Ranking {
    similarities: Vec<f64>,
    contrastive: Option<usize>,
    similar: Option<usize>,
}

/// Cosine similarity of each candidate question to the seed question under the
/// offline stub embedder, and the picks the contrastive and similar strategies would make.
pub fn rank_json(input_json: &str) -> Result<String, String> {
    let input: RankInput = serde_json::from_str(input_json).map_err(|e| e.to_string())?;
    let embedder = StubEmbedder::new(input.embed_seed, input.dimension);
    let to_example = |q: &str| {
        FormattingExample::new(q, ["a", "b"], "a", None).map_err(|e| format!("{q:?}: {e}"))
    };
    let seed = to_example(&input.seed_question)?;
    let candidates: Vec<FormattingExample> = input
        .candidates
        .iter()
        .filter(|c| !c.trim().is_empty())
        .map(|c| to_example(c))
        .collect::<Result<_, _>>()?;
    let similarities = question_similarities(&embedder as &dyn Embedder, &seed, candidates.iter())
        .map_err(|e| e.to_string())?;
    let ranking = Ranking {
        contrastive: select_extreme(&similarities, Extreme::Min),
        similar: select_extreme(&similarities, Extreme::Max),
        similarities,
    };
    Ok(serde_json::to_string(&ranking).expect("serializable"))
}

#[wasm_bindgen]
pub fn render_prompt(seed_json: &str, mode: &str, batch_size: usize) -> Result<String, JsValue> {
    render_prompt_json(seed_json, mode, batch_size).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn validate(seed_json: &str, mode: &str, raw: &str) -> Result<String, JsValue> {
    validate_json(seed_json, mode, raw).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn rank(input_json: &str) -> Result<String, JsValue> {
    rank_json(input_json).map_err(|e| JsValue::from_str(&e))
}
