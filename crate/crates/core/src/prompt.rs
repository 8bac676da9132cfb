//! Instruction and formatting-example prompt rendering.
//!
//! The formatting example is serialized as JSON whose key order depends on the
//! label mode: variable-option tasks lead with the question, fixed-option tasks
//! lead with the options and answer so that the model writes the question last.

use serde_json::{Map, Value};

use crate::backend::{ChatMessage, ChatRequest, Role};
use crate::model::{CreationConfig, FormattingExample, LabelMode};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("formatting prompt is empty")]
    EmptyFormatPrompt,
}

const CLAUSE_FORMAT: &str =
    "follow the format of the example provided, but with a different content.";
const CLAUSE_DIFFERENT_ANSWERS: &str = "- The created examples **must** all have different answers.";
const CLAUSE_JSON: &str = "- The output **must** be in unnumbered JSON format.";
const CLAUSE_SAME_OPTIONS: &str =
    "- The created examples **must** have the same options as the provided example.";

/// Renders the system instruction, one clause per line.
pub fn render_instruction(config: &CreationConfig) -> String {
    render_instruction_for(config.batch_size, &config.label_mode)
}

pub fn render_instruction_for(batch_size: usize, mode: &LabelMode) -> String {
    let mut clauses = vec![
        format!("- You are creating {batch_size} examples that {CLAUSE_FORMAT}"),
        CLAUSE_DIFFERENT_ANSWERS.to_owned(),
        CLAUSE_JSON.to_owned(),
    ];
    if mode.is_fixed() {
        clauses.push(CLAUSE_SAME_OPTIONS.to_owned());
    }
    clauses.join("\n")
}

/// Builds the ordered JSON object for `example` under `mode`.
pub fn format_object(example: &FormattingExample, mode: &LabelMode) -> Map<String, Value> {
    let options = Value::Array(example.options().iter().cloned().map(Value::String).collect());
    let mut object = Map::new();
    let put_context = |object: &mut Map<String, Value>| {
        if let Some(context) = example.context() {
            object.insert("context".into(), Value::String(context.to_owned()));
        }
    };
    match mode {
        LabelMode::Variable => {
            put_context(&mut object);
            object.insert("question".into(), Value::String(example.question().to_owned()));
            object.insert("options".into(), options);
            object.insert("answer".into(), Value::String(example.answer().to_owned()));
        }
        LabelMode::Fixed(_) => {
            object.insert("options".into(), options);
            object.insert("answer".into(), Value::String(example.answer().to_owned()));
            put_context(&mut object);
            object.insert("question".into(), Value::String(example.question().to_owned()));
        }
    }
    object
}

/// Pretty-printed (2-space indent) formatting prompt.
pub fn render_format_prompt(example: &FormattingExample, mode: &LabelMode) -> String {
    serde_json::to_string_pretty(&Value::Object(format_object(example, mode)))
        .expect("string-only JSON object always serializes")
}

pub fn assemble_request(
    instruction: &str,
    format_prompt: &str,
    config: &CreationConfig,
) -> Result<ChatRequest, PromptError> {
    if instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    if format_prompt.trim().is_empty() {
        return Err(PromptError::EmptyFormatPrompt);
    }
    Ok(ChatRequest {
        model: config.model_name.clone(),
        messages: vec![
            ChatMessage::new(Role::System, instruction),
            ChatMessage::new(Role::User, format_prompt),
        ],
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_tokens,
    })
}

/// Instruction + formatting prompt for `seed`, ready to send.
pub fn build_request(config: &CreationConfig, seed: &FormattingExample) -> ChatRequest {
    let instruction = render_instruction(config);
    let prompt = render_format_prompt(seed, &config.label_mode);
    assemble_request(&instruction, &prompt, config).expect("rendered prompts are never empty")
}
