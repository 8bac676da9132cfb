//! Chat-completion backends: the request/response types, a retry wrapper with
//! capped exponential backoff, a scripted backend for offline runs and tests,
//! and (with the `http` feature) an OpenAI-compatible HTTP client.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// Serializes directly as an OpenAI-compatible chat-completions body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    /// True when the endpoint reported no usage and counts were estimated from characters.
    pub usage_estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited (after {attempts} attempt(s))")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("script is empty")]
    EmptyScript,
    #[error("script exhausted after {0} call(s)")]
    ScriptExhausted(usize),
}

impl BackendError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::RateLimited { .. } | Self::Transport(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// ceil(chars / 4) for both sides of the exchange.
pub fn estimate_usage(request: &ChatRequest, completion: &str) -> TokenUsage {
    TokenUsage::new(
        request.prompt_chars().div_ceil(4) as u64,
        completion.chars().count().div_ceil(4) as u64,
    )
}

/// Extracts the completion text and usage from an OpenAI-compatible response body.
pub fn parse_chat_completion(body: &str, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
    #[derive(Deserialize)]
    struct Body {
        choices: Vec<Choice>,
        #[serde(default)]
        usage: Option<Usage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }
    #[derive(Deserialize)]
    struct Message {
        #[serde(default)]
        content: Option<String>,
    }
    #[derive(Deserialize)]
    struct Usage {
        prompt_tokens: Option<u64>,
        completion_tokens: Option<u64>,
    }

    let parsed: Body =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;

    match parsed.usage {
        Some(Usage {
            prompt_tokens: Some(p),
            completion_tokens: Some(c),
        }) => Ok(ChatResponse {
            text,
            usage: TokenUsage::new(p, c),
            usage_estimated: false,
        }),
        _ => Ok(ChatResponse {
            usage: estimate_usage(request, &text),
            text,
            usage_estimated: true,
        }),
    }
}

/// An injected failure in a scripted run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    RateLimited,
    Timeout,
    Auth,
    Malformed,
}

impl Fault {
    fn into_error(self) -> BackendError {
        match self {
            Fault::RateLimited => BackendError::RateLimited { attempts: 1 },
            Fault::Timeout => BackendError::Transport("request timed out".into()),
            Fault::Auth => BackendError::Auth("scripted credential failure".into()),
            Fault::Malformed => BackendError::MalformedResponse("scripted malformed payload".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEntry {
    Reply { text: String, usage: Option<TokenUsage> },
    Fault(Fault),
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>, usage: TokenUsage) -> Self {
        Self::Reply {
            text: text.into(),
            usage: Some(usage),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    usage: Option<TokenUsage>,
    #[serde(default)]
    fault: Option<Fault>,
}

/// Replays a fixed list of replies and faults, one per call, in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Mutex<VecDeque<ScriptEntry>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptEntry>) -> Result<Self, BackendError> {
        if script.is_empty() {
            return Err(BackendError::EmptyScript);
        }
        Ok(Self {
            entries: Mutex::new(script.into()),
            requests: Mutex::new(Vec::new()),
        })
    }

    /// One JSON object per line: `{"text": .., "usage": {..}}` or `{"fault": "rate_limited"}`.
    pub fn from_jsonl(source: &str) -> Result<Self, String> {
        let mut script = Vec::new();
        for (n, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine =
                serde_json::from_str(line).map_err(|e| format!("script line {}: {e}", n + 1))?;
            let entry = match (parsed.text, parsed.fault) {
                (Some(text), None) => ScriptEntry::Reply {
                    text,
                    usage: parsed.usage,
                },
                (None, Some(fault)) => ScriptEntry::Fault(fault),
                _ => {
                    return Err(format!(
                        "script line {}: exactly one of \"text\" or \"fault\" is required",
                        n + 1
                    ))
                }
            };
            script.push(entry);
        }
        Self::new(script).map_err(|e| e.to_string())
    }

    pub fn remaining(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut requests = self.requests.lock().unwrap();
        requests.push(request.clone());
        let calls = requests.len();
        let entry = self
            .entries
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(BackendError::ScriptExhausted(calls - 1))?;
        match entry {
            ScriptEntry::Reply {
                text,
                usage: Some(usage),
            } => Ok(ChatResponse {
                text,
                usage,
                usage_estimated: false,
            }),
            ScriptEntry::Reply { text, usage: None } => Ok(ChatResponse {
                usage: estimate_usage(request, &text),
                text,
                usage_estimated: true,
            }),
            ScriptEntry::Fault(fault) => Err(fault.into_error()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub initial_delay: Duration,
    pub factor: f64,
    /// Relative jitter; 0.2 spreads each delay uniformly over +/-20%.
    pub jitter: f64,
    pub max_delay: Duration,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            initial_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
            max_delay: Duration::from_secs(30),
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0 for the first retry), before jitter.
    pub fn base_delay(&self, retry: u32) -> Duration {
        let scaled = self.initial_delay.as_secs_f64() * self.factor.powi(retry as i32);
        Duration::from_secs_f64(scaled.min(self.max_delay.as_secs_f64()))
    }

    pub fn delay<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        let base = self.base_delay(retry).as_secs_f64();
        let spread = if self.jitter > 0.0 {
            rng.random_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Duration::from_secs_f64((base * (1.0 + spread)).min(self.max_delay.as_secs_f64()))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested delays instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, duration: Duration) {
        self.delays.lock().unwrap().push(duration);
    }
}

/// Wraps a backend and retries transient failures.
pub struct RetryingBackend<B> {
    inner: B,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    rng: Mutex<ChaCha8Rng>,
}

impl<B: ChatBackend> RetryingBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy, sleeper: Arc<dyn Sleeper>, jitter_seed: u64) -> Self {
        Self {
            inner,
            policy,
            sleeper,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(jitter_seed)),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for RetryingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let max_attempts = self.policy.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.inner.complete(request) {
                Ok(response) => return Ok(response),
                Err(err) if err.is_transient() && attempt < max_attempts => {
                    let delay = self.policy.delay(attempt - 1, &mut *self.rng.lock().unwrap());
                    self.sleeper.sleep(delay);
                    attempt += 1;
                }
                Err(BackendError::RateLimited { .. }) => {
                    return Err(BackendError::RateLimited { attempts: attempt })
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[cfg(feature = "http")]
pub use http::HttpChatBackend;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use super::{parse_chat_completion, BackendError, ChatBackend, ChatRequest, ChatResponse};

    pub const API_KEY_VAR: &str = "SEEDFORGE_API_KEY";

    /// Single-shot client for an OpenAI-compatible `/chat/completions` endpoint.
    /// Wrap it in [`super::RetryingBackend`] for backoff.
    pub struct HttpChatBackend {
        client: reqwest::blocking::Client,
        url: String,
        api_key: String,
    }

    impl HttpChatBackend {
        pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self, BackendError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            Ok(Self {
                client,
                url: endpoint(base_url, "chat/completions"),
                api_key,
            })
        }

        pub fn from_env(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
            let key = std::env::var(API_KEY_VAR)
                .map_err(|_| BackendError::Auth(format!("{API_KEY_VAR} is not set")))?;
            Self::new(base_url, key, timeout)
        }
    }

    pub(crate) fn endpoint(base_url: &str, path: &str) -> String {
        let base = base_url.trim_end_matches('/');
        if base.ends_with(path) {
            base.to_owned()
        } else {
            format!("{base}/{path}")
        }
    }

    pub(crate) fn status_error(status: u16, body: String) -> BackendError {
        match status {
            401 | 403 => BackendError::Auth(body),
            429 => BackendError::RateLimited { attempts: 1 },
            408 | 500..=599 => BackendError::Transport(format!("HTTP {status}: {body}")),
            _ => BackendError::Http { status, body },
        }
    }

    pub(crate) fn send_error(err: reqwest::Error) -> BackendError {
        BackendError::Transport(err.to_string())
    }

    impl ChatBackend for HttpChatBackend {
        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
            let response = self
                .client
                .post(&self.url)
                .bearer_auth(&self.api_key)
                .json(request)
                .send()
                .map_err(send_error)?;
            let status = response.status().as_u16();
            let body = response.text().map_err(send_error)?;
            if !(200..300).contains(&status) {
                return Err(status_error(status, body));
            }
            parse_chat_completion(&body, request)
        }
    }
}

#[cfg(feature = "http")]
pub(crate) use http::{endpoint, send_error, status_error};
#[cfg(feature = "http")]
pub use http::API_KEY_VAR;
