//! Example-based synthetic dataset creation.
//!
//! A single seed formatting example is rendered as a JSON prompt, an
//! instruction-following chat model produces batches of new examples in the
//! same format, and malformed or duplicate outputs are discarded. The seed for
//! each following iteration is drawn from the previous iteration's accepted
//! outputs using one of four strategies (random, contrastive, similar, tree).

pub mod backend;
pub mod embedding;
pub mod model;
pub mod orchestrator;
pub mod persistence;
pub mod prompt;
pub mod sampler;
pub mod validator;

pub use backend::{ChatBackend, ChatRequest, ChatResponse, RetryPolicy, RetryingBackend, ScriptedBackend};
pub use embedding::{cosine, Embedder, EmbeddingVector, StubEmbedder};
pub use model::{
    CostLedger, CreationConfig, ExampleId, FormattingExample, GeneratedRecord, LabelMode, RejectionLog, Strategy,
    TokenPrice, TokenUsage, Usd,
};
pub use orchestrator::{create_dataset, create_dataset_with, estimate_cost, RunError, RunFailure, RunReport};
pub use sampler::Sampler;
pub use validator::{dedup_key, validate_completion, DedupCache, RejectReason};
