//! The creation loop: render the prompt for the current seed, call the model,
//! validate and deduplicate, pick the next seed, until `k` records exist.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, ChatResponse};
use crate::embedding::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::model::{
    CostLedger, CreationConfig, ExampleId, FormattingExample, GeneratedRecord, LabelMode, ModelError,
    RejectionLog, Strategy, TokenPrice, Usd,
};
use crate::prompt::build_request;
use crate::sampler::{Sampler, SamplerError};
use crate::validator::{dedup_key, validate_completion, DedupCache, RejectReason, Rejection, ValidationOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("seed does not match the label mode: {0}")]
    SeedMismatch(String),
    #[error("budget exceeded: spent {spent}, cap {cap}")]
    BudgetExceeded { spent: Usd, cap: Usd },
    #[error("gave up after {attempts} completion call(s) with {accepted} of {target} records")]
    AttemptsExhausted {
        attempts: usize,
        accepted: usize,
        target: usize,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("output sink failed: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub iteration: u32,
    pub seed_id: ExampleId,
    pub mean_cosine_to_initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: Strategy,
    pub dataset: Vec<GeneratedRecord>,
    pub ledger: CostLedger,
    pub rejections: RejectionLog,
    /// Candidates that passed validation, including any dropped by final truncation.
    pub accepted: u64,
    pub truncated: u64,
    pub parsed_candidates: u64,
    pub iterations: u32,
    pub drift_rows: Vec<DriftRow>,
    pub drift_available: bool,
}

impl RunReport {
    fn new(strategy: Strategy, drift_available: bool) -> Self {
        Self {
            strategy,
            dataset: Vec::new(),
            ledger: CostLedger::new(),
            rejections: RejectionLog::default(),
            accepted: 0,
            truncated: 0,
            parsed_candidates: 0,
            iterations: 0,
            drift_rows: Vec::new(),
            drift_available,
        }
    }

    /// accepted + rejected == parsed candidates.
    pub fn is_conserved(&self) -> bool {
        self.accepted + self.rejections.total() == self.parsed_candidates
    }
}

/// A failed run together with everything produced before the failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: RunError,
    pub report: Box<RunReport>,
}

/// What one completion call produced.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationEvent<'a> {
    pub iteration: u32,
    pub seed_id: &'a ExampleId,
    /// Records appended to the dataset (after truncation to `k`).
    pub kept: &'a [GeneratedRecord],
    pub rejections: &'a [Rejection],
}

/// Receives each iteration as it completes, e.g. to append to files.
pub trait RunObserver {
    fn on_iteration(&mut self, event: &IterationEvent<'_>) -> Result<(), String>;
}

impl RunObserver for () {
    fn on_iteration(&mut self, _event: &IterationEvent<'_>) -> Result<(), String> {
        Ok(())
    }
}

pub fn create_dataset(
    config: &CreationConfig,
    seed: &FormattingExample,
    chat: &dyn ChatBackend,
    embedder: Option<&dyn Embedder>,
) -> Result<RunReport, RunFailure> {
    create_dataset_with(config, seed, chat, embedder, &mut ())
}

pub fn create_dataset_with(
    config: &CreationConfig,
    seed: &FormattingExample,
    chat: &dyn ChatBackend,
    embedder: Option<&dyn Embedder>,
    observer: &mut dyn RunObserver,
) -> Result<RunReport, RunFailure> {
    let mut run = Run {
        config,
        chat,
        embedder,
        report: RunReport::new(config.strategy, embedder.is_some()),
        cache: DedupCache::new(),
        initial: None,
    };
    match run.execute(seed, observer) {
        Ok(()) => Ok(run.report),
        Err(error) => Err(RunFailure {
            error,
            report: Box::new(run.report),
        }),
    }
}

fn check_seed(config: &CreationConfig, seed: &FormattingExample) -> Result<(), RunError> {
    if let LabelMode::Fixed(allowed) = &config.label_mode {
        let want: BTreeSet<&String> = allowed.iter().collect();
        let got: BTreeSet<&String> = seed.options().iter().collect();
        if want != got || seed.options().len() != allowed.len() {
            return Err(RunError::SeedMismatch(format!(
                "seed options {:?} differ from fixed options {:?}",
                seed.options(),
                allowed
            )));
        }
    }
    Ok(())
}

struct Run<'a> {
    config: &'a CreationConfig,
    chat: &'a dyn ChatBackend,
    embedder: Option<&'a dyn Embedder>,
    report: RunReport,
    cache: DedupCache,
    initial: Option<EmbeddingVector>,
}

impl Run<'_> {
    fn execute(&mut self, seed: &FormattingExample, observer: &mut dyn RunObserver) -> Result<(), RunError> {
        let config = self.config;
        config.validate()?;
        if config.strategy.needs_embedder() && self.embedder.is_none() {
            return Err(SamplerError::MissingEmbedder(config.strategy).into());
        }
        check_seed(config, seed)?;

        self.cache.insert_if_absent(&dedup_key(seed));
        if let Some(embedder) = self.embedder {
            self.initial = Some(embedder.embed(seed.question())?);
        }

        let mut sampler = Sampler::new(config.strategy, seed.clone(), config.rng_seed);
        let max_attempts = config.effective_max_attempts();
        let target = config.target_count;

        while self.report.dataset.len() < target {
            let used = self.report.iterations as usize;
            if used >= max_attempts {
                return Err(RunError::AttemptsExhausted {
                    attempts: used,
                    accepted: self.report.dataset.len(),
                    target,
                });
            }
            let mut width = if config.strategy == Strategy::Tree {
                config.max_in_flight.min(max_attempts - used)
            } else {
                1
            };
            width = self.affordable_calls(width)?;

            let seeds = if config.strategy == Strategy::Tree {
                sampler.take_wave(width)
            } else {
                vec![sampler.current().clone()]
            };
            let responses = self.complete_all(&seeds);

            let mut settled = Vec::with_capacity(seeds.len());
            let mut failure = None;
            for (seed, response) in seeds.into_iter().zip(responses) {
                if failure.is_some() {
                    // later calls of a failed wave were paid for but are discarded
                    if let Ok(response) = &response {
                        self.charge(response);
                    }
                    continue;
                }
                match self.process(&seed, response, observer) {
                    Ok(batch) => settled.push((seed, batch)),
                    Err(err) => failure = Some(err),
                }
            }
            if let Some(err) = failure {
                return Err(err);
            }
            if let Some(cap) = config.budget_cap {
                if self.report.ledger.total() > cap {
                    return Err(RunError::BudgetExceeded {
                        spent: self.report.ledger.total(),
                        cap,
                    });
                }
            }
            if self.report.dataset.len() >= target {
                break;
            }

            if config.strategy == Strategy::Tree {
                sampler.settle_wave(settled)?;
            } else if let Some((_, batch)) = settled.pop() {
                if !batch.is_empty() {
                    sampler.advance(&batch, self.embedder)?;
                }
            }
        }
        Ok(())
    }

    /// How many of `wanted` calls fit under the budget cap at the mean observed call cost.
    fn affordable_calls(&self, wanted: usize) -> Result<usize, RunError> {
        let (Some(cap), Some(mean)) = (self.config.budget_cap, self.report.ledger.mean_call_cost()) else {
            return Ok(wanted);
        };
        let spent = self.report.ledger.total();
        let mut calls = 0;
        while calls < wanted {
            let projected = spent.pico().saturating_add(mean.pico().saturating_mul(calls as u64 + 1));
            if projected > cap.pico() {
                break;
            }
            calls += 1;
        }
        if calls == 0 {
            return Err(RunError::BudgetExceeded { spent, cap });
        }
        Ok(calls)
    }

    fn complete_all(&self, seeds: &[FormattingExample]) -> Vec<Result<ChatResponse, BackendError>> {
        let requests: Vec<_> = seeds.iter().map(|s| build_request(self.config, s)).collect();
        if requests.len() == 1 {
            return vec![self.chat.complete(&requests[0])];
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|request| scope.spawn(move || self.chat.complete(request)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("completion worker panicked"))
                .collect()
        })
    }

    fn charge(&mut self, response: &ChatResponse) {
        self.report.ledger.add_usage(response.usage, self.price());
        if response.usage_estimated {
            self.report.ledger.mark_estimated();
        }
    }

    fn price(&self) -> TokenPrice {
        self.config.price
    }

    /// Validates one response, appends kept records and returns the full accepted batch.
    fn process(
        &mut self,
        seed: &FormattingExample,
        response: Result<ChatResponse, BackendError>,
        observer: &mut dyn RunObserver,
    ) -> Result<Vec<GeneratedRecord>, RunError> {
        self.report.iterations += 1;
        let iteration = self.report.iterations;

        let outcome = match response {
            Ok(response) => {
                self.charge(&response);
                validate_completion(&response.text, &self.config.label_mode, seed, &self.cache, iteration)
            }
            Err(BackendError::MalformedResponse(detail)) => ValidationOutcome {
                accepted: Vec::new(),
                rejections: vec![Rejection {
                    index: 0,
                    offset: 0,
                    fragment: detail,
                    reason: RejectReason::Malformed,
                }],
            },
            Err(err) => {
                self.report.iterations -= 1;
                return Err(err.into());
            }
        };

        outcome.tally(&mut self.report.rejections);
        self.report.parsed_candidates += outcome.candidates() as u64;
        self.report.accepted += outcome.accepted.len() as u64;

        let room = self.config.target_count - self.report.dataset.len();
        let keep = outcome.accepted.len().min(room);
        self.report.truncated += (outcome.accepted.len() - keep) as u64;
        let kept = &outcome.accepted[..keep];

        let mean_cosine = self.mean_cosine(&outcome.accepted)?;
        self.report.drift_rows.push(DriftRow {
            iteration,
            seed_id: seed.id().clone(),
            mean_cosine_to_initial: mean_cosine,
        });

        observer
            .on_iteration(&IterationEvent {
                iteration,
                seed_id: seed.id(),
                kept,
                rejections: &outcome.rejections,
            })
            .map_err(RunError::Sink)?;
        self.report.dataset.extend_from_slice(kept);
        Ok(outcome.accepted)
    }

    fn mean_cosine(&self, batch: &[GeneratedRecord]) -> Result<Option<f64>, RunError> {
        let (Some(embedder), Some(initial)) = (self.embedder, &self.initial) else {
            return Ok(None);
        };
        if batch.is_empty() {
            return Ok(None);
        }
        let mut sum = 0.0;
        for record in batch {
            sum += cosine(initial, &embedder.embed(record.example.question())?)?;
        }
        Ok(Some(sum / batch.len() as f64))
    }
}

/// Projected spend for `target_count` records given observed batches of
/// `(accepted, tokens)`: ceil(k / mean accepted) x mean tokens / 1000 x price.
/// Infinite when no observed batch accepted anything.
pub fn estimate_cost(target_count: usize, price_per_1k: f64, observed: &[(usize, f64)]) -> f64 {
    if observed.is_empty() {
        return f64::INFINITY;
    }
    let n = observed.len() as f64;
    let mean_accepted = observed.iter().map(|(a, _)| *a as f64).sum::<f64>() / n;
    let mean_tokens = observed.iter().map(|(_, t)| *t).sum::<f64>() / n;
    if mean_accepted <= 0.0 {
        return f64::INFINITY;
    }
    let batches = (target_count as f64 / mean_accepted).ceil();
    batches * mean_tokens / 1000.0 * price_per_1k
}
