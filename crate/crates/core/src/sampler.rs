//! Self-reference seed selection: picks the formatting example for the next
//! iteration from the records accepted in the previous one.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{cosine, EmbedError, Embedder};
use crate::model::{ExampleId, FormattingExample, GeneratedRecord, Strategy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("accepted batch is empty")]
    EmptyBatch,
    #[error("tree frontier is empty")]
    EmptyFrontier,
    #[error("strategy {0} needs an embedder")]
    MissingEmbedder(Strategy),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

/// Index of the smallest (or largest) score; ties resolve to the lowest index.
pub fn select_extreme(scores: &[f64], extreme: Extreme) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (index, &score) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, current)) => match extreme {
                Extreme::Min => score < current,
                Extreme::Max => score > current,
            },
        };
        if better {
            best = Some((index, score));
        }
    }
    best.map(|(index, _)| index)
}

/// Cosine similarity of each candidate question to the reference question.
pub fn question_similarities<'a, I>(
    embedder: &dyn Embedder,
    reference: &FormattingExample,
    candidates: I,
) -> Result<Vec<f64>, EmbedError>
where
    I: IntoIterator<Item = &'a FormattingExample>,
{
    let anchor = embedder.embed(reference.question())?;
    candidates
        .into_iter()
        .map(|c| cosine(&anchor, &embedder.embed(c.question())?))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sampler {
    strategy: Strategy,
    current: FormattingExample,
    frontier: VecDeque<FormattingExample>,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(strategy: Strategy, initial_seed: FormattingExample, rng_seed: u64) -> Self {
        Self {
            strategy,
            current: initial_seed,
            frontier: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn current(&self) -> &FormattingExample {
        &self.current
    }

    pub fn frontier_len(&self) -> usize {
        self.frontier.len()
    }

    /// Chooses the next seed from `batch`. For the tree strategy the whole batch
    /// is queued and the next seed is the front of the queue.
    pub fn advance(
        &mut self,
        batch: &[GeneratedRecord],
        embedder: Option<&dyn Embedder>,
    ) -> Result<&FormattingExample, SamplerError> {
        if self.strategy == Strategy::Tree {
            self.frontier.extend(batch.iter().map(|r| r.example.clone()));
            self.current = self.frontier.pop_front().ok_or(SamplerError::EmptyFrontier)?;
            return Ok(&self.current);
        }
        if batch.is_empty() {
            return Err(SamplerError::EmptyBatch);
        }
        let index = match self.strategy {
            Strategy::Random => self.rng.random_range(0..batch.len()),
            Strategy::Contrastive | Strategy::Similar => {
                let embedder = embedder.ok_or(SamplerError::MissingEmbedder(self.strategy))?;
                let scores =
                    question_similarities(embedder, &self.current, batch.iter().map(|r| &r.example))?;
                let extreme = if self.strategy == Strategy::Contrastive {
                    Extreme::Min
                } else {
                    Extreme::Max
                };
                select_extreme(&scores, extreme).expect("batch is non-empty")
            }
            Strategy::Tree => unreachable!(),
        };
        self.current = batch[index].example.clone();
        Ok(&self.current)
    }

    /// Seeds for a tree-strategy wave of up to `width` concurrent generations:
    /// the current seed followed by the next queued ones.
    pub fn take_wave(&mut self, width: usize) -> Vec<FormattingExample> {
        let mut wave = vec![self.current.clone()];
        while wave.len() < width.max(1) {
            match self.frontier.pop_front() {
                Some(seed) => wave.push(seed),
                None => break,
            }
        }
        wave
    }

    /// Settles a wave taken with [`take_wave`](Self::take_wave). Seeds whose batch
    /// came back empty are put back at the front, in wave order; accepted batches
    /// are queued in wave order; the new current seed is the front of the queue.
    pub fn settle_wave(
        &mut self,
        outcomes: Vec<(FormattingExample, Vec<GeneratedRecord>)>,
    ) -> Result<&FormattingExample, SamplerError> {
        let mut retained = VecDeque::new();
        for (seed, batch) in outcomes {
            if batch.is_empty() {
                retained.push_back(seed);
            } else {
                self.frontier.extend(batch.into_iter().map(|r| r.example));
            }
        }
        retained.extend(self.frontier.drain(..));
        self.frontier = retained;
        self.current = self.frontier.pop_front().ok_or(SamplerError::EmptyFrontier)?;
        Ok(&self.current)
    }
}

/// Reproduces the seed sequence of a run from its recorded accepted batches.
/// An empty batch keeps the current seed, as the orchestrator does.
pub fn replay(
    strategy: Strategy,
    rng_seed: u64,
    initial_seed: &FormattingExample,
    batches: &[Vec<GeneratedRecord>],
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<ExampleId>, SamplerError> {
    let mut sampler = Sampler::new(strategy, initial_seed.clone(), rng_seed);
    let mut sequence = vec![initial_seed.id().clone()];
    for batch in batches {
        if !batch.is_empty() {
            sampler.advance(batch, embedder)?;
        }
        sequence.push(sampler.current().id().clone());
    }
    Ok(sequence)
}
