//! The language-model contract shared by decoding, generation and evaluation.

use std::any::Any;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Absolute tolerance on `sum(probs) == 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Next-token probabilities for one context. Every entry is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDist {
    probs: Vec<f64>,
}

impl NextTokenDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Contract("empty distribution".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Contract(format!("probability of token {i} is {p}; must be finite and > 0")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Contract(format!("probabilities sum to {sum}")));
        }
        Ok(NextTokenDist { probs })
    }

    /// Normalize positive weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Contract(format!("weights sum to {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(vocab_size: usize) -> Self {
        NextTokenDist { probs: vec![1.0 / vocab_size as f64; vocab_size] }
    }

    /// Skips validation; backends use this on outputs that are normalized by construction.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| *p > 0.0));
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        NextTokenDist { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token as usize]
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Lowest id among the most probable tokens.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// Lets concrete backends be recovered from a `dyn LanguageModel`.
pub trait AsAny {
    fn as_any(&self) -> &dyn Any;
}

impl<T: Any> AsAny for T {
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// A next-token predictor. Implementations must be pure functions of their
/// parameters and the context truncated to `max_context` (most recent tokens kept).
pub trait LanguageModel: AsAny + Send + Sync {
    fn vocab_size(&self) -> usize;

    fn max_context(&self) -> usize;

    fn next_dist(&self, context: &[TokenId]) -> NextTokenDist;

    /// Probability of one token. Overrides must agree bit-for-bit with `next_dist`.
    fn token_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.next_dist(context).prob(token)
    }
}

/// The most recent `max` tokens of `context`.
pub fn truncate_context(context: &[TokenId], max: usize) -> &[TokenId] {
    &context[context.len().saturating_sub(max)..]
}

/// `(family, step)` address of a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointId {
    pub family: String,
    pub step: u64,
}

impl CheckpointId {
    pub fn new(family: impl Into<String>, step: u64) -> Self {
        CheckpointId { family: family.into(), step }
    }
}

impl fmt::Display for CheckpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.family, self.step)
    }
}

impl FromStr for CheckpointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, step) = s
            .rsplit_once('@')
            .ok_or_else(|| Error::argument(format!("checkpoint id `{s}` must look like family@step")))?;
        let step = step.parse().map_err(|_| Error::argument(format!("bad step in checkpoint id `{s}`")))?;
        if family.is_empty() {
            return Err(Error::argument("empty model family"));
        }
        Ok(CheckpointId::new(family, step))
    }
}

/// A trained snapshot plus its identity and the digest of the config that produced it.
#[derive(Clone)]
pub struct CheckpointedModel {
    pub id: CheckpointId,
    pub meta: String,
    pub backend: Arc<dyn LanguageModel>,
}

impl fmt::Debug for CheckpointedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CheckpointedModel").field("id", &self.id).field("meta", &self.meta).finish()
    }
}

impl CheckpointedModel {
    pub fn new(id: CheckpointId, meta: impl Into<String>, backend: Arc<dyn LanguageModel>) -> Self {
        CheckpointedModel { id, meta: meta.into(), backend }
    }

    /// The concrete backend, if it is a `T`.
    pub fn downcast<T: 'static>(&self) -> Option<&T> {
        <dyn LanguageModel as AsAny>::as_any(&*self.backend).downcast_ref()
    }
}

impl LanguageModel for CheckpointedModel {
    fn vocab_size(&self) -> usize {
        self.backend.vocab_size()
    }

    fn max_context(&self) -> usize {
        self.backend.max_context()
    }

    fn next_dist(&self, context: &[TokenId]) -> NextTokenDist {
        self.backend.next_dist(context)
    }

    fn token_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.backend.token_prob(context, token)
    }
}

/// Per-token negative log-likelihoods in nats; token `i` is scored given `tokens[..i]`.
pub fn token_nlls(model: &dyn LanguageModel, tokens: &[TokenId]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::argument("cannot score an empty token sequence"));
    }
    let max = model.max_context();
    tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            if tok as usize >= model.vocab_size() {
                return Err(Error::argument(format!("token {tok} outside vocabulary of {}", model.vocab_size())));
            }
            Ok(-model.token_prob(truncate_context(&tokens[..i], max), tok).ln())
        })
        .collect()
}

/// Total negative log-likelihood `-Σ ln p(x_i | x_<i)` in nats.
pub fn sequence_nll(model: &dyn LanguageModel, tokens: &[TokenId]) -> Result<f64> {
    Ok(token_nlls(model, tokens)?.iter().sum())
}

pub fn perplexity(model: &dyn LanguageModel, eval_stream: &[TokenId]) -> Result<f64> {
    let nll = sequence_nll(model, eval_stream)?;
    Ok((nll / eval_stream.len() as f64).exp())
}

/// Uniform distribution over a fixed vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct UniformModel {
    pub vocab_size: usize,
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_context(&self) -> usize {
        0
    }

    fn next_dist(&self, _context: &[TokenId]) -> NextTokenDist {
        NextTokenDist::uniform(self.vocab_size)
    }
}
