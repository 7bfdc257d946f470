use rayon::prelude::*;

use super::outcomes::{Aggregation, Direction, TaskSpec};
use crate::corpus::{Document, MinimalPair};
use crate::error::{Error, Result};
use crate::lm::{truncate_context, LanguageModel};
use crate::tokenizer::TokenizerModel;
use crate::TokenId;

/// Default window length for perplexity outcomes.
pub const DEFAULT_WINDOW: usize = 128;

/// Turns a model into per-example outcomes on a fixed dataset.
pub trait TaskAdapter: Send + Sync {
    fn spec(&self) -> TaskSpec;

    fn example_count(&self) -> usize;

    fn score(&self, model: &dyn LanguageModel) -> Result<Vec<f64>>;
}

/// Mean NLL per fixed-length window of the evaluation stream. Every token is
/// scored with its full preceding context in the stream, so `exp` of the mean
/// window NLL equals the stream perplexity over the covered tokens.
#[derive(Debug, Clone)]
pub struct PerplexityTask {
    stream: Vec<TokenId>,
    window: usize,
    windows: usize,
}

impl PerplexityTask {
    /// Documents are encoded and joined with EOS after each. A trailing
    /// partial window is dropped unless it is the only one.
    pub fn from_documents(docs: &[Document], tok: &TokenizerModel, window: usize) -> Result<Self> {
        let mut stream = Vec::new();
        for doc in docs {
            stream.extend(tok.encode(&doc.text));
            stream.push(tok.eos());
        }
        Self::from_stream(stream, window)
    }

    pub fn from_stream(stream: Vec<TokenId>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("perplexity window must be positive"));
        }
        if stream.is_empty() {
            return Err(Error::config("empty evaluation stream"));
        }
        let (window, windows) =
            if stream.len() < window { (stream.len(), 1) } else { (window, stream.len() / window) };
        Ok(PerplexityTask { stream, window, windows })
    }

    pub fn covered_tokens(&self) -> &[TokenId] {
        &self.stream[..self.window * self.windows]
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl TaskAdapter for PerplexityTask {
    fn spec(&self) -> TaskSpec {
        TaskSpec::perplexity()
    }

    fn example_count(&self) -> usize {
        self.windows
    }

    fn score(&self, model: &dyn LanguageModel) -> Result<Vec<f64>> {
        let v = model.vocab_size();
        if let Some(t) = self.stream.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Contract(format!("token {t} outside the model vocabulary of {v}")));
        }
        let max = model.max_context();
        Ok((0..self.windows)
            .into_par_iter()
            .map(|w| {
                let span = w * self.window..(w + 1) * self.window;
                let nll: f64 = span
                    .map(|i| -model.token_prob(truncate_context(&self.stream[..i], max), self.stream[i]).ln())
                    .sum();
                nll / self.window as f64
            })
            .collect())
    }
}

/// Minimal-pair preference: outcome 1 when the acceptable sentence has the
/// strictly lower NLL, each sentence scored after a single EOS.
#[derive(Debug, Clone)]
pub struct MinimalPairTask {
    name: String,
    pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

impl MinimalPairTask {
    pub fn new(name: impl Into<String>, pairs: &[MinimalPair], tok: &TokenizerModel) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("minimal-pair task needs at least one pair"));
        }
        let eos = tok.eos();
        let enc = |s: &str| {
            let mut t = vec![eos];
            t.extend(tok.encode(s));
            t
        };
        let pairs: Vec<_> = pairs.iter().map(|p| (enc(&p.good), enc(&p.bad))).collect();
        if let Some(i) = pairs.iter().position(|(g, b)| g.len() < 2 || b.len() < 2) {
            return Err(Error::config(format!("minimal pair {i} has an empty sentence")));
        }
        Ok(MinimalPairTask { name: name.into(), pairs })
    }
}

fn conditional_nll(model: &dyn LanguageModel, tokens: &[TokenId]) -> f64 {
    let max = model.max_context();
    (1..tokens.len()).map(|i| -model.token_prob(truncate_context(&tokens[..i], max), tokens[i]).ln()).sum()
}

impl TaskAdapter for MinimalPairTask {
    fn spec(&self) -> TaskSpec {
        TaskSpec {
            name: self.name.clone(),
            direction: Direction::HigherBetter,
            aggregation: Aggregation::Mean,
            display_scale: 100.0,
            in_mu_delta_rel: true,
        }
    }

    fn example_count(&self) -> usize {
        self.pairs.len()
    }

    fn score(&self, model: &dyn LanguageModel) -> Result<Vec<f64>> {
        let v = model.vocab_size();
        if self.pairs.iter().flat_map(|(g, b)| g.iter().chain(b)).any(|&t| t as usize >= v) {
            return Err(Error::Contract(format!("pair tokens outside the model vocabulary of {v}")));
        }
        Ok(self
            .pairs
            .par_iter()
            .map(|(g, b)| if conditional_nll(model, g) < conditional_nll(model, b) { 1.0 } else { 0.0 })
            .collect())
    }
}
