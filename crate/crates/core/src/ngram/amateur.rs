use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{EntryFilter, NgramModel, OrderTable};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::lm::{truncate_context, CheckpointId, CheckpointedModel, LanguageModel, NextTokenDist};
use crate::registry::SnapshotSource;
use crate::rng::{mix_all, unit_from_bits};
use crate::TokenId;

/// Default reduction factors for the smaller-model amateur.
pub const DEFAULT_REDUCTION_FACTORS: [u32; 4] = [10, 20, 50, 100];

/// How to derive a BAD model from a GOOD one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmateurSpec {
    /// A stored snapshot of the same family, trained on fewer tokens.
    EarlierCheckpoint { step: u64 },
    /// Lower order and pruned counts, about `1/factor` of the entries.
    Smaller { factor: u32 },
    /// Per-query random masking of count entries.
    Noisy { rate: f64 },
}

impl fmt::Display for AmateurSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmateurSpec::EarlierCheckpoint { step } => write!(f, "early{step}"),
            AmateurSpec::Smaller { factor } => write!(f, "small{factor}"),
            AmateurSpec::Noisy { rate } => write!(f, "noisy{rate}"),
        }
    }
}

impl AmateurSpec {
    pub fn validate(&self, good_step: u64) -> Result<()> {
        match *self {
            AmateurSpec::EarlierCheckpoint { step } if step >= good_step => Err(Error::config(format!(
                "earlier checkpoint step {step} must precede the good model's step {good_step}"
            ))),
            AmateurSpec::Smaller { factor } if factor < 2 => {
                Err(Error::config(format!("reduction factor must be at least 2, got {factor}")))
            }
            AmateurSpec::Noisy { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::config(format!("noise rate must be in [0, 1), got {rate}")))
            }
            _ => Ok(()),
        }
    }
}

fn ngram_of(model: &CheckpointedModel) -> Result<&NgramModel> {
    model
        .downcast::<NgramModel>()
        .ok_or_else(|| Error::Contract(format!("{} is not an n-gram snapshot", model.id)))
}

/// Derive a BAD model from `good`. Earlier checkpoints are fetched from `source`.
pub fn derive_amateur(
    good: &CheckpointedModel,
    spec: &AmateurSpec,
    rng_seed: u64,
    source: &(impl SnapshotSource + ?Sized),
) -> Result<CheckpointedModel> {
    spec.validate(good.id.step)?;
    match *spec {
        AmateurSpec::EarlierCheckpoint { step } => source.load_snapshot(&CheckpointId::new(good.id.family.clone(), step)),
        AmateurSpec::Smaller { factor } => {
            let small = shrink(ngram_of(good)?, factor)?;
            let meta = json_digest(&(&good.meta, spec))?;
            let id = CheckpointId::new(format!("{}-small{factor}", good.id.family), good.id.step);
            Ok(CheckpointedModel::new(id, meta, Arc::new(small)))
        }
        AmateurSpec::Noisy { rate } => {
            let noisy = NoisyNgram::new(good.clone(), rate, rng_seed)?;
            let id = noisy.derived_id();
            let meta = json_digest(&(&good.meta, spec, rng_seed))?;
            Ok(CheckpointedModel::new(id, meta, Arc::new(noisy)))
        }
    }
}

/// Reduce order by one and prune the lowest-count entries until about
/// `entries / factor` remain. Ties are broken by context, then token.
pub fn shrink(model: &NgramModel, factor: u32) -> Result<NgramModel> {
    let entries = model.entry_count();
    let target = (entries as f64 / factor as f64).round() as usize;
    if target < 1 {
        return Err(Error::config(format!(
            "cannot shrink a model with {entries} entries by a factor of {factor}"
        )));
    }
    let base = if model.order() > 1 {
        let lower = model.truncated(model.order() - 1)?;
        if lower.entry_count() >= target {
            lower
        } else {
            model.clone()
        }
    } else {
        model.clone()
    };

    let mut all: Vec<(u32, &[TokenId], TokenId, usize)> = base
        .tables
        .iter()
        .enumerate()
        .flat_map(|(k, t)| t.entries().map(move |(ctx, tok, c)| (c, ctx, tok, k)))
        .collect();
    let drop = all.len() - target.min(all.len());
    all.sort_unstable_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(&b.2)));
    let mut kept: Vec<Vec<(Vec<TokenId>, u32)>> = vec![Vec::new(); base.order()];
    for &(c, ctx, tok, k) in &all[drop..] {
        let mut key = ctx.to_vec();
        key.push(tok);
        kept[k].push((key, c));
    }
    let tables = kept
        .into_iter()
        .enumerate()
        .map(|(k, mut rows)| {
            rows.sort_unstable();
            OrderTable::from_sorted(k, rows)
        })
        .collect();
    Ok(NgramModel::from_parts(base.order, base.vocab_size, base.add_k, base.weights, tables))
}

struct QueryMask {
    query: u64,
    rate: f64,
}

impl EntryFilter for QueryMask {
    #[inline]
    fn keep(&self, ctx_len: usize, _ctx: &[TokenId], token: TokenId) -> bool {
        unit_from_bits(mix_all(self.query, [ctx_len as u64, token as u64])) >= self.rate
    }
}

/// Inference-time noise: for each query, each count entry the query touches
/// is dropped with probability `rate`, then the model is re-smoothed. The mask
/// is a pure function of `(seed, context, order, token)`.
#[derive(Debug, Clone)]
pub struct NoisyNgram {
    base: CheckpointedModel,
    rate: f64,
    seed: u64,
}

impl NoisyNgram {
    pub fn new(base: CheckpointedModel, rate: f64, seed: u64) -> Result<Self> {
        AmateurSpec::Noisy { rate }.validate(u64::MAX)?;
        ngram_of(&base)?;
        Ok(NoisyNgram { base, rate, seed })
    }

    pub fn base(&self) -> &CheckpointedModel {
        &self.base
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derived_id(&self) -> CheckpointId {
        CheckpointId::new(format!("{}-noisy{}-s{}", self.base.id.family, self.rate, self.seed), self.base.id.step)
    }

    fn model(&self) -> &NgramModel {
        self.base.downcast::<NgramModel>().expect("checked at construction")
    }

    fn mask<'a>(&self, context: &'a [TokenId]) -> (&'a [TokenId], QueryMask) {
        let context = truncate_context(context, self.max_context());
        let query = mix_all(self.seed, std::iter::once(context.len() as u64).chain(context.iter().map(|&t| t as u64)));
        (context, QueryMask { query, rate: self.rate })
    }
}

impl LanguageModel for NoisyNgram {
    fn vocab_size(&self) -> usize {
        self.model().vocab_size()
    }

    fn max_context(&self) -> usize {
        self.model().max_context()
    }

    fn next_dist(&self, context: &[TokenId]) -> NextTokenDist {
        if self.rate == 0.0 {
            return self.model().next_dist(context);
        }
        let (ctx, mask) = self.mask(context);
        NextTokenDist::from_normalized(self.model().dist_filtered(ctx, &mask))
    }

    fn token_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        if self.rate == 0.0 {
            return self.model().token_prob(context, token);
        }
        let (ctx, mask) = self.mask(context);
        self.model().prob_filtered(ctx, token, &mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::perplexity;
    use crate::ngram::{train_ngram, NgramConfig};

    fn family() -> Vec<CheckpointedModel> {
        let corpus: Vec<TokenId> = (0..6000u32).map(|i| ((i * 31 + i / 7) % 37 % 23) as TokenId).collect();
        train_ngram(&corpus, 24, &NgramConfig { order: 3, ..Default::default() }, 2000, "fam").unwrap()
    }

    #[test]
    fn earlier_checkpoint_is_the_stored_snapshot() {
        let snaps = family();
        let bad = derive_amateur(&snaps[2], &AmateurSpec::EarlierCheckpoint { step: 1 }, 0, snaps.as_slice()).unwrap();
        assert_eq!(bad.id, snaps[0].id);
        assert_eq!(bad.next_dist(&[3, 4]), snaps[0].next_dist(&[3, 4]));
    }

    #[test]
    fn missing_or_later_steps_are_rejected() {
        let snaps = family();
        let src = &snaps[..1];
        let missing = derive_amateur(&snaps[2], &AmateurSpec::EarlierCheckpoint { step: 2 }, 0, src);
        assert!(matches!(missing, Err(Error::Registry(_))));
        let later = derive_amateur(&snaps[1], &AmateurSpec::EarlierCheckpoint { step: 2 }, 0, snaps.as_slice());
        assert!(matches!(later, Err(Error::Config(_))));
    }

    #[test]
    fn zero_rate_noise_is_the_identity() {
        let snaps = family();
        let bad = derive_amateur(&snaps[2], &AmateurSpec::Noisy { rate: 0.0 }, 9, snaps.as_slice()).unwrap();
        for ctx in [&[][..], &[1], &[5, 6], &[22, 22, 22]] {
            assert_eq!(bad.next_dist(ctx), snaps[2].next_dist(ctx));
        }
    }

    #[test]
    fn noise_is_deterministic_and_consistent() {
        let snaps = family();
        let bad = derive_amateur(&snaps[2], &AmateurSpec::Noisy { rate: 0.3 }, 5, snaps.as_slice()).unwrap();
        let other = derive_amateur(&snaps[2], &AmateurSpec::Noisy { rate: 0.3 }, 6, snaps.as_slice()).unwrap();
        let d = bad.next_dist(&[2, 9]);
        assert_eq!(d, bad.next_dist(&[2, 9]));
        assert_ne!(d, other.next_dist(&[2, 9]));
        assert_ne!(d, snaps[2].next_dist(&[2, 9]));
        for t in 0..24 {
            assert_eq!(d.prob(t).to_bits(), bad.token_prob(&[2, 9], t).to_bits());
        }
    }

    #[test]
    fn shrinking_hits_the_target_and_is_worse() {
        let snaps = family();
        let good = snaps[2].downcast::<NgramModel>().unwrap();
        let small = shrink(good, 10).unwrap();
        let target = good.entry_count() as f64 / 10.0;
        assert!((small.entry_count() as f64 - target).abs() <= 0.2 * target);
        let eval: Vec<TokenId> = (0..500u32).map(|i| ((i * 31 + i / 7) % 37 % 23) as TokenId).collect();
        assert!(perplexity(&small, &eval).unwrap() > perplexity(good, &eval).unwrap());
    }

    #[test]
    fn shrinking_a_tiny_model_is_infeasible() {
        let snaps = train_ngram(&[1, 1, 1], 3, &NgramConfig { order: 1, ..Default::default() }, 3, "t").unwrap();
        let r = derive_amateur(&snaps[0], &AmateurSpec::Smaller { factor: 10 }, 0, snaps.as_slice());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
