use rand::Rng;

use super::scoring::{cd_scores, sample_dist, sample_next, truncate_top_k, truncate_top_p, v_head_excluding, ScoredSupport};
use super::strategy::{DecodingStrategy, StrategyKind};
use crate::error::{Error, Result};
use crate::lm::{truncate_context, LanguageModel, NextTokenDist};
use crate::TokenId;

/// Apply one strategy to the next-token distributions of a single step:
/// mask, score, then truncate. `eos` is only consulted when `ban_eos` is set.
pub fn score_step(
    strategy: &DecodingStrategy,
    good: &NextTokenDist,
    bad: Option<&NextTokenDist>,
    eos: Option<TokenId>,
) -> Result<ScoredSupport> {
    let banned = if strategy.ban_eos { eos } else { None };
    let support = if strategy.kind.uses_vhead() {
        v_head_excluding(good, strategy.alpha, banned)
    } else {
        (0..good.len() as TokenId).filter(|&t| Some(t) != banned).collect()
    };
    let scored = if strategy.is_contrastive() {
        let bad = bad.ok_or_else(|| Error::config(format!("{} needs a BAD model", strategy.kind.name())))?;
        cd_scores(good, bad, strategy.lambda, support)?
    } else {
        ScoredSupport::new(support.clone(), support.iter().map(|&t| good.prob(t).ln()).collect())?
    };
    Ok(match (strategy.k, strategy.p) {
        (Some(k), _) => truncate_top_k(&scored, k),
        (_, Some(p)) => truncate_top_p(&scored, p),
        _ => scored,
    })
}

/// Check that the model pairing suits the strategy.
pub fn check_models(strategy: &DecodingStrategy, good: &dyn LanguageModel, bad: Option<&dyn LanguageModel>) -> Result<()> {
    strategy.validate()?;
    match (strategy.is_contrastive(), bad) {
        (true, None) => Err(Error::config(format!("{} needs a BAD model", strategy.kind.name()))),
        (false, Some(_)) => Err(Error::config(format!("{} must not be given a BAD model", strategy.kind.name()))),
        (true, Some(b)) if b.vocab_size() != good.vocab_size() => Err(Error::Contract(format!(
            "GOOD vocabulary {} vs BAD vocabulary {}",
            good.vocab_size(),
            b.vocab_size()
        ))),
        _ => Ok(()),
    }
}

/// Ancestral sampling of up to `max_new` tokens after `prefix`. Stops after
/// emitting `eos` (which is included in the output). Returns prefix + new tokens.
pub fn generate<R: Rng + ?Sized>(
    strategy: &DecodingStrategy,
    good: &dyn LanguageModel,
    bad: Option<&dyn LanguageModel>,
    prefix: &[TokenId],
    max_new: usize,
    eos: Option<TokenId>,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    check_models(strategy, good, bad)?;
    if prefix.is_empty() {
        return Err(Error::argument("generation prefix must be non-empty"));
    }
    let window = good.max_context().max(bad.map_or(0, |b| b.max_context()));
    let plain = strategy.kind == StrategyKind::NoContrast && !strategy.ban_eos;
    let mut out = prefix.to_vec();
    for _ in 0..max_new {
        let ctx = truncate_context(&out, window);
        let pg = good.next_dist(ctx);
        let tok = if plain {
            sample_dist(&pg, rng)
        } else {
            let pb = bad.map(|b| b.next_dist(ctx));
            sample_next(&score_step(strategy, &pg, pb.as_ref(), eos)?, rng)
        };
        out.push(tok);
        if Some(tok) == eos {
            break;
        }
    }
    Ok(out)
}
