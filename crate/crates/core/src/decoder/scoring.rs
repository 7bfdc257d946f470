use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::NextTokenDist;
use crate::TokenId;

/// Floor applied to `p_B` before taking its log.
pub const BAD_PROB_FLOOR: f64 = 1e-12;

/// Candidate tokens with their logits (nats). Tokens outside `ids` score -inf.
/// `ids` is kept in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSupport {
    ids: Vec<TokenId>,
    logits: Vec<f64>,
}

impl ScoredSupport {
    pub fn new(ids: Vec<TokenId>, logits: Vec<f64>) -> Result<Self> {
        if ids.is_empty() || ids.len() != logits.len() {
            return Err(Error::Contract(format!("support of {} ids with {} logits", ids.len(), logits.len())));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("support ids must be strictly ascending".into()));
        }
        if let Some(l) = logits.iter().find(|l| !l.is_finite()) {
            return Err(Error::Contract(format!("non-finite logit {l}")));
        }
        Ok(ScoredSupport { ids, logits })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln p(x)` over the given ids.
    pub fn from_dist(dist: &NextTokenDist, ids: Vec<TokenId>) -> Self {
        let logits = ids.iter().map(|&t| dist.prob(t).ln()).collect();
        ScoredSupport { ids, logits }
    }

    /// Softmax over the support, in `ids` order.
    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// Positions ordered by descending logit, ties by ascending id.
    fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by(|&a, &b| {
            self.logits[b].partial_cmp(&self.logits[a]).unwrap_or(Ordering::Equal).then(self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    fn keep_positions(&self, mut keep: Vec<usize>) -> Self {
        keep.sort_unstable();
        ScoredSupport {
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            logits: keep.iter().map(|&i| self.logits[i]).collect(),
        }
    }
}

/// `{x : p(x) >= alpha * max_w p(w)}`, ascending. `banned` is removed before
/// the maximum is taken.
pub fn v_head_excluding(dist: &NextTokenDist, alpha: f64, banned: Option<TokenId>) -> Vec<TokenId> {
    let allowed = |t: usize| banned != Some(t as TokenId);
    let max = dist
        .probs()
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t))
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = alpha * max;
    dist.probs()
        .iter()
        .enumerate()
        .filter(|&(t, &p)| allowed(t) && p >= threshold)
        .map(|(t, _)| t as TokenId)
        .collect()
}

/// The plausibility mask: tokens with at least `alpha` times the top probability.
pub fn v_head(dist: &NextTokenDist, alpha: f64) -> Vec<TokenId> {
    v_head_excluding(dist, alpha, None)
}

/// Contrastive scores `ln p_G(x) - lambda * ln p_B(x)` over `support`.
pub fn cd_scores(good: &NextTokenDist, bad: &NextTokenDist, lambda: f64, support: Vec<TokenId>) -> Result<ScoredSupport> {
    if good.len() != bad.len() {
        return Err(Error::Contract(format!("GOOD vocabulary {} vs BAD vocabulary {}", good.len(), bad.len())));
    }
    let floor = BAD_PROB_FLOOR.ln();
    let logits = support
        .iter()
        .map(|&t| {
            let lb = bad.prob(t).ln();
            let lb = if lb < floor {
                log::debug!("clamped ln p_B for token {t}");
                floor
            } else {
                lb
            };
            good.prob(t).ln() - lambda * lb
        })
        .collect();
    ScoredSupport::new(support, logits)
}

pub fn cd_logits(good: &NextTokenDist, bad: &NextTokenDist, alpha: f64, lambda: f64) -> Result<ScoredSupport> {
    if good.len() != bad.len() {
        return Err(Error::Contract(format!("GOOD vocabulary {} vs BAD vocabulary {}", good.len(), bad.len())));
    }
    cd_scores(good, bad, lambda, v_head(good, alpha))
}

/// Keep the `k` highest logits; ties at the cut go to the lower id.
pub fn truncate_top_k(scored: &ScoredSupport, k: usize) -> ScoredSupport {
    if scored.len() <= k {
        return scored.clone();
    }
    let mut ranked = scored.ranked();
    ranked.truncate(k.max(1));
    scored.keep_positions(ranked)
}

/// Keep the smallest descending-probability prefix with mass at least `p`.
pub fn truncate_top_p(scored: &ScoredSupport, p: f64) -> ScoredSupport {
    let probs = scored.probs();
    let mut keep = Vec::new();
    let mut mass = 0.0;
    for i in scored.ranked() {
        keep.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    scored.keep_positions(keep)
}

/// A prepared categorical distribution for repeated draws.
#[derive(Debug, Clone)]
pub struct Categorical {
    ids: Vec<TokenId>,
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn new(scored: &ScoredSupport) -> Self {
        let max = scored.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let cumulative = scored
            .logits
            .iter()
            .map(|l| {
                acc += (l - max).exp();
                acc
            })
            .collect();
        Categorical { ids: scored.ids.clone(), cumulative }
    }

    /// Inverse-CDF draw using exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let total = *self.cumulative.last().expect("non-empty support");
        let target = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= target);
        self.ids[i.min(self.ids.len() - 1)]
    }
}

pub fn sample_next<R: Rng + ?Sized>(scored: &ScoredSupport, rng: &mut R) -> TokenId {
    Categorical::new(scored).sample(rng)
}

/// Inverse-CDF draw straight from a full distribution. Same law as
/// `sample_next` on `ln p` logits without the log/exp round trip.
pub fn sample_dist<R: Rng + ?Sized>(dist: &NextTokenDist, rng: &mut R) -> TokenId {
    let probs = dist.probs();
    let total: f64 = probs.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (t, &p) in probs.iter().enumerate() {
        acc += p;
        if acc > target {
            return t as TokenId;
        }
    }
    (probs.len() - 1) as TokenId
}
