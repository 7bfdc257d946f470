use std::cmp::Ordering;
use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, NextTokenDist};
use crate::TokenId;

/// Hard upper bound on the model order (context length + 1).
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramConfig {
    pub order: usize,
    pub add_k: f64,
    /// Mixture weight per context length `0..order`. Uniform when absent.
    pub interp_weights: Option<Vec<f64>>,
    pub max_order: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { order: 4, add_k: 0.01, interp_weights: None, max_order: MAX_ORDER }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order > MAX_ORDER {
            return Err(Error::config(format!("max_order {} exceeds the supported {MAX_ORDER}", self.max_order)));
        }
        if self.order == 0 || self.order > self.max_order {
            return Err(Error::config(format!("n-gram order must be in 1..={}, got {}", self.max_order, self.order)));
        }
        if !(self.add_k > 0.0 && self.add_k.is_finite()) {
            return Err(Error::config(format!("add_k must be > 0, got {}", self.add_k)));
        }
        self.weights().map(|_| ())
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        match &self.interp_weights {
            None => Ok(vec![1.0 / self.order as f64; self.order]),
            Some(w) => {
                if w.len() != self.order {
                    return Err(Error::config(format!("{} interpolation weights for order {}", w.len(), self.order)));
                }
                if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                    return Err(Error::config("interpolation weights must be non-negative"));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("interpolation weights sum to {sum}")));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Counts for one context length, sorted by (context, token).
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct OrderTable {
    pub(crate) ctx_len: usize,
    /// `n_contexts * ctx_len` ids, contexts in lexicographic order.
    pub(crate) contexts: Vec<TokenId>,
    /// `n_contexts + 1` offsets into `tokens`/`counts`.
    pub(crate) offsets: Vec<u32>,
    pub(crate) totals: Vec<u64>,
    pub(crate) tokens: Vec<TokenId>,
    pub(crate) counts: Vec<u32>,
}

impl OrderTable {
    pub(crate) fn empty(ctx_len: usize) -> Self {
        OrderTable { ctx_len, offsets: vec![0], ..Default::default() }
    }

    pub(crate) fn n_contexts(&self) -> usize {
        self.totals.len()
    }

    pub(crate) fn context(&self, i: usize) -> &[TokenId] {
        &self.contexts[i * self.ctx_len..(i + 1) * self.ctx_len]
    }

    pub(crate) fn row(&self, i: usize) -> (&[TokenId], &[u32]) {
        let r = self.offsets[i] as usize..self.offsets[i + 1] as usize;
        (&self.tokens[r.clone()], &self.counts[r])
    }

    fn find(&self, ctx: &[TokenId]) -> Option<usize> {
        debug_assert_eq!(ctx.len(), self.ctx_len);
        let (mut lo, mut hi) = (0, self.n_contexts());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.context(mid).cmp(ctx) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Build from `(context ++ [token], count)` entries sorted by key.
    pub(crate) fn from_sorted<K: AsRef<[TokenId]>>(ctx_len: usize, entries: impl IntoIterator<Item = (K, u32)>) -> Self {
        let mut t = OrderTable::empty(ctx_len);
        for (key, count) in entries {
            if count == 0 {
                continue;
            }
            let (ctx, tok) = key.as_ref().split_at(ctx_len);
            let new_ctx = t.n_contexts() == 0 || t.context(t.n_contexts() - 1) != ctx;
            if new_ctx {
                t.contexts.extend_from_slice(ctx);
                t.totals.push(0);
                t.offsets.push(t.tokens.len() as u32);
            }
            *t.totals.last_mut().unwrap() += count as u64;
            t.tokens.push(tok[0]);
            t.counts.push(count);
            *t.offsets.last_mut().unwrap() = t.tokens.len() as u32;
        }
        t
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (&[TokenId], TokenId, u32)> + '_ {
        (0..self.n_contexts()).flat_map(move |i| {
            let ctx = self.context(i);
            let (toks, counts) = self.row(i);
            toks.iter().zip(counts).map(move |(&t, &c)| (ctx, t, c))
        })
    }
}

/// Interpolated add-k n-gram model:
/// `p(x | h) = Σ_k w_k · (c_k(h_k, x) + a) / (c_k(h_k) + a·V)` where `h_k` is
/// the last `k` tokens of the history. When the history is shorter than
/// `k`, that component is dropped and the remaining weights renormalized.
#[derive(Debug, Clone)]
pub struct NgramModel {
    pub(crate) order: usize,
    pub(crate) vocab_size: usize,
    pub(crate) add_k: f64,
    pub(crate) weights: Vec<f64>,
    pub(crate) tables: Vec<OrderTable>,
    /// Context-free unigram term at full weight, filled on first use.
    unigram: OnceLock<Vec<f64>>,
}

impl PartialEq for NgramModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.vocab_size == other.vocab_size
            && self.add_k.to_bits() == other.add_k.to_bits()
            && self.weights == other.weights
            && self.tables == other.tables
    }
}

/// Which count entries a query may see. Used by the noisy amateur.
pub(crate) trait EntryFilter {
    /// True when `keep` always returns true, which allows cached terms.
    const KEEPS_ALL: bool = false;

    fn keep(&self, ctx_len: usize, ctx: &[TokenId], token: TokenId) -> bool;
}

pub(crate) struct KeepAll;

impl EntryFilter for KeepAll {
    const KEEPS_ALL: bool = true;

    #[inline]
    fn keep(&self, _: usize, _: &[TokenId], _: TokenId) -> bool {
        true
    }
}

struct Component<'a> {
    weight: f64,
    ctx: &'a [TokenId],
    row: Option<usize>,
}

impl NgramModel {
    pub(crate) fn from_parts(
        order: usize,
        vocab_size: usize,
        add_k: f64,
        weights: Vec<f64>,
        tables: Vec<OrderTable>,
    ) -> Self {
        NgramModel { order, vocab_size, add_k, weights, tables, unigram: OnceLock::new() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn interp_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of stored (context, token) count entries across all orders.
    pub fn entry_count(&self) -> usize {
        self.tables.iter().map(|t| t.tokens.len()).sum()
    }

    /// Count of `token` after `context` (which must be shorter than `order`).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u32 {
        let Some(table) = self.tables.get(context.len()) else { return 0 };
        table
            .find(context)
            .and_then(|i| {
                let (toks, counts) = table.row(i);
                toks.binary_search(&token).ok().map(|j| counts[j])
            })
            .unwrap_or(0)
    }

    pub fn context_total(&self, context: &[TokenId]) -> u64 {
        let Some(table) = self.tables.get(context.len()) else { return 0 };
        table.find(context).map(|i| table.totals[i]).unwrap_or(0)
    }

    /// Total tokens observed (the order-0 total).
    pub fn tokens_seen(&self) -> u64 {
        self.tables[0].totals.first().copied().unwrap_or(0)
    }

    fn components<'a>(&self, context: &'a [TokenId]) -> Vec<Component<'a>> {
        let avail = self.order.min(context.len() + 1);
        let norm: f64 = if avail == self.order { 1.0 } else { self.weights[..avail].iter().sum() };
        (0..avail)
            .map(|k| {
                let ctx = &context[context.len() - k..];
                let weight = if avail == self.order { self.weights[k] } else { self.weights[k] / norm };
                Component { weight, ctx, row: self.tables[k].find(ctx) }
            })
            .collect()
    }

    /// One mixture term: `w * (c + a) / (T + a V)`, given `inv = 1 / (T + a V)`.
    /// Every probability path goes through this so `next_dist` and
    /// `token_prob` agree bit-for-bit.
    #[inline]
    fn term(&self, weight: f64, count: f64, inv: f64) -> f64 {
        weight * ((count + self.add_k) * inv)
    }

    #[inline]
    fn inv_denom(&self, total: u64) -> f64 {
        1.0 / (total as f64 + self.add_k * self.vocab_size as f64)
    }

    fn first_component(&self, weight: f64) -> Vec<f64> {
        let table = &self.tables[0];
        let (toks, counts, total) = match table.find(&[]) {
            Some(i) => {
                let (t, c) = table.row(i);
                (t, c, table.totals[i])
            }
            None => (&[][..], &[][..], 0),
        };
        let inv = self.inv_denom(total);
        let mut probs = vec![self.term(weight, 0.0, inv); self.vocab_size];
        for (&t, &c) in toks.iter().zip(counts) {
            probs[t as usize] = self.term(weight, c as f64, inv);
        }
        probs
    }

    pub(crate) fn dist_filtered<F: EntryFilter>(&self, context: &[TokenId], filter: &F) -> Vec<f64> {
        let mut probs = Vec::new();
        let mut seen: Vec<(TokenId, f64)> = Vec::new();
        let comps = self.components(context);
        let full = comps.len() == self.order;
        for (k, comp) in comps.into_iter().enumerate() {
            if k == 0 && full && F::KEEPS_ALL {
                probs = self.unigram.get_or_init(|| self.first_component(comp.weight)).clone();
                continue;
            }
            let table = &self.tables[comp.ctx.len()];
            let row = comp.row.map(|i| table.row(i));
            seen.clear();
            let mut total = 0u64;
            if let Some((toks, counts)) = row {
                for (&t, &c) in toks.iter().zip(counts) {
                    if filter.keep(comp.ctx.len(), comp.ctx, t) {
                        seen.push((t, c as f64));
                        total += c as u64;
                    }
                }
            }
            let inv = self.inv_denom(total);
            let unseen = self.term(comp.weight, 0.0, inv);
            if k == 0 {
                // Adding to zero is exact, so the first component is written directly.
                probs = vec![unseen; self.vocab_size];
                for &(t, c) in &seen {
                    probs[t as usize] = self.term(comp.weight, c, inv);
                }
            } else {
                for (t, v) in seen.iter_mut() {
                    *v = probs[*t as usize] + self.term(comp.weight, *v, inv);
                }
                probs.iter_mut().for_each(|p| *p += unseen);
                for &(t, v) in &seen {
                    probs[t as usize] = v;
                }
            }
        }
        probs
    }

    pub(crate) fn prob_filtered(&self, context: &[TokenId], token: TokenId, filter: &impl EntryFilter) -> f64 {
        let mut p = 0.0f64;
        for comp in self.components(context) {
            let table = &self.tables[comp.ctx.len()];
            let mut total = 0u64;
            let mut c = 0.0f64;
            if let Some(i) = comp.row {
                let (toks, counts) = table.row(i);
                for (&t, &n) in toks.iter().zip(counts) {
                    if filter.keep(comp.ctx.len(), comp.ctx, t) {
                        total += n as u64;
                        if t == token {
                            c = n as f64;
                        }
                    }
                }
            }
            p += self.term(comp.weight, c, self.inv_denom(total));
        }
        p
    }

    /// Fast path for the unfiltered model: totals are precomputed.
    fn prob_unfiltered(&self, context: &[TokenId], token: TokenId) -> f64 {
        let mut p = 0.0f64;
        for comp in self.components(context) {
            let table = &self.tables[comp.ctx.len()];
            let (total, c) = match comp.row {
                Some(i) => {
                    let (toks, counts) = table.row(i);
                    let c = toks.binary_search(&token).map(|j| counts[j] as f64).unwrap_or(0.0);
                    (table.totals[i], c)
                }
                None => (0, 0.0),
            };
            p += self.term(comp.weight, c, self.inv_denom(total));
        }
        p
    }

    /// The same model restricted to context lengths `< order`, weights renormalized.
    pub fn truncated(&self, order: usize) -> Result<NgramModel> {
        if order == 0 || order > self.order {
            return Err(Error::config(format!("cannot truncate an order-{} model to order {order}", self.order)));
        }
        let sum: f64 = self.weights[..order].iter().sum();
        if sum <= 0.0 {
            return Err(Error::config("truncated model has zero interpolation mass"));
        }
        Ok(NgramModel::from_parts(
            order,
            self.vocab_size,
            self.add_k,
            self.weights[..order].iter().map(|w| w / sum).collect(),
            self.tables[..order].to_vec(),
        ))
    }
}

impl LanguageModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_context(&self) -> usize {
        self.order - 1
    }

    fn next_dist(&self, context: &[TokenId]) -> NextTokenDist {
        let context = crate::lm::truncate_context(context, self.order - 1);
        NextTokenDist::from_normalized(self.dist_filtered(context, &KeepAll))
    }

    fn token_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let context = crate::lm::truncate_context(context, self.order - 1);
        self.prob_unfiltered(context, token)
    }
}

type Key = ArrayVec<TokenId, MAX_ORDER>;

/// Accumulates n-gram counts; `snapshot` freezes the current state.
#[derive(Debug, Clone)]
pub struct NgramTrainer {
    order: usize,
    vocab_size: usize,
    add_k: f64,
    weights: Vec<f64>,
    counts: Vec<HashMap<Key, u32>>,
}

impl NgramTrainer {
    pub fn new(config: &NgramConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::config("vocab_size must be positive"));
        }
        Ok(NgramTrainer {
            order: config.order,
            vocab_size,
            add_k: config.add_k,
            weights: config.weights()?,
            counts: vec![HashMap::new(); config.order],
        })
    }

    /// Count every n-gram ending inside `range`, drawing context from the
    /// whole `stream` (so contexts may reach back before `range.start`).
    pub fn observe_span(&mut self, stream: &[TokenId], range: Range<usize>) -> Result<()> {
        if let Some(&bad) = stream[range.clone()].iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::argument(format!("token {bad} outside vocabulary of {}", self.vocab_size)));
        }
        for i in range {
            for k in 0..self.order.min(i + 1) {
                let key: Key = stream[i - k..=i].iter().copied().collect();
                *self.counts[k].entry(key).or_default() += 1;
            }
        }
        Ok(())
    }

    /// Count one sequence; contexts do not reach before its first token.
    pub fn observe_sequence(&mut self, seq: &[TokenId]) -> Result<()> {
        self.observe_span(seq, 0..seq.len())
    }

    pub fn snapshot(&self) -> NgramModel {
        let tables = self
            .counts
            .iter()
            .enumerate()
            .map(|(k, map)| {
                let mut entries: Vec<(&Key, u32)> = map.iter().map(|(key, &c)| (key, c)).collect();
                entries.sort_unstable_by(|a, b| a.0.as_slice().cmp(b.0.as_slice()));
                OrderTable::from_sorted(k, entries)
            })
            .collect();
        NgramModel::from_parts(self.order, self.vocab_size, self.add_k, self.weights.clone(), tables)
    }
}
