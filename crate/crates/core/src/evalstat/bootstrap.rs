use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::select::SelectedOutcomes;
use crate::error::{Error, Result};
use crate::rng::{label, substream};

/// Source of the resampled index multisets `I^(b)` for each `(task, seed, b)`.
pub trait IndexPlan: Sync {
    fn indices(&self, task: &str, seed: u64, b: usize, n: usize) -> Vec<usize>;
}

/// Uniform resampling with replacement from a counter-based substream per
/// `(task, seed, b)`, so draws do not depend on evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct SeededPlan(pub u64);

impl IndexPlan for SeededPlan {
    fn indices(&self, task: &str, seed: u64, b: usize, n: usize) -> Vec<usize> {
        let mut rng = substream(self.0, &[label("bootstrap"), label(task), seed, b as u64]);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Every draw uses the full index set; the bootstrap collapses to plain means.
#[derive(Debug, Clone, Copy)]
pub struct FullIndexPlan;

impl IndexPlan for FullIndexPlan {
    fn indices(&self, _: &str, _: u64, _: usize, n: usize) -> Vec<usize> {
        (0..n).collect()
    }
}

/// Bootstrap draws `mu^(b)` per `(method, task)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub b: usize,
    pub draws: BTreeMap<(String, String), Vec<f64>>,
}

impl BootstrapDraws {
    pub fn get(&self, method: &str, task: &str) -> Option<&[f64]> {
        self.draws.get(&(method.to_string(), task.to_string())).map(|d| d.as_slice())
    }
}

pub fn paired_bootstrap(selected: &SelectedOutcomes, b: usize, seed: u64) -> Result<BootstrapDraws> {
    paired_bootstrap_with(selected, b, &SeededPlan(seed))
}

/// For each task, seed and draw, one index multiset is shared by all methods;
/// the per-seed aggregates are averaged over seeds in ascending seed order.
pub fn paired_bootstrap_with(selected: &SelectedOutcomes, b: usize, plan: &dyn IndexPlan) -> Result<BootstrapDraws> {
    if b == 0 {
        return Err(Error::argument("bootstrap needs at least one resample"));
    }
    let mut draws = BTreeMap::new();
    for (task, spec) in &selected.tasks {
        let methods: Vec<&str> =
            selected.methods().into_iter().filter(|m| !selected.seeds(m, task).is_empty()).collect();
        let Some(first) = methods.first() else { continue };
        let seeds = selected.seeds(first, task);
        let mut n = None;
        for m in &methods {
            if selected.seeds(m, task) != seeds {
                return Err(Error::Pairing(format!("task `{task}`: {m} and {first} report different seeds")));
            }
            for &s in &seeds {
                let len = selected.outcomes(m, task, s).expect("seed listed").len();
                if *n.get_or_insert(len) != len {
                    return Err(Error::Pairing(format!("task `{task}`: {m}/seed {s} has {len} examples")));
                }
            }
        }
        let n = n.expect("at least one cell");
        let cells: Vec<Vec<&[f64]>> =
            methods.iter().map(|m| seeds.iter().map(|&s| selected.outcomes(m, task, s).unwrap()).collect()).collect();
        // per_b[b][method]
        let per_b: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut acc = vec![0.0; methods.len()];
                for (si, &s) in seeds.iter().enumerate() {
                    let idx = plan.indices(task, s, bi, n);
                    for (mi, cell) in cells.iter().enumerate() {
                        acc[mi] += spec.aggregation.apply_indexed(cell[si], &idx);
                    }
                }
                acc.iter().map(|a| a / seeds.len() as f64).collect()
            })
            .collect();
        for (mi, m) in methods.iter().enumerate() {
            draws.insert((m.to_string(), task.clone()), per_b.iter().map(|row| row[mi]).collect());
        }
    }
    Ok(BootstrapDraws { b, draws })
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Mean of the paired differences `mu_1^(b) - mu_2^(b)`.
    pub delta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
    /// One-sided, in the direction of `delta_hat`; 1 when `delta_hat` is 0.
    pub p_value: f64,
}

/// Compare two draw vectors from the same bootstrap run.
pub fn compare_draws(first: &[f64], second: &[f64]) -> Result<Comparison> {
    if first.len() != second.len() || first.is_empty() {
        return Err(Error::Pairing(format!("draw vectors of length {} and {}", first.len(), second.len())));
    }
    let mut delta: Vec<f64> = first.iter().zip(second).map(|(a, b)| a - b).collect();
    let b = delta.len();
    let delta_hat = delta.iter().sum::<f64>() / b as f64;
    let against = if delta_hat > 0.0 {
        delta.iter().filter(|&&d| d <= 0.0).count()
    } else {
        delta.iter().filter(|&&d| d >= 0.0).count()
    };
    let p_value = if delta_hat == 0.0 { 1.0 } else { (1 + against) as f64 / (b + 1) as f64 };
    delta.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = (percentile(&delta, 0.025), percentile(&delta, 0.975));
    let significant = !(ci_low <= 0.0 && 0.0 <= ci_high);
    Ok(Comparison { delta_hat, ci_low, ci_high, significant, p_value })
}

pub fn compare(draws: &BootstrapDraws, m1: &str, m2: &str, task: &str) -> Result<Comparison> {
    let get = |m: &str| draws.get(m, task).ok_or_else(|| Error::argument(format!("no draws for {m}/{task}")));
    compare_draws(get(m1)?, get(m2)?)
}

/// How the standard error is derived from the draw vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    /// Standard deviation of the draws divided by `sqrt(B)`.
    #[default]
    DrawSdOverSqrtB,
    /// Standard deviation of the draws (the usual bootstrap standard error).
    DrawSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation of the draws.
    pub sd: f64,
    pub se: f64,
}

pub fn summarize(draws: &[f64], mode: SeMode) -> Result<Summary> {
    let b = draws.len();
    if b < 2 {
        return Err(Error::argument(format!("need at least 2 draws to summarize, got {b}")));
    }
    let mean = draws.iter().sum::<f64>() / b as f64;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt();
    let se = match mode {
        SeMode::DrawSdOverSqrtB => sd / (b as f64).sqrt(),
        SeMode::DrawSd => sd,
    };
    Ok(Summary { mean, sd, se })
}

/// Mean of per-task relative changes (percent), perplexity-like tasks excluded by the caller.
pub fn mu_delta_rel(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::argument("mean relative improvement needs at least one task"));
    }
    Ok(deltas.iter().sum::<f64>() / deltas.len() as f64)
}
