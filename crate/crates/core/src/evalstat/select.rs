use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::outcomes::{Direction, OutcomeMatrix, TaskSpec};
use crate::error::{Error, Result};

/// Best checkpoint for one `(method, task, seed)`; ties go to the earliest step.
pub fn mean_max_select(scores: &[(u64, f64)], direction: Direction) -> Result<u64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by_key(|s| s.0);
    let mut it = sorted.into_iter();
    let first = it.next().ok_or_else(|| Error::argument("no checkpoints to select from"))?;
    Ok(it.fold(first, |best, c| if direction.better(c.1, best.1) { c } else { best }).0)
}

/// Outcomes of the selected checkpoint per `(method, task, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedOutcomes {
    pub tasks: BTreeMap<String, TaskSpec>,
    /// `(method, task, seed) -> (checkpoint, outcomes)`.
    pub cells: BTreeMap<(String, String, u64), (u64, Vec<f64>)>,
}

impl SelectedOutcomes {
    pub fn methods(&self) -> Vec<&str> {
        let mut m: Vec<&str> = self.cells.keys().map(|k| k.0.as_str()).collect();
        m.dedup();
        m
    }

    pub fn seeds(&self, method: &str, task: &str) -> Vec<u64> {
        self.cells.keys().filter(|k| k.0 == method && k.1 == task).map(|k| k.2).collect()
    }

    pub fn outcomes(&self, method: &str, task: &str, seed: u64) -> Option<&[f64]> {
        self.cells.get(&(method.to_string(), task.to_string(), seed)).map(|c| c.1.as_slice())
    }

    pub fn checkpoint(&self, method: &str, task: &str, seed: u64) -> Option<u64> {
        self.cells.get(&(method.to_string(), task.to_string(), seed)).map(|c| c.0)
    }
}

/// Mean–max checkpointing over the whole matrix.
pub fn select_checkpoints(matrix: &OutcomeMatrix) -> Result<SelectedOutcomes> {
    matrix.check_pairing()?;
    let mut cells = BTreeMap::new();
    let mut groups: BTreeMap<(String, String, u64), ()> = BTreeMap::new();
    for ((m, t, s, _), _) in matrix.cells() {
        groups.insert((m.clone(), t.clone(), *s), ());
    }
    for (m, t, s) in groups.into_keys() {
        let spec = matrix.task(&t).expect("cells only reference known tasks");
        let c = mean_max_select(&matrix.scores(&m, &t, s), spec.direction)?;
        let values = matrix.get(&m, &t, s, c).expect("selected from existing cells").to_vec();
        cells.insert((m, t, s), (c, values));
    }
    Ok(SelectedOutcomes { tasks: matrix.tasks().map(|t| (t.name.clone(), t.clone())).collect(), cells })
}

/// Percentile of each score among `scores`: the share of other entries it
/// beats, ties counting half. A single entry scores 100.
pub fn within_task_percentiles(scores: &[f64], direction: Direction) -> Vec<f64> {
    let n = scores.len();
    if n == 1 {
        return vec![100.0];
    }
    scores
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let wins: f64 = scores
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &b)| if direction.better(a, b) { 1.0 } else if a == b { 0.5 } else { 0.0 })
                .sum();
            100.0 * wins / (n - 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodCandidate {
    pub seed: u64,
    pub checkpoint: u64,
    pub perplexity: f64,
    pub percentiles: BTreeMap<String, f64>,
    pub avg_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodSelection {
    pub seed: u64,
    pub checkpoint: u64,
    pub candidates: Vec<GoodCandidate>,
}

/// Pick the GOOD model among `method`'s runs: per seed the lowest-perplexity
/// checkpoint becomes a candidate, candidates are ranked by their average
/// within-task percentile over the tasks that enter the relative summary
/// (perplexity alone if there are none), ties to the lowest seed.
pub fn select_good(matrix: &OutcomeMatrix, method: &str, perplexity_task: &str) -> Result<GoodSelection> {
    let ppl_spec = matrix
        .task(perplexity_task)
        .ok_or_else(|| Error::config(format!("unknown perplexity task `{perplexity_task}`")))?;
    let seeds = matrix.seeds(method, perplexity_task);
    if seeds.is_empty() {
        return Err(Error::config(format!("no `{perplexity_task}` outcomes for `{method}`")));
    }
    let mut cands: Vec<(u64, u64, f64)> = Vec::new();
    for &s in &seeds {
        let scores = matrix.scores(method, perplexity_task, s);
        let c = mean_max_select(&scores, ppl_spec.direction)?;
        let ppl = scores.iter().find(|x| x.0 == c).expect("selected").1;
        cands.push((s, c, ppl));
    }
    let mut tasks: Vec<&TaskSpec> = matrix.tasks().filter(|t| t.in_mu_delta_rel).collect();
    if tasks.is_empty() {
        tasks.push(ppl_spec);
    }
    let mut per_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in &tasks {
        let scores = cands
            .iter()
            .map(|&(s, c, _)| {
                matrix
                    .get(method, &t.name, s, c)
                    .map(|v| t.aggregation.apply(v))
                    .ok_or_else(|| Error::config(format!("candidate {method}/seed {s}/step {c} lacks task `{}`", t.name)))
            })
            .collect::<Result<Vec<f64>>>()?;
        per_task.insert(t.name.clone(), within_task_percentiles(&scores, t.direction));
    }
    let candidates: Vec<GoodCandidate> = cands
        .iter()
        .enumerate()
        .map(|(i, &(seed, checkpoint, perplexity))| {
            let percentiles: BTreeMap<String, f64> = per_task.iter().map(|(t, p)| (t.clone(), p[i])).collect();
            let avg_percentile = percentiles.values().sum::<f64>() / percentiles.len() as f64;
            GoodCandidate { seed, checkpoint, perplexity, percentiles, avg_percentile }
        })
        .collect();
    let best = candidates
        .iter()
        .fold(None::<&GoodCandidate>, |best, c| match best {
            Some(b) if b.avg_percentile >= c.avg_percentile => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate");
    Ok(GoodSelection { seed: best.seed, checkpoint: best.checkpoint, candidates: candidates.clone() })
}
