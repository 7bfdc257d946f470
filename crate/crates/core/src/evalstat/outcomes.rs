use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Direction::HigherBetter => "↑",
            Direction::LowerBetter => "↓",
        }
    }
}

/// How per-example outcomes become one task score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    /// `exp(mean)`, for per-example mean NLLs over equal-length windows.
    ExpMean,
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> f64 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        match self {
            Aggregation::Mean => mean,
            Aggregation::ExpMean => mean.exp(),
        }
    }

    /// Aggregate over a resampled index multiset.
    pub fn apply_indexed(self, values: &[f64], idx: &[usize]) -> f64 {
        let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
        match self {
            Aggregation::Mean => mean,
            Aggregation::ExpMean => mean.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub direction: Direction,
    pub aggregation: Aggregation,
    /// Multiplier applied when printing means and standard errors.
    #[serde(default = "one")]
    pub display_scale: f64,
    /// Whether the task enters the mean relative improvement.
    #[serde(default = "yes")]
    pub in_mu_delta_rel: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl TaskSpec {
    pub fn perplexity() -> Self {
        TaskSpec {
            name: "perplexity".into(),
            direction: Direction::LowerBetter,
            aggregation: Aggregation::ExpMean,
            display_scale: 1.0,
            in_mu_delta_rel: false,
        }
    }

    pub fn accuracy(name: impl Into<String>) -> Self {
        TaskSpec {
            name: name.into(),
            direction: Direction::HigherBetter,
            aggregation: Aggregation::Mean,
            display_scale: 100.0,
            in_mu_delta_rel: true,
        }
    }

    /// Relative change of `value` versus `base` in percent, positive when better.
    pub fn relative_delta(&self, value: f64, base: f64) -> f64 {
        let d = match self.direction {
            Direction::HigherBetter => value - base,
            Direction::LowerBetter => base - value,
        };
        100.0 * d / base
    }
}

/// One line of an outcome file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub checkpoint: u64,
    pub example: usize,
    pub value: f64,
}

/// `(method, task, seed, checkpoint)`.
pub type CellKey = (String, String, u64, u64);

/// Per-example outcomes for every method, task, seed and checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeMatrix {
    tasks: BTreeMap<String, TaskSpec>,
    cells: BTreeMap<CellKey, Vec<f64>>,
}

impl OutcomeMatrix {
    pub fn new(tasks: impl IntoIterator<Item = TaskSpec>) -> Self {
        OutcomeMatrix { tasks: tasks.into_iter().map(|t| (t.name.clone(), t)).collect(), cells: BTreeMap::new() }
    }

    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.get(name)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn insert(&mut self, method: &str, task: &str, seed: u64, checkpoint: u64, values: Vec<f64>) -> Result<()> {
        if !self.tasks.contains_key(task) {
            return Err(Error::argument(format!("unknown task `{task}`")));
        }
        if values.is_empty() {
            return Err(Error::argument(format!("no outcomes for {method}/{task}/seed {seed}/step {checkpoint}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::argument(format!("non-finite outcome {v} for {method}/{task}")));
        }
        self.cells.insert((method.into(), task.into(), seed, checkpoint), values);
        Ok(())
    }

    /// Append every cell of `other`; task specs must agree.
    pub fn merge(&mut self, other: OutcomeMatrix) -> Result<()> {
        for (name, spec) in other.tasks {
            match self.tasks.get(&name) {
                Some(s) if *s != spec => return Err(Error::Contract(format!("conflicting specs for task `{name}`"))),
                _ => {
                    self.tasks.insert(name, spec);
                }
            }
        }
        self.cells.extend(other.cells);
        Ok(())
    }

    pub fn get(&self, method: &str, task: &str, seed: u64, checkpoint: u64) -> Option<&[f64]> {
        self.cells.get(&(method.to_string(), task.to_string(), seed, checkpoint)).map(|v| v.as_slice())
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &[f64])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.0.as_str()).collect()
    }

    pub fn seeds(&self, method: &str, task: &str) -> BTreeSet<u64> {
        self.cells.keys().filter(|k| k.0 == method && k.1 == task).map(|k| k.2).collect()
    }

    /// `(checkpoint, aggregated score)` for one `(method, task, seed)`, by step.
    pub fn scores(&self, method: &str, task: &str, seed: u64) -> Vec<(u64, f64)> {
        let agg = self.tasks[task].aggregation;
        self.cells
            .iter()
            .filter(|(k, _)| k.0 == method && k.1 == task && k.2 == seed)
            .map(|(k, v)| (k.3, agg.apply(v)))
            .collect()
    }

    /// Every task must have the same example count in all cells and the same
    /// seed set for every method that reports it.
    pub fn check_pairing(&self) -> Result<()> {
        for task in self.tasks.keys() {
            let mut n: Option<usize> = None;
            let mut seeds: Option<(String, BTreeSet<u64>)> = None;
            for (k, v) in self.cells.iter().filter(|(k, _)| &k.1 == task) {
                match n {
                    Some(n) if n != v.len() => {
                        return Err(Error::Pairing(format!(
                            "task `{task}`: {}/seed {}/step {} has {} examples, expected {n}",
                            k.0,
                            k.2,
                            k.3,
                            v.len()
                        )))
                    }
                    _ => n = Some(v.len()),
                }
                let s = self.seeds(&k.0, task);
                match &seeds {
                    Some((m, first)) if *first != s => {
                        return Err(Error::Pairing(format!(
                            "task `{task}`: seeds of {} {:?} differ from seeds of {m} {:?}",
                            k.0, s, first
                        )))
                    }
                    Some(_) => {}
                    None => seeds = Some((k.0.clone(), s)),
                }
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<OutcomeRecord> {
        self.cells
            .iter()
            .flat_map(|((m, t, s, c), v)| {
                v.iter().enumerate().map(move |(i, &value)| OutcomeRecord {
                    method: m.clone(),
                    task: t.clone(),
                    seed: *s,
                    checkpoint: *c,
                    example: i,
                    value,
                })
            })
            .collect()
    }

    /// Rebuild from records; within a cell, example indices must be exactly `0..N`.
    pub fn from_records(tasks: impl IntoIterator<Item = TaskSpec>, records: &[OutcomeRecord]) -> Result<Self> {
        let mut m = OutcomeMatrix::new(tasks);
        let mut grouped: BTreeMap<CellKey, BTreeMap<usize, f64>> = BTreeMap::new();
        for r in records {
            let cell = grouped.entry((r.method.clone(), r.task.clone(), r.seed, r.checkpoint)).or_default();
            if cell.insert(r.example, r.value).is_some() {
                return Err(Error::format(format!(
                    "duplicate example {} for {}/{}/seed {}/step {}",
                    r.example, r.method, r.task, r.seed, r.checkpoint
                )));
            }
        }
        for ((method, task, seed, ckpt), values) in grouped {
            if values.keys().enumerate().any(|(i, &k)| i != k) {
                return Err(Error::Pairing(format!("{method}/{task}/seed {seed}/step {ckpt}: example indices have gaps")));
            }
            m.insert(&method, &task, seed, ckpt, values.into_values().collect())?;
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.to_records())
    }

    pub fn read(path: &Path, tasks: impl IntoIterator<Item = TaskSpec>) -> Result<Self> {
        Self::from_records(tasks, &read_jsonl::<OutcomeRecord>(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> OutcomeMatrix {
        let mut m = OutcomeMatrix::new([TaskSpec::perplexity(), TaskSpec::accuracy("pairs")]);
        m.insert("base", "pairs", 0, 10, vec![1.0, 0.0, 1.0]).unwrap();
        m.insert("base", "pairs", 0, 20, vec![1.0, 1.0, 1.0]).unwrap();
        m.insert("mix", "pairs", 0, 10, vec![0.0, 0.0, 1.0]).unwrap();
        m
    }

    #[test]
    fn scores_by_checkpoint() {
        let m = matrix();
        let s = m.scores("base", "pairs", 0);
        assert_eq!(s.len(), 2);
        assert!((s[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[1], (20, 1.0));
        m.check_pairing().unwrap();
    }

    #[test]
    fn misaligned_examples_or_seeds_fail_pairing() {
        let mut m = matrix();
        m.insert("mix", "pairs", 0, 20, vec![1.0, 0.0]).unwrap();
        assert!(matches!(m.check_pairing(), Err(Error::Pairing(_))));
        let mut m = matrix();
        m.insert("mix", "pairs", 1, 10, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(m.check_pairing(), Err(Error::Pairing(_))));
    }

    #[test]
    fn records_round_trip_and_validation() {
        let m = matrix();
        let back = OutcomeMatrix::from_records([TaskSpec::perplexity(), TaskSpec::accuracy("pairs")], &m.to_records()).unwrap();
        assert_eq!(back, m);
        let mut recs = m.to_records();
        recs[1].example = 5;
        assert!(OutcomeMatrix::from_records([TaskSpec::accuracy("pairs")], &recs).is_err());
        assert!(m.clone().insert("x", "nope", 0, 0, vec![1.0]).is_err());
        assert!(m.clone().insert("x", "pairs", 0, 0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn relative_delta_signs() {
        let ppl = TaskSpec::perplexity();
        assert!((ppl.relative_delta(23.56, 24.46) - 3.679477).abs() < 1e-5);
        let acc = TaskSpec::accuracy("a");
        assert!((acc.relative_delta(72.09, 71.03) - 1.492327).abs() < 1e-5);
    }
}
