//! Documents, minimal pairs, line-delimited I/O and the train/eval/seeds split.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, substream};

/// One paragraph of real text tagged with its source domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub domain: String,
    pub text: String,
}

/// An acceptable sentence and a minimally different unacceptable one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub good: String,
    pub bad: String,
}

/// Read one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_jsonl(items)?)?;
    Ok(())
}

/// Load documents from `.jsonl` records, or from plain text where blank lines
/// separate paragraphs and the file stem names the domain.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return read_jsonl(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let domain = path.file_stem().and_then(|s| s.to_str()).unwrap_or("default").to_string();
    Ok(text
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| Document { domain: domain.clone(), text: p.to_string() })
        .collect())
}

/// Fractions of documents assigned to each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub eval: f64,
    pub seeds: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.80, eval: 0.05, seeds: 0.15 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.eval, self.seeds];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {}/{}/{}",
                self.train, self.eval, self.seeds
            )));
        }
        if self.train == 0.0 || self.eval == 0.0 || self.seeds == 0.0 {
            return Err(Error::config("every split needs a positive fraction"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Document>,
    pub eval: Vec<Document>,
    pub seeds: Vec<Document>,
}

/// Stratified split: each domain is shuffled on its own and cut by the
/// fractions, so all three splits see every domain. Documents keep their
/// original relative order within a split.
pub fn split_documents(docs: &[Document], fractions: SplitFractions, seed: u64) -> Result<Splits> {
    fractions.validate()?;
    if docs.is_empty() {
        return Err(Error::config("cannot split an empty corpus"));
    }
    let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        by_domain.entry(d.domain.as_str()).or_default().push(i);
    }
    let mut assign = vec![0u8; docs.len()];
    for (domain, mut idx) in by_domain {
        idx.shuffle(&mut substream(seed, &[label("split"), label(domain)]));
        let n = idx.len() as f64;
        let n_eval = (fractions.eval * n).round() as usize;
        let n_seeds = (fractions.seeds * n).round() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            assign[i] = if rank < n_eval {
                1
            } else if rank < n_eval + n_seeds {
                2
            } else {
                0
            };
        }
    }
    let mut out = Splits::default();
    for (d, a) in docs.iter().zip(assign) {
        match a {
            0 => out.train.push(d.clone()),
            1 => out.eval.push(d.clone()),
            _ => out.seeds.push(d.clone()),
        }
    }
    if out.train.is_empty() || out.eval.is_empty() {
        return Err(Error::config(format!("corpus of {} documents is too small to split", docs.len())));
    }
    Ok(out)
}
