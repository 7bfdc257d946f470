//! Seed extraction and synthetic corpus generation with per-record provenance.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use aho_corasick::AhoCorasick;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, to_jsonl, Document};
use crate::decoder::{check_models, generate, DecodingStrategy};
use crate::digest::{json_digest, sha256_hex, short};
use crate::error::{Error, Result};
use crate::lm::{CheckpointId, CheckpointedModel, LanguageModel};
use crate::registry::write_atomic;
use crate::rng::{label, substream};
use crate::tokenizer::TokenizerModel;
use crate::TokenId;

pub const DEFAULT_PREFIX_LEN: usize = 20;
pub const DEFAULT_COMPLETIONS_PER_SEED: usize = 8;
pub const DEFAULT_MAX_NEW: usize = 400;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub id: String,
    pub domain: String,
    pub prefix: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub prefix_len: usize,
    pub seeds: Vec<Seed>,
}

impl SeedSet {
    pub fn digest(&self) -> Result<String> {
        json_digest(self)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Seed> {
        self.seeds.iter().find(|s| s.id == id)
    }

    pub fn per_domain(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for s in &self.seeds {
            *out.entry(s.domain.as_str()).or_default() += 1;
        }
        out
    }
}

/// Take up to `per_domain_quota` prefixes of `prefix_len` tokens from each
/// domain, in document order. Paragraphs shorter than the prefix are skipped.
pub fn extract_seeds(
    docs: &[Document],
    tokenizer: &TokenizerModel,
    prefix_len: usize,
    per_domain_quota: usize,
) -> Result<SeedSet> {
    Ok(extract_clean_seeds(docs, tokenizer, prefix_len, per_domain_quota, &[])?.0)
}

/// As [`extract_seeds`], but a candidate whose prefix text occurs verbatim in
/// any of `held_out` is skipped. Returns the seed set and the number of
/// candidates dropped that way.
pub fn extract_clean_seeds(
    docs: &[Document],
    tokenizer: &TokenizerModel,
    prefix_len: usize,
    per_domain_quota: usize,
    held_out: &[&[Document]],
) -> Result<(SeedSet, usize)> {
    if docs.is_empty() {
        return Err(Error::config("seeds split is empty"));
    }
    if prefix_len == 0 {
        return Err(Error::config("prefix length must be at least 1"));
    }
    let encoded = tokenizer.encode_many(&docs.iter().map(|d| d.text.as_str()).collect::<Vec<_>>());
    let mut candidates = Vec::new();
    for (i, (doc, toks)) in docs.iter().zip(&encoded).enumerate() {
        if toks.len() < prefix_len {
            log::debug!("skipping {} paragraph {i}: {} tokens < prefix {prefix_len}", doc.domain, toks.len());
            continue;
        }
        candidates.push((i, tokenizer.decode(&toks[..prefix_len])?));
    }
    let contaminated = contaminated_patterns(candidates.iter().map(|c| c.1.as_str()), held_out)?;

    let mut taken: BTreeMap<&str, Vec<Seed>> = BTreeMap::new();
    let mut dropped = 0;
    for (ci, (i, _)) in candidates.iter().enumerate() {
        let doc = &docs[*i];
        let slot = taken.entry(doc.domain.as_str()).or_default();
        if slot.len() >= per_domain_quota {
            continue;
        }
        if contaminated.contains(&ci) {
            dropped += 1;
            continue;
        }
        slot.push(Seed {
            id: format!("{}-{:06}", doc.domain, i),
            domain: doc.domain.clone(),
            prefix: encoded[*i][..prefix_len].to_vec(),
        });
    }
    for (domain, seeds) in &taken {
        if seeds.len() < per_domain_quota {
            log::warn!("domain {domain} exhausted with {} of {per_domain_quota} seeds", seeds.len());
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} seed candidates whose prefix occurs in held-out text");
    }
    Ok((SeedSet { prefix_len, seeds: taken.into_values().flatten().collect() }, dropped))
}

/// Indices of `patterns` that occur verbatim in any document of `texts`.
pub fn contaminated_patterns<'a>(
    patterns: impl IntoIterator<Item = &'a str>,
    texts: &[&[Document]],
) -> Result<HashSet<usize>> {
    let patterns: Vec<&str> = patterns.into_iter().collect();
    let mut hit = HashSet::new();
    if patterns.is_empty() || texts.is_empty() {
        return Ok(hit);
    }
    let ac = AhoCorasick::new(&patterns).map_err(|e| Error::Contract(format!("prefix matcher: {e}")))?;
    for doc in texts.iter().flat_map(|t| t.iter()) {
        for m in ac.find_overlapping_iter(&doc.text) {
            hit.insert(m.pattern().as_usize());
        }
    }
    Ok(hit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub completions_per_seed: usize,
    pub max_new: usize,
    pub token_budget: u64,
    pub master_seed: u64,
    /// Count prefix tokens toward the budget as well as generated ones.
    #[serde(default)]
    pub count_prefix: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            completions_per_seed: DEFAULT_COMPLETIONS_PER_SEED,
            max_new: DEFAULT_MAX_NEW,
            token_budget: 1_000_000,
            master_seed: 0,
            count_prefix: false,
        }
    }
}

/// One completion. `text` is the decoded prefix plus continuation, without
/// the trailing EOS if one was sampled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub seed_id: String,
    pub completion_idx: u32,
    pub source_domain: String,
    pub strategy: String,
    pub prefix_included: bool,
    pub new_tokens: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusStatus {
    Complete,
    /// Every seed and completion was used before the budget was met.
    BudgetUnreached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub strategy: DecodingStrategy,
    pub strategy_digest: String,
    pub good_id: CheckpointId,
    pub bad_id: Option<CheckpointId>,
    pub seed_set_digest: String,
    pub prefix_len: usize,
    pub seeds: usize,
    pub generation: GenerationConfig,
    pub records: usize,
    pub produced_tokens: u64,
    pub status: CorpusStatus,
    pub corpus_sha256: String,
}

impl CorpusManifest {
    pub fn digest(&self) -> Result<String> {
        json_digest(self)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<CorpusRecord>,
    pub manifest: CorpusManifest,
}

impl GeneratedCorpus {
    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    /// Write `corpus.jsonl` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(CORPUS_FILE), &to_jsonl(&self.records)?)?;
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let records: Vec<CorpusRecord> = read_jsonl(&dir.join(CORPUS_FILE))?;
        let manifest: CorpusManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if sha256_hex(&to_jsonl(&records)?) != manifest.corpus_sha256 {
            return Err(Error::format(format!("{} does not match its manifest", dir.join(CORPUS_FILE).display())));
        }
        Ok(GeneratedCorpus { records, manifest })
    }
}

/// Everything needed to produce one record.
struct Job<'a> {
    strategy: &'a DecodingStrategy,
    strategy_digest: String,
    good: &'a CheckpointedModel,
    bad: Option<&'a CheckpointedModel>,
    tokenizer: &'a TokenizerModel,
    cfg: &'a GenerationConfig,
}

impl Job<'_> {
    fn run(&self, seed: &Seed, completion_idx: u32) -> Result<CorpusRecord> {
        let mut rng = substream(self.cfg.master_seed, &[label("corpusgen"), label(&seed.id), completion_idx as u64]);
        let eos = self.tokenizer.eos();
        let out = generate(
            self.strategy,
            self.good,
            self.bad.map(|b| b as &dyn LanguageModel),
            &seed.prefix,
            self.cfg.max_new,
            Some(eos),
            &mut rng,
        )?;
        let new_tokens = out.len() - seed.prefix.len();
        let body = if out.last() == Some(&eos) && new_tokens > 0 { &out[..out.len() - 1] } else { &out[..] };
        Ok(CorpusRecord {
            id: format!("{}/{completion_idx}", seed.id),
            seed_id: seed.id.clone(),
            completion_idx,
            source_domain: seed.domain.clone(),
            strategy: self.strategy_digest.clone(),
            prefix_included: true,
            new_tokens,
            text: self.tokenizer.decode(body)?,
        })
    }

    fn counted(&self, r: &CorpusRecord, prefix_len: usize) -> u64 {
        (r.new_tokens + if self.cfg.count_prefix { prefix_len } else { 0 }) as u64
    }
}

fn strategy_digest(strategy: &DecodingStrategy) -> Result<String> {
    Ok(short(&json_digest(strategy)?).to_string())
}

/// Generate completions seed by seed, `completions_per_seed` per seed, until
/// the token budget is met. Records are independent of `workers`.
pub fn generate_corpus(
    strategy: &DecodingStrategy,
    good: &CheckpointedModel,
    bad: Option<&CheckpointedModel>,
    tokenizer: &TokenizerModel,
    seeds: &SeedSet,
    cfg: &GenerationConfig,
    workers: usize,
) -> Result<GeneratedCorpus> {
    check_models(strategy, good, bad.map(|b| b as &dyn LanguageModel))?;
    if cfg.completions_per_seed == 0 {
        return Err(Error::config("completions_per_seed must be at least 1"));
    }
    if seeds.is_empty() {
        return Err(Error::config("seed set is empty"));
    }
    if good.vocab_size() != tokenizer.vocab_size() {
        return Err(Error::Contract(format!(
            "model vocabulary {} vs tokenizer vocabulary {}",
            good.vocab_size(),
            tokenizer.vocab_size()
        )));
    }
    let job = Job { strategy, strategy_digest: strategy_digest(strategy)?, good, bad, tokenizer, cfg };
    let units: Vec<(&Seed, u32)> = seeds
        .seeds
        .iter()
        .flat_map(|s| (0..cfg.completions_per_seed as u32).map(move |c| (s, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let block = (workers.max(1) * 8).max(32);

    let mut records = Vec::new();
    let mut produced = 0u64;
    'outer: for chunk in units.chunks(block) {
        let done: Vec<CorpusRecord> =
            pool.install(|| chunk.par_iter().map(|&(s, c)| job.run(s, c)).collect::<Result<_>>())?;
        for r in done {
            produced += job.counted(&r, seeds.prefix_len);
            records.push(r);
            if produced >= cfg.token_budget {
                break 'outer;
            }
        }
    }
    let status = if produced >= cfg.token_budget {
        CorpusStatus::Complete
    } else {
        log::warn!("budget {} unreached: produced {produced} tokens from {} seeds", cfg.token_budget, seeds.len());
        CorpusStatus::BudgetUnreached
    };
    let manifest = CorpusManifest {
        strategy: strategy.clone(),
        strategy_digest: job.strategy_digest.clone(),
        good_id: good.id.clone(),
        bad_id: bad.map(|b| b.id.clone()),
        seed_set_digest: seeds.digest()?,
        prefix_len: seeds.prefix_len,
        seeds: seeds.len(),
        generation: cfg.clone(),
        records: records.len(),
        produced_tokens: produced,
        status,
        corpus_sha256: sha256_hex(&to_jsonl(&records)?),
    };
    Ok(GeneratedCorpus { records, manifest })
}

/// Reproduce a single record from its manifest.
pub fn regenerate_record(
    manifest: &CorpusManifest,
    good: &CheckpointedModel,
    bad: Option<&CheckpointedModel>,
    tokenizer: &TokenizerModel,
    seeds: &SeedSet,
    seed_id: &str,
    completion_idx: u32,
) -> Result<CorpusRecord> {
    if seeds.digest()? != manifest.seed_set_digest {
        return Err(Error::Contract("seed set does not match the manifest".into()));
    }
    if good.id != manifest.good_id || bad.map(|b| &b.id) != manifest.bad_id.as_ref() {
        return Err(Error::Contract("models do not match the manifest".into()));
    }
    let seed = seeds.get(seed_id).ok_or_else(|| Error::argument(format!("no seed {seed_id}")))?;
    let job = Job {
        strategy: &manifest.strategy,
        strategy_digest: manifest.strategy_digest.clone(),
        good,
        bad,
        tokenizer,
        cfg: &manifest.generation,
    };
    job.run(seed, completion_idx)
}
