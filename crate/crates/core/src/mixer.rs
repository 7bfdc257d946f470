//! Fixed-ratio real/synthetic batches with reshuffle-and-resegment on
//! exhaustion, and n-gram training driven by such a stream.

use std::ops::ControlFlow;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::digest::{json_digest, sha256_hex};
use crate::error::{Error, Result};
use crate::lm::{CheckpointId, CheckpointedModel};
use crate::ngram::{NgramConfig, NgramModel, NgramTrainer};
use crate::rng::{label, substream};
use crate::tokenizer::TokenizerModel;
use crate::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Fraction of each batch drawn from the synthetic corpus.
    pub synth_ratio: f64,
    pub batch_sequences: usize,
    pub seq_len: usize,
    pub reshuffle_seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig { synth_ratio: 0.3, batch_sequences: 64, seq_len: 128, reshuffle_seed: 0 }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.synth_ratio) {
            return Err(Error::config(format!("synthetic ratio must be in [0, 1), got {}", self.synth_ratio)));
        }
        if self.batch_sequences == 0 || self.seq_len == 0 {
            return Err(Error::config("batch_sequences and seq_len must be positive"));
        }
        Ok(())
    }

    /// Synthetic sequences per batch: `q * batch_sequences` rounded half up.
    pub fn synth_per_batch(&self) -> usize {
        (self.synth_ratio * self.batch_sequences as f64 + 0.5).floor() as usize
    }
}

/// One corpus, tokenized once, re-packed every epoch.
#[derive(Debug, Clone)]
struct Cursor {
    tag: &'static str,
    docs: Arc<Vec<Vec<TokenId>>>,
    eos: TokenId,
    seq_len: usize,
    seed: u64,
    epoch: u64,
    packed: Vec<TokenId>,
    pos: usize,
}

impl Cursor {
    fn new(tag: &'static str, docs: Arc<Vec<Vec<TokenId>>>, eos: TokenId, cfg: &MixtureConfig) -> Result<Self> {
        let total: usize = docs.iter().map(|d| d.len() + 1).sum();
        if total < cfg.seq_len {
            return Err(Error::config(format!(
                "{tag} corpus has {total} tokens, fewer than one sequence of {}",
                cfg.seq_len
            )));
        }
        let mut c = Cursor { tag, docs, eos, seq_len: cfg.seq_len, seed: cfg.reshuffle_seed, epoch: 0, packed: Vec::new(), pos: 0 };
        c.repack();
        Ok(c)
    }

    /// Shuffle documents for the current epoch, join them with EOS and keep
    /// only whole windows.
    fn repack(&mut self) {
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.shuffle(&mut substream(self.seed, &[label("mixer"), label(self.tag), self.epoch]));
        self.packed.clear();
        for i in order {
            self.packed.extend_from_slice(&self.docs[i]);
            self.packed.push(self.eos);
        }
        let whole = self.packed.len() / self.seq_len * self.seq_len;
        self.packed.truncate(whole);
        self.pos = 0;
    }

    fn next_sequence(&mut self) -> &[TokenId] {
        if self.pos + self.seq_len > self.packed.len() {
            self.epoch += 1;
            self.repack();
        }
        let s = &self.packed[self.pos..self.pos + self.seq_len];
        self.pos += self.seq_len;
        s
    }

    fn sequences_per_epoch(&self) -> usize {
        self.packed.len() / self.seq_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub synthetic: Vec<Vec<TokenId>>,
    pub real: Vec<Vec<TokenId>>,
}

impl Batch {
    pub fn sequences(&self) -> impl Iterator<Item = &[TokenId]> {
        self.synthetic.iter().chain(&self.real).map(|s| s.as_slice())
    }

    pub fn len(&self) -> usize {
        self.synthetic.len() + self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An endless, deterministic stream of mixed batches.
#[derive(Debug, Clone)]
pub struct BatchStream {
    cfg: MixtureConfig,
    real: Cursor,
    synth: Option<Cursor>,
}

impl BatchStream {
    /// Tokenize both corpora document by document and build the stream.
    pub fn build<S: AsRef<str>, T: AsRef<str>>(
        real: &[S],
        synth: &[T],
        tokenizer: &TokenizerModel,
        cfg: &MixtureConfig,
    ) -> Result<Self> {
        Self::from_tokens(Arc::new(tokenizer.encode_many(real)), Arc::new(tokenizer.encode_many(synth)), tokenizer.eos(), cfg)
    }

    /// Build from documents that are already tokenized.
    pub fn from_tokens(
        real: Arc<Vec<Vec<TokenId>>>,
        synth: Arc<Vec<Vec<TokenId>>>,
        eos: TokenId,
        cfg: &MixtureConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if real.is_empty() {
            return Err(Error::config("real corpus is empty"));
        }
        let synth = if cfg.synth_per_batch() > 0 {
            if synth.is_empty() {
                return Err(Error::config(format!("ratio {} needs a synthetic corpus", cfg.synth_ratio)));
            }
            Some(Cursor::new("synth", synth, eos, cfg)?)
        } else {
            None
        };
        Ok(BatchStream { cfg: cfg.clone(), real: Cursor::new("real", real, eos, cfg)?, synth })
    }

    pub fn config(&self) -> &MixtureConfig {
        &self.cfg
    }

    /// Epoch counters of the real and synthetic corpora.
    pub fn epochs(&self) -> (u64, Option<u64>) {
        (self.real.epoch, self.synth.as_ref().map(|s| s.epoch))
    }

    pub fn real_sequences_per_epoch(&self) -> usize {
        self.real.sequences_per_epoch()
    }

    pub fn next_batch(&mut self) -> Batch {
        let n_synth = self.cfg.synth_per_batch();
        let synthetic = match &mut self.synth {
            Some(c) => (0..n_synth).map(|_| c.next_sequence().to_vec()).collect(),
            None => Vec::new(),
        };
        let real = (0..self.cfg.batch_sequences - n_synth).map(|_| self.real.next_sequence().to_vec()).collect();
        Batch { synthetic, real }
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub steps: u64,
    pub snapshot_every: u64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.snapshot_every == 0 {
            return Err(Error::config("steps and snapshot_every must be positive"));
        }
        Ok(())
    }

    /// Snapshot steps: every multiple of `snapshot_every`, plus the final step.
    pub fn snapshot_steps(&self) -> Vec<u64> {
        let mut s: Vec<u64> = (1..=self.steps / self.snapshot_every).map(|i| i * self.snapshot_every).collect();
        if s.last() != Some(&self.steps) {
            s.push(self.steps);
        }
        s
    }
}

#[derive(Serialize)]
struct MixMeta<'a> {
    backend: &'static str,
    ngram: &'a NgramConfig,
    vocab_size: usize,
    mixture: &'a MixtureConfig,
    schedule: &'a TrainSchedule,
    real_sha256: String,
    synth_sha256: String,
}

/// Digest of a tokenized corpus, document boundaries included.
pub fn docs_digest(docs: &[Vec<TokenId>]) -> String {
    let mut bytes = Vec::new();
    for d in docs {
        bytes.extend((d.len() as u64).to_le_bytes());
        bytes.extend(d.iter().flat_map(|t| t.to_le_bytes()));
    }
    sha256_hex(&bytes)
}

/// Train an n-gram model on `schedule.steps` batches, counting each sequence
/// on its own, and hand over a snapshot at every scheduled step. Training
/// stops early when `on_snapshot` breaks.
#[allow(clippy::too_many_arguments)]
pub fn train_mixture(
    real: Arc<Vec<Vec<TokenId>>>,
    synth: Arc<Vec<Vec<TokenId>>>,
    eos: TokenId,
    vocab_size: usize,
    ngram: &NgramConfig,
    mixture: &MixtureConfig,
    schedule: &TrainSchedule,
    family: &str,
    mut on_snapshot: impl FnMut(CheckpointedModel) -> Result<ControlFlow<()>>,
) -> Result<()> {
    schedule.validate()?;
    let meta = json_digest(&MixMeta {
        backend: "ngram",
        ngram,
        vocab_size,
        mixture,
        schedule,
        real_sha256: docs_digest(&real),
        synth_sha256: if mixture.synth_per_batch() > 0 { docs_digest(&synth) } else { String::new() },
    })?;
    let mut stream = BatchStream::from_tokens(real, synth, eos, mixture)?;
    let mut trainer = NgramTrainer::new(ngram, vocab_size)?;
    let snaps = schedule.snapshot_steps();
    let mut next = 0;
    for step in 1..=schedule.steps {
        for seq in stream.next_batch().sequences() {
            trainer.observe_sequence(seq)?;
        }
        if snaps[next] == step {
            next += 1;
            let model: NgramModel = trainer.snapshot();
            let id = CheckpointId::new(family, step);
            log::debug!("snapshot {id}: {} entries, epochs {:?}", model.entry_count(), stream.epochs());
            if on_snapshot(CheckpointedModel::new(id, meta.clone(), Arc::new(model)))?.is_break() {
                break;
            }
        }
    }
    Ok(())
}
