use std::sync::Arc;

use serde::Serialize;

use super::model::{NgramConfig, NgramModel, NgramTrainer};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::lm::{CheckpointId, CheckpointedModel};
use crate::TokenId;

#[derive(Serialize)]
struct TrainMeta<'a> {
    backend: &'static str,
    config: &'a NgramConfig,
    vocab_size: usize,
    snapshot_every: usize,
    corpus_tokens: usize,
    corpus_sha256: String,
}

fn corpus_digest(corpus: &[TokenId]) -> String {
    let bytes: Vec<u8> = corpus.iter().flat_map(|t| t.to_le_bytes()).collect();
    crate::digest::sha256_hex(&bytes)
}

/// Train on a token stream, handing each snapshot to `on_snapshot` as soon
/// as it is taken. Step `s` has consumed `min(s * snapshot_every, len)` tokens.
pub fn train_ngram_with(
    corpus: &[TokenId],
    vocab_size: usize,
    config: &NgramConfig,
    snapshot_every: usize,
    family: &str,
    mut on_snapshot: impl FnMut(CheckpointedModel) -> Result<()>,
) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    if snapshot_every == 0 {
        return Err(Error::config("snapshot_every must be positive"));
    }
    let mut trainer = NgramTrainer::new(config, vocab_size)?;
    let meta = json_digest(&TrainMeta {
        backend: "ngram",
        config,
        vocab_size,
        snapshot_every,
        corpus_tokens: corpus.len(),
        corpus_sha256: corpus_digest(corpus),
    })?;
    for (i, start) in (0..corpus.len()).step_by(snapshot_every).enumerate() {
        let end = (start + snapshot_every).min(corpus.len());
        trainer.observe_span(corpus, start..end)?;
        let model: NgramModel = trainer.snapshot();
        let id = CheckpointId::new(family, i as u64 + 1);
        log::debug!("snapshot {id}: {} entries", model.entry_count());
        on_snapshot(CheckpointedModel::new(id, meta.clone(), Arc::new(model)))?;
    }
    Ok(())
}

/// Train on a token stream and return every snapshot, steps `1..=ceil(len / snapshot_every)`.
pub fn train_ngram(
    corpus: &[TokenId],
    vocab_size: usize,
    config: &NgramConfig,
    snapshot_every: usize,
    family: &str,
) -> Result<Vec<CheckpointedModel>> {
    let mut out = Vec::new();
    train_ngram_with(corpus, vocab_size, config, snapshot_every, family, |m| {
        out.push(m);
        Ok(())
    })?;
    Ok(out)
}
