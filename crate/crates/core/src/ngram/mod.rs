//! Interpolated add-k n-gram backend and its amateur derivations.

mod amateur;
mod model;
mod snapshot;
mod train;

pub use amateur::{derive_amateur, shrink, AmateurSpec, NoisyNgram, DEFAULT_REDUCTION_FACTORS};
pub use model::{NgramConfig, NgramModel, NgramTrainer, MAX_ORDER};
pub use snapshot::SnapshotFormat;
pub use train::{train_ngram, train_ngram_with};
