//! Synthetic corpus generation with contrastive decoding, real/synthetic
//! mixture training, and paired-bootstrap comparison of training methods.

pub mod corpus;
pub mod corpusgen;
pub mod decoder;
pub mod desk_corpus;
pub mod digest;
pub mod error;
pub mod evalstat;
pub mod lm;
pub mod mixer;
pub mod ngram;
pub mod pipeline;
pub mod registry;
pub mod rng;
pub mod tokenizer;

/// Index into a tokenizer vocabulary.
pub type TokenId = u32;

pub use error::{Error, Result};
pub use lm::{CheckpointId, CheckpointedModel, LanguageModel, NextTokenDist};
pub use ngram::{NgramConfig, NgramModel};
pub use tokenizer::TokenizerModel;
