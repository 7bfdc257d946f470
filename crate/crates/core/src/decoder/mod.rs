//! Plausibility mask, contrastive scoring, truncation and ancestral sampling.

mod generate;
mod scoring;
mod strategy;

pub use generate::{check_models, generate, score_step};
pub use scoring::{
    cd_logits, cd_scores, sample_dist, sample_next, truncate_top_k, truncate_top_p, v_head, v_head_excluding, Categorical,
    ScoredSupport, BAD_PROB_FLOOR,
};
pub use strategy::{DecodingStrategy, StrategyKind, DEFAULT_ALPHA, DEFAULT_LAMBDA, TOP_K_SWEEP, TOP_P_SWEEP};
