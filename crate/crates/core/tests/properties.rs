//! Property tests for the invariants the modules promise.

use std::sync::Arc;

use proptest::prelude::*;
use synthforge::corpus::{split_documents, Document, SplitFractions};
use synthforge::decoder::{generate, score_step, v_head, DecodingStrategy};
use synthforge::evalstat::{
    compare, compare_draws, mean_max_select, paired_bootstrap, select_checkpoints, summarize, Direction, OutcomeMatrix,
    PerplexityTask, SeMode, TaskAdapter, TaskSpec,
};
use synthforge::lm::{perplexity, LanguageModel, NextTokenDist};
use synthforge::mixer::{BatchStream, MixtureConfig};
use synthforge::ngram::{train_ngram, NgramConfig};
use synthforge::pipeline::seed_plan;
use synthforge::rng::substream;
use synthforge::TokenId;

fn dist(max_v: usize) -> impl Strategy<Value = NextTokenDist> {
    prop::collection::vec(0.001f64..1.0, 2..=max_v).prop_map(|w| NextTokenDist::from_weights(w).unwrap())
}

fn binary(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), n)
}

fn docs(max_docs: usize) -> impl Strategy<Value = Vec<Vec<TokenId>>> {
    prop::collection::vec(prop::collection::vec(1u32..50, 1..80), 1..max_docs)
}

struct Fixed(NextTokenDist);

impl LanguageModel for Fixed {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }
    fn max_context(&self) -> usize {
        0
    }
    fn next_dist(&self, _: &[TokenId]) -> NextTokenDist {
        self.0.clone()
    }
}

fn matrix(a: &[f64], b: &[f64], c: &[f64], order: [&str; 3]) -> OutcomeMatrix {
    let mut m = OutcomeMatrix::new([TaskSpec::accuracy("t")]);
    for (name, v) in order.iter().zip([a, b, c]) {
        for seed in 0..2 {
            m.insert(name, "t", seed, 1, v.to_vec()).unwrap();
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bootstrap_comparisons_ignore_method_order(a in binary(30), b in binary(30), c in binary(30), seed in 0u64..1000) {
        let m1 = select_checkpoints(&matrix(&a, &b, &c, ["x", "y", "z"])).unwrap();
        let m2 = select_checkpoints(&matrix(&c, &a, &b, ["z", "x", "y"])).unwrap();
        let d1 = paired_bootstrap(&m1, 200, seed).unwrap();
        let d2 = paired_bootstrap(&m2, 200, seed).unwrap();
        for (p, q) in [("x", "y"), ("y", "z"), ("z", "x")] {
            prop_assert_eq!(compare(&d1, p, q, "t").unwrap(), compare(&d2, p, q, "t").unwrap());
        }
    }

    #[test]
    fn comparison_bounds(first in prop::collection::vec(-1.0f64..1.0, 2..300), shift in -0.5f64..0.5) {
        let second: Vec<f64> = first.iter().map(|x| x * 0.5 + shift).collect();
        let c = compare_draws(&first, &second).unwrap();
        let b = first.len() as f64;
        prop_assert!(c.p_value >= 1.0 / (b + 1.0) && c.p_value <= 1.0);
        prop_assert!(c.ci_low <= c.ci_high);
        prop_assert_eq!(c.significant, !(c.ci_low <= 0.0 && 0.0 <= c.ci_high));
    }

    #[test]
    fn draw_mean_lies_in_its_percentile_interval(y in binary(200), seed in 0u64..1000) {
        let mut m = OutcomeMatrix::new([TaskSpec::accuracy("t")]);
        m.insert("m", "t", 0, 1, y).unwrap();
        let draws = paired_bootstrap(&select_checkpoints(&m).unwrap(), 500, seed).unwrap();
        let d = draws.get("m", "t").unwrap();
        let s = summarize(d, SeMode::DrawSd).unwrap();
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = synthforge::evalstat::percentile(&sorted, 0.025);
        let hi = synthforge::evalstat::percentile(&sorted, 0.975);
        prop_assert!(lo <= s.mean && s.mean <= hi);
        let sqrt_b = summarize(d, SeMode::DrawSdOverSqrtB).unwrap();
        prop_assert!((sqrt_b.se * (d.len() as f64).sqrt() - s.se).abs() <= 1e-12 * (1.0 + s.se));
    }

    #[test]
    fn mean_max_select_picks_earliest_best(scores in prop::collection::vec(0u8..5, 1..20), higher in prop::bool::ANY) {
        let scored: Vec<(u64, f64)> = scores.iter().enumerate().map(|(i, &s)| ((i as u64 + 1) * 100, s as f64)).collect();
        let direction = if higher { Direction::HigherBetter } else { Direction::LowerBetter };
        let chosen = mean_max_select(&scored, direction).unwrap();
        let best = if higher { *scores.iter().max().unwrap() } else { *scores.iter().min().unwrap() };
        let first = scores.iter().position(|&s| s == best).unwrap();
        prop_assert_eq!(chosen, (first as u64 + 1) * 100);
    }

    #[test]
    fn batches_meet_the_quota_and_repeat(real in docs(30), synth in docs(10), q in 0.0f64..0.95, b in 1usize..40, seed in 0u64..100) {
        let cfg = MixtureConfig { synth_ratio: q, batch_sequences: b, seq_len: 8, reshuffle_seed: seed };
        let real = Arc::new(real);
        let synth = Arc::new(synth);
        let build = || BatchStream::from_tokens(real.clone(), synth.clone(), 0, &cfg);
        let (Ok(mut s1), Ok(mut s2)) = (build(), build()) else {
            // Corpora shorter than one sequence are rejected; nothing to check.
            return Ok(());
        };
        let quota = cfg.synth_per_batch();
        prop_assert!((quota as f64 / b as f64 - q).abs() < 1.0 / b as f64);
        for _ in 0..10 {
            let x = s1.next_batch();
            prop_assert_eq!(x.synthetic.len(), quota);
            prop_assert_eq!(x.len(), b);
            prop_assert!(x.sequences().all(|s| s.len() == 8));
            prop_assert_eq!(x, s2.next_batch());
        }
    }

    #[test]
    fn cd_without_contrast_is_vhead_sampling(g in dist(16), b in dist(16), alpha in 0.01f64..1.0) {
        prop_assume!(g.len() == b.len());
        let cd0 = score_step(&DecodingStrategy::cd().with_alpha(alpha).with_lambda(0.0), &g, Some(&b), None).unwrap();
        let vh = score_step(&DecodingStrategy::no_contrast_vhead().with_alpha(alpha), &g, None, None).unwrap();
        prop_assert_eq!(cd0.ids(), vh.ids());
        prop_assert_eq!(cd0.probs(), vh.probs());
        let head = v_head(&g, alpha);
        prop_assert_eq!(cd0.ids(), head.as_slice());
    }

    #[test]
    fn truncation_sizes(g in dist(24), k in 1usize..30, p in 0.05f64..1.0) {
        let topk = score_step(&DecodingStrategy::no_contrast_topk(k), &g, None, None).unwrap();
        prop_assert_eq!(topk.len(), k.min(g.len()));
        let topp = score_step(&DecodingStrategy::no_contrast_topp(p), &g, None, None).unwrap();
        let mass: f64 = topp.ids().iter().map(|&t| g.prob(t)).sum();
        prop_assert!(mass >= p - 1e-12);
        // Dropping the least likely kept token would fall short of p.
        let smallest = topp.ids().iter().map(|&t| g.prob(t)).fold(f64::INFINITY, f64::min);
        prop_assert!(mass - smallest < p + 1e-12);
    }

    #[test]
    fn generated_tokens_stay_in_the_head(g in dist(20), b in dist(20), alpha in 0.05f64..1.0, seed in 0u64..1000) {
        prop_assume!(g.len() == b.len());
        let head = v_head(&g, alpha);
        let (good, bad) = (Fixed(g), Fixed(b));
        let s = DecodingStrategy::cd().with_alpha(alpha);
        let out = generate(&s, &good, Some(&bad), &[0], 50, None, &mut substream(seed, &[])).unwrap();
        prop_assert!(out[1..].iter().all(|t| head.contains(t)));
    }

    #[test]
    fn windowed_perplexity_matches_the_stream(stream in prop::collection::vec(0u32..20, 40..400), window in 1usize..64) {
        let train: Vec<TokenId> = stream.iter().rev().cloned().collect();
        let model = train_ngram(&train, 20, &NgramConfig { order: 3, ..NgramConfig::default() }, train.len(), "p")
            .unwrap()
            .pop()
            .unwrap();
        let task = PerplexityTask::from_stream(stream.clone(), window).unwrap();
        let via_windows = task.spec().aggregation.apply(&task.score(&model).unwrap());
        let direct = perplexity(&model, task.covered_tokens()).unwrap();
        prop_assert!((via_windows - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn seed_plans_are_distinct_and_prefix_stable(master in any::<u64>(), n in 1usize..40) {
        let plan = seed_plan(master, n).unwrap();
        let mut sorted = plan.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
        prop_assert_eq!(&seed_plan(master, 1).unwrap()[..], &plan[..1]);
    }

    #[test]
    fn splits_partition_the_corpus(n in 30usize..300, seed in any::<u64>()) {
        let docs: Vec<Document> =
            (0..n).map(|i| Document { domain: format!("d{}", i % 3), text: format!("doc {i}") }).collect();
        let s = split_documents(&docs, SplitFractions::default(), seed).unwrap();
        let mut all: Vec<&str> = s.train.iter().chain(&s.eval).chain(&s.seeds).map(|d| d.text.as_str()).collect();
        prop_assert_eq!(all.len(), n);
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn outcome_records_round_trip(a in binary(12), b in binary(12)) {
        let m = matrix(&a, &b, &a, ["p", "q", "r"]);
        let back = OutcomeMatrix::from_records([TaskSpec::accuracy("t")], &m.to_records()).unwrap();
        prop_assert_eq!(back.to_records(), m.to_records());
    }
}
