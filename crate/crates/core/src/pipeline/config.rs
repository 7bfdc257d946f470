use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitFractions;
use crate::corpusgen::{DEFAULT_COMPLETIONS_PER_SEED, DEFAULT_MAX_NEW, DEFAULT_PREFIX_LEN};
use crate::decoder::DecodingStrategy;
use crate::digest::{json_digest, short};
use crate::error::{Error, Result};
use crate::evalstat::{SeMode, TaskSpec, DEFAULT_RESAMPLES, DEFAULT_WINDOW};
use crate::ngram::{AmateurSpec, NgramConfig};
use crate::rng::{derive_u64, label};

/// Environment variable that overrides `root`.
pub const ROOT_ENV: &str = "FORGE_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Parent directory of experiment directories. Not part of the digest.
    pub root: PathBuf,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub ngram: NgramConfig,
    pub training: TrainingConfig,
    pub good: GoodConfig,
    pub strategies: Vec<StrategyConfig>,
    pub generation: GenerationSettings,
    pub mixture: MixtureSettings,
    pub eval: EvalConfig,
    pub report: ReportSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSONL or plain-text files. Empty selects the built-in desk corpus.
    pub paths: Vec<PathBuf>,
    /// Approximate size of the built-in corpus in words.
    pub builtin_words: usize,
    pub split: SplitFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
}

/// Which snapshots a training run writes to the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepSnapshots {
    None,
    Final,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: u64,
    pub snapshot_every: u64,
    pub batch_sequences: usize,
    pub seq_len: usize,
    pub n_runs: usize,
    pub keep_snapshots: KeepSnapshots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodConfig {
    pub perplexity_task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Row name; derived from the strategy and amateur when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub decoding: DecodingStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amateur: Option<AmateurSpec>,
}

impl StrategyConfig {
    pub fn name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.amateur {
            Some(a) => format!("{}-{a}", self.decoding.label()),
            None => self.decoding.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub prefix_len: usize,
    pub completions_per_seed: usize,
    pub max_new: usize,
    pub token_budget: u64,
    pub count_prefix: bool,
    /// Seeds taken per domain; derived from the budget when absent.
    pub seeds_per_domain: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSettings {
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSource {
    pub name: String,
    /// JSONL file of `{"good": .., "bad": ..}` records.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Number of built-in agreement pairs, used when `path` is absent.
    #[serde(default)]
    pub builtin: Option<usize>,
}

/// Outcome records computed elsewhere, merged in at the eval stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalOutcomes {
    pub path: PathBuf,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub window: usize,
    pub minimal_pairs: Vec<PairSource>,
    pub external: Vec<ExternalOutcomes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    pub resamples: usize,
    pub se_mode: SeMode,
    /// Bootstrap seed; derived from `master_seed` when absent.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            root: PathBuf::from("experiments"),
            corpus: CorpusConfig::default(),
            tokenizer: TokenizerConfig::default(),
            ngram: NgramConfig::default(),
            training: TrainingConfig::default(),
            good: GoodConfig::default(),
            strategies: vec![
                StrategyConfig { name: None, decoding: DecodingStrategy::no_contrast(), amateur: None },
                StrategyConfig {
                    name: None,
                    decoding: DecodingStrategy::cd(),
                    amateur: Some(AmateurSpec::EarlierCheckpoint { step: 12 }),
                },
            ],
            generation: GenerationSettings::default(),
            mixture: MixtureSettings::default(),
            eval: EvalConfig::default(),
            report: ReportSettings::default(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { paths: Vec::new(), builtin_words: 1_000_000, split: SplitFractions::default() }
    }
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { vocab_size: 8000 }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        // 64 x 128 tokens per step; a snapshot every 12 steps is about 100k tokens.
        TrainingConfig {
            steps: 160,
            snapshot_every: 12,
            batch_sequences: 64,
            seq_len: 128,
            n_runs: 3,
            keep_snapshots: KeepSnapshots::Final,
        }
    }
}

impl Default for GoodConfig {
    fn default() -> Self {
        GoodConfig { perplexity_task: "perplexity".into() }
    }
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            prefix_len: DEFAULT_PREFIX_LEN,
            completions_per_seed: DEFAULT_COMPLETIONS_PER_SEED,
            max_new: DEFAULT_MAX_NEW,
            token_budget: 1_000_000,
            count_prefix: false,
            seeds_per_domain: None,
        }
    }
}

impl Default for MixtureSettings {
    fn default() -> Self {
        MixtureSettings { ratios: vec![0.3] }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window: DEFAULT_WINDOW,
            minimal_pairs: vec![PairSource { name: "agreement".into(), path: None, builtin: Some(2000) }],
            external: Vec::new(),
        }
    }
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings { resamples: DEFAULT_RESAMPLES, se_mode: SeMode::default(), seed: None }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Apply `key.path=value` overrides, the value parsed as a TOML literal
    /// and falling back to a bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::Toml(e.to_string()))?;
        for o in overrides {
            let (key, raw) =
                o.split_once('=').ok_or_else(|| Error::argument(format!("override `{o}` must look like key=value")))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::argument(format!("empty key in `{o}`")))?;
            let mut table = &mut doc;
            for p in parts {
                table = table
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::argument(format!("`{p}` in `{key}` is not a table")))?;
            }
            table.insert(last.to_string(), value);
        }
        Self::from_toml(&toml::to_string(&doc).map_err(|e| Error::Toml(e.to_string()))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.split.validate()?;
        self.ngram.validate()?;
        if self.tokenizer.vocab_size == 0 {
            return Err(Error::config("vocab_size must be positive"));
        }
        let t = &self.training;
        if t.steps == 0 || t.snapshot_every == 0 || t.batch_sequences == 0 || t.seq_len == 0 || t.n_runs == 0 {
            return Err(Error::config("training steps, snapshot_every, batch_sequences, seq_len and n_runs must be positive"));
        }
        if self.mixture.ratios.is_empty() {
            return Err(Error::config("at least one mixture ratio is required"));
        }
        for &q in &self.mixture.ratios {
            if !(0.0..1.0).contains(&q) {
                return Err(Error::config(format!("mixture ratio must be in [0, 1), got {q}")));
            }
        }
        let mut names = BTreeSet::new();
        for s in &self.strategies {
            s.decoding.validate()?;
            match (&s.amateur, s.decoding.is_contrastive()) {
                (None, true) => return Err(Error::config(format!("strategy `{}` needs an amateur", s.name()))),
                (Some(_), false) => return Err(Error::config(format!("strategy `{}` takes no amateur", s.name()))),
                (Some(AmateurSpec::EarlierCheckpoint { step }), _) if !self.snapshot_steps().contains(step) => {
                    return Err(Error::config(format!(
                        "amateur step {step} is not a snapshot step (every {} up to {})",
                        t.snapshot_every, t.steps
                    )))
                }
                _ => {}
            }
            let n = s.name();
            if n == BASELINE || !names.insert(n.clone()) {
                return Err(Error::config(format!("duplicate or reserved strategy name `{n}`")));
            }
        }
        if self.eval.window == 0 {
            return Err(Error::config("eval window must be positive"));
        }
        let mut tasks = BTreeSet::from([PERPLEXITY_TASK.to_string()]);
        for p in &self.eval.minimal_pairs {
            if p.path.is_none() && p.builtin.is_none_or(|n| n == 0) {
                return Err(Error::config(format!("pair task `{}` needs a path or a built-in count", p.name)));
            }
            if !tasks.insert(p.name.clone()) {
                return Err(Error::config(format!("duplicate task `{}`", p.name)));
            }
        }
        for e in &self.eval.external {
            if !tasks.insert(e.task.name.clone()) {
                return Err(Error::config(format!("duplicate task `{}`", e.task.name)));
            }
        }
        if !tasks.contains(&self.good.perplexity_task) {
            return Err(Error::config(format!("unknown selection task `{}`", self.good.perplexity_task)));
        }
        if self.report.resamples < 2 {
            return Err(Error::config("report.resamples must be at least 2"));
        }
        let g = &self.generation;
        if g.prefix_len == 0 || g.completions_per_seed == 0 || g.max_new == 0 {
            return Err(Error::config("prefix_len, completions_per_seed and max_new must be positive"));
        }
        Ok(())
    }

    pub fn snapshot_steps(&self) -> Vec<u64> {
        crate::mixer::TrainSchedule { steps: self.training.steps, snapshot_every: self.training.snapshot_every }
            .snapshot_steps()
    }

    /// Digest of everything that affects results; `root` is excluded.
    pub fn digest(&self) -> Result<String> {
        let mut c = self.clone();
        c.root = PathBuf::new();
        json_digest(&c)
    }

    /// `$FORGE_ROOT` if set, else `root`.
    pub fn resolved_root(&self) -> PathBuf {
        std::env::var_os(ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| self.root.clone())
    }

    /// Experiment directory: a pure function of the config digest, which
    /// includes `master_seed`.
    pub fn experiment_dir(&self) -> Result<PathBuf> {
        Ok(self.resolved_root().join(format!("exp-{}", short(&self.digest()?))))
    }

    pub fn report_seed(&self) -> u64 {
        self.report.seed.unwrap_or_else(|| derive_u64(self.master_seed, &[label("report")]))
    }

    /// Method name of strategy `s` mixed at ratio `q`.
    pub fn method_name(s: &StrategyConfig, q: f64) -> String {
        format!("{}-mr{q}", s.name())
    }
}

pub const BASELINE: &str = "baseline";
pub const PERPLEXITY_TASK: &str = "perplexity";

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Per-run seeds for `n_runs` repetitions: distinct, and stable for a given
/// `master_seed`.
pub fn seed_plan(master_seed: u64, n_runs: usize) -> Result<Vec<u64>> {
    if n_runs == 0 {
        return Err(Error::argument("n_runs must be at least 1"));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|i| derive_u64(master_seed, &[label("run"), i])).collect();
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::config(format!("run seeds collide for master seed {master_seed}")));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn strategy_tables_parse() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            master_seed = 7
            [[strategies]]
            kind = "cd_topk"
            k = 50
            amateur = { kind = "smaller", factor = 10 }
            [mixture]
            ratios = [0.1, 0.3]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.strategies[0].name(), "cd_topk50-small10");
        assert_eq!(ExperimentConfig::method_name(&cfg.strategies[0], 0.3), "cd_topk50-small10-mr0.3");
        assert!(ExperimentConfig::from_toml("[[strategies]]\nkind = \"cd\"\n").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[mixture]\nratios = [1.0]").is_err());
    }

    #[test]
    fn overrides_edit_nested_keys() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&["training.n_runs=10".into(), "master_seed=5".into(), "corpus.paths=[\"a.txt\"]".into()])
            .unwrap();
        assert_eq!(cfg.training.n_runs, 10);
        assert_eq!(cfg.master_seed, 5);
        assert_eq!(cfg.corpus.paths, vec![PathBuf::from("a.txt")]);
        assert!(ExperimentConfig::default().with_overrides(&["nokey".into()]).is_err());
    }

    #[test]
    fn amateur_step_must_be_a_snapshot() {
        let mut cfg = ExperimentConfig::default();
        cfg.strategies[1].amateur = Some(AmateurSpec::EarlierCheckpoint { step: 13 });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_ignores_root_but_not_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.root = "elsewhere".into();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.master_seed = 1;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn seed_plans() {
        let one = seed_plan(42, 1).unwrap();
        assert_eq!(one, vec![derive_u64(42, &[label("run"), 0])]);
        let ten = seed_plan(42, 10).unwrap();
        assert_eq!(ten.iter().collect::<BTreeSet<_>>().len(), 10);
        assert_eq!(ten[..1], one[..]);
        assert_eq!(seed_plan(42, 10).unwrap(), ten);
        let other: BTreeSet<u64> = seed_plan(43, 10).unwrap().into_iter().collect();
        assert!(ten.iter().all(|s| !other.contains(s)));
        assert!(seed_plan(1, 0).is_err());
    }
}
