//! The experiment graph from raw corpus to bootstrap report. Every stage
//! records a manifest of its input digest and output hashes and is skipped
//! when both still match.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    seed_plan, CorpusConfig, EvalConfig, ExperimentConfig, ExternalOutcomes, GenerationSettings, GoodConfig,
    KeepSnapshots, MixtureSettings, PairSource, ReportSettings, StrategyConfig, TokenizerConfig, TrainingConfig,
    BASELINE, PERPLEXITY_TASK, ROOT_ENV,
};

use crate::corpus::{load_documents, read_jsonl, write_jsonl, Document, MinimalPair, Splits};
use crate::corpusgen::{extract_clean_seeds, generate_corpus, GeneratedCorpus, GenerationConfig, SeedSet};
use crate::digest::{json_digest, sha256_hex};
use crate::error::{Error, Result};
use crate::evalstat::{
    build_report, select_checkpoints, select_good, GoodSelection, MinimalPairTask, OutcomeMatrix, PerplexityTask,
    ReportConfig, TaskAdapter, TaskSpec,
};
use crate::lm::{CheckpointId, CheckpointedModel};
use crate::mixer::{train_mixture, MixtureConfig, TrainSchedule};
use crate::ngram::{derive_amateur, AmateurSpec, SnapshotFormat};
use crate::registry::{write_atomic, Registry};
use crate::rng::{derive_u64, label};
use crate::tokenizer::TokenizerModel;
use crate::{desk_corpus, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    Tokenize,
    Train,
    SelectGood,
    DeriveBad,
    Generate,
    MixTrain,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Prepare,
        Stage::Tokenize,
        Stage::Train,
        Stage::SelectGood,
        Stage::DeriveBad,
        Stage::Generate,
        Stage::MixTrain,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Tokenize => "tokenize",
            Stage::Train => "train",
            Stage::SelectGood => "select-good",
            Stage::DeriveBad => "derive-bad",
            Stage::Generate => "generate",
            Stage::MixTrain => "mix-train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::argument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    /// Digest of the stage's configuration and all upstream manifests.
    pub inputs: String,
    /// Output path relative to the experiment directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub info: Value,
}

impl StageManifest {
    pub fn digest(&self) -> Result<String> {
        json_digest(&(&self.stage, &self.inputs, &self.outputs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub dir: PathBuf,
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// Selected GOOD model, as written to `selection/good.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodRecord {
    pub run: u64,
    pub run_seed: u64,
    pub id: CheckpointId,
    pub selection: GoodSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmateurRecord {
    pub name: String,
    pub spec: AmateurSpec,
    pub id: CheckpointId,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmateurSummary {
    pub good: CheckpointId,
    pub good_perplexity: f64,
    pub amateurs: Vec<AmateurRecord>,
}

const STAGES_DIR: &str = "stages";
const MODELS_DIR: &str = "models";
const TOKENIZER_FILE: &str = "tokenizer/tokenizer.txt";
const BASELINE_OUTCOMES: &str = "outcomes/baseline.jsonl";
const ALL_OUTCOMES: &str = "outcomes/all.jsonl";
const GOOD_FILE: &str = "selection/good.json";
const AMATEURS_FILE: &str = "selection/amateurs.json";
const CHECKPOINTS_FILE: &str = "selection/checkpoints.json";
const SEEDS_FILE: &str = "corpora/seeds.json";
pub const REPORT_JSON: &str = "report/report.json";
pub const REPORT_TABLE: &str = "report/report.md";
pub const REPORT_CSV: &str = "report/report.csv";
pub const REPORT_LATEX: &str = "report/report.tex";

fn split_file(name: &str) -> String {
    format!("data/{name}.jsonl")
}

fn pairs_file(task: &str) -> String {
    format!("data/pairs/{task}.jsonl")
}

fn corpus_dir(strategy: &str) -> String {
    format!("corpora/{strategy}")
}

fn outcomes_file(method: &str) -> String {
    format!("outcomes/{method}.jsonl")
}

fn run_family(method: &str, run: usize) -> String {
    format!("{method}-r{run}")
}

/// Seed of the built-in desk corpus and its minimal pairs.
pub fn desk_seed(master_seed: u64) -> u64 {
    derive_u64(master_seed, &[label("desk")])
}

/// Evaluation tasks built from the prepared splits.
pub struct Tasks {
    pub adapters: Vec<Box<dyn TaskAdapter>>,
}

impl Tasks {
    pub fn specs(&self) -> Vec<TaskSpec> {
        self.adapters.iter().map(|a| a.spec()).collect()
    }

    /// Score `model` on every task, in order.
    pub fn score(&self, model: &CheckpointedModel) -> Result<Vec<(String, Vec<f64>)>> {
        self.adapters.iter().map(|a| Ok((a.spec().name, a.score(model)?))).collect()
    }
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    dir: PathBuf,
    workers: usize,
}

struct Run<'a> {
    method: &'a str,
    real: Arc<Vec<Vec<TokenId>>>,
    synth: Arc<Vec<Vec<TokenId>>>,
    ratio: f64,
}

impl Pipeline {
    /// A pipeline rooted at the config's experiment directory.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.experiment_dir()?;
        Ok(Pipeline { cfg, dir, workers: 0 })
    }

    /// A pipeline rooted at an explicit directory.
    pub fn at(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline { cfg, dir: dir.into(), workers: 0 })
    }

    /// Worker threads; 0 uses every available core. Results do not depend on it.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn run(&self) -> Result<PipelineOutcome> {
        self.run_until(Stage::Report)
    }

    /// Execute every stage up to and including `last`, skipping those whose
    /// inputs and outputs are unchanged.
    pub fn run_until(&self, last: Stage) -> Result<PipelineOutcome> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| {
            fs::create_dir_all(&self.dir)?;
            self.write_if_changed("config.toml", self.cfg.to_toml()?.as_bytes())?;
            let mut done: Vec<StageManifest> = Vec::new();
            let mut outcome = PipelineOutcome { dir: self.dir.clone(), executed: Vec::new(), skipped: Vec::new() };
            for stage in Stage::ALL.into_iter().take_while(|s| *s <= last) {
                let (manifest, ran) = self.ensure(stage, &done).map_err(|e| Error::Stage {
                    stage: stage.name().into(),
                    completed: done.iter().map(|m| m.stage.name().to_string()).collect(),
                    source: Box::new(e),
                })?;
                if ran {
                    outcome.executed.push(stage);
                } else {
                    outcome.skipped.push(stage);
                }
                done.push(manifest);
            }
            Ok(outcome)
        })
    }

    fn write_if_changed(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if fs::read(&path).ok().as_deref() != Some(bytes) {
            write_atomic(&path, bytes)?;
        }
        Ok(())
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(STAGES_DIR).join(format!("{}.json", stage.name()))
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
    }

    fn stage_inputs(&self, stage: Stage, upstream: &[StageManifest]) -> Result<String> {
        let c = &self.cfg;
        let section = match stage {
            Stage::Prepare => {
                let files = c.corpus.paths.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
                let pair_files = c
                    .eval
                    .minimal_pairs
                    .iter()
                    .filter_map(|p| p.path.as_ref())
                    .map(|p| file_digest(p))
                    .collect::<Result<Vec<_>>>()?;
                json!({"master_seed": c.master_seed, "corpus": c.corpus, "files": files,
                       "pairs": c.eval.minimal_pairs, "pair_files": pair_files})
            }
            Stage::Tokenize => json!(c.tokenizer),
            Stage::Train => json!({"ngram": c.ngram, "training": c.training, "window": c.eval.window,
                                   "runs": seed_plan(c.master_seed, c.training.n_runs)?}),
            Stage::SelectGood => json!(c.good),
            Stage::DeriveBad => json!({"amateurs": self.amateur_specs(), "master_seed": c.master_seed}),
            Stage::Generate => json!({"strategies": c.strategies, "generation": c.generation,
                                      "ratios": c.mixture.ratios, "master_seed": c.master_seed}),
            Stage::MixTrain => json!({"ratios": c.mixture.ratios, "strategies": c.strategies}),
            Stage::Eval => {
                let files = c.eval.external.iter().map(|e| file_digest(&e.path)).collect::<Result<Vec<_>>>()?;
                json!({"external": c.eval.external, "files": files})
            }
            Stage::Report => json!({"report": c.report, "seed": c.report_seed()}),
        };
        let up = upstream.iter().map(|m| m.digest()).collect::<Result<Vec<_>>>()?;
        json_digest(&json!({"stage": stage, "config": section, "upstream": up}))
    }

    fn is_current(&self, manifest: &StageManifest, inputs: &str) -> bool {
        manifest.inputs == inputs
            && manifest.outputs.iter().all(|(rel, sha)| fs::read(self.path(rel)).is_ok_and(|b| sha256_hex(&b) == *sha))
    }

    fn ensure(&self, stage: Stage, upstream: &[StageManifest]) -> Result<(StageManifest, bool)> {
        let inputs = self.stage_inputs(stage, upstream)?;
        if let Some(m) = self.read_manifest(stage)? {
            if self.is_current(&m, &inputs) {
                log::info!("stage {stage}: up to date");
                return Ok((m, false));
            }
        }
        log::info!("stage {stage}: running");
        let (files, info) = match stage {
            Stage::Prepare => self.prepare()?,
            Stage::Tokenize => self.tokenize()?,
            Stage::Train => self.train()?,
            Stage::SelectGood => self.select_good()?,
            Stage::DeriveBad => self.derive_bad()?,
            Stage::Generate => self.generate()?,
            Stage::MixTrain => self.mix_train()?,
            Stage::Eval => self.eval()?,
            Stage::Report => self.report()?,
        };
        let mut outputs = BTreeMap::new();
        for rel in files {
            let sha = sha256_hex(&fs::read(self.path(&rel))?);
            outputs.insert(rel, sha);
        }
        let manifest = StageManifest { stage, inputs, outputs, info };
        write_atomic(&self.manifest_path(stage), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok((manifest, true))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<String> {
        write_atomic(&self.path(rel), &serde_json::to_vec_pretty(value)?)?;
        Ok(rel.to_string())
    }

    fn write_records<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<String> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_jsonl(&path, items)?;
        Ok(rel.to_string())
    }

    pub fn registry(&self) -> Result<Registry> {
        Registry::open(self.path(MODELS_DIR))
    }

    fn model_file(&self, registry: &Registry, id: &CheckpointId) -> Result<String> {
        let entry = registry.entry(id).ok_or_else(|| Error::Registry(format!("{id} missing after save")))?;
        Ok(format!("{MODELS_DIR}/{}", entry.file))
    }

    pub fn load_split(&self, name: &str) -> Result<Vec<Document>> {
        read_jsonl(&self.path(&split_file(name)))
    }

    pub fn tokenizer(&self) -> Result<TokenizerModel> {
        TokenizerModel::load(&self.path(TOKENIZER_FILE))
    }

    pub fn tasks(&self, tok: &TokenizerModel) -> Result<Tasks> {
        let eval = self.load_split("eval")?;
        let mut adapters: Vec<Box<dyn TaskAdapter>> =
            vec![Box::new(PerplexityTask::from_documents(&eval, tok, self.cfg.eval.window)?)];
        for p in &self.cfg.eval.minimal_pairs {
            let pairs: Vec<MinimalPair> = read_jsonl(&self.path(&pairs_file(&p.name)))?;
            adapters.push(Box::new(MinimalPairTask::new(p.name.clone(), &pairs, tok)?));
        }
        Ok(Tasks { adapters })
    }

    /// Every task spec, external ones included.
    pub fn task_specs(&self) -> Vec<TaskSpec> {
        let mut specs = vec![TaskSpec::perplexity()];
        specs.extend(self.cfg.eval.minimal_pairs.iter().map(|p| TaskSpec::accuracy(p.name.clone())));
        specs.extend(self.cfg.eval.external.iter().map(|e| e.task.clone()));
        specs
    }

    fn amateur_specs(&self) -> Vec<AmateurSpec> {
        let mut out: Vec<AmateurSpec> = Vec::new();
        for s in &self.cfg.strategies {
            if let Some(a) = &s.amateur {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
        }
        out
    }

    fn active_strategies(&self) -> Vec<&StrategyConfig> {
        if self.cfg.mixture.ratios.iter().any(|&q| q > 0.0) {
            self.cfg.strategies.iter().collect()
        } else {
            Vec::new()
        }
    }

    /// Report rows in order: the baseline, then strategies by ratio.
    pub fn methods(&self) -> Vec<String> {
        let mut out = vec![BASELINE.to_string()];
        for s in self.active_strategies() {
            for &q in self.cfg.mixture.ratios.iter().filter(|&&q| q > 0.0) {
                out.push(ExperimentConfig::method_name(s, q));
            }
        }
        out
    }

    fn prepare(&self) -> Result<(Vec<String>, Value)> {
        let c = &self.cfg;
        let docs = if c.corpus.paths.is_empty() {
            desk_corpus::generate(desk_seed(c.master_seed), c.corpus.builtin_words)
        } else {
            let mut docs = Vec::new();
            for p in &c.corpus.paths {
                docs.extend(load_documents(p)?);
            }
            docs
        };
        let Splits { train, eval, seeds } =
            crate::corpus::split_documents(&docs, c.corpus.split, derive_u64(c.master_seed, &[label("split")]))?;
        let mut files = Vec::new();
        for (name, split) in [("train", &train), ("eval", &eval), ("seeds", &seeds)] {
            files.push(self.write_records(&split_file(name), split)?);
        }
        for p in &c.eval.minimal_pairs {
            let pairs = match (&p.path, p.builtin) {
                (Some(path), _) => read_jsonl::<MinimalPair>(path)?,
                (None, Some(n)) => {
                    if !c.corpus.paths.is_empty() {
                        log::warn!("built-in pairs for `{}` use the desk lexicon, not your corpus", p.name);
                    }
                    desk_corpus::minimal_pairs(desk_seed(c.master_seed), n)
                }
                (None, None) => unreachable!("validated"),
            };
            files.push(self.write_records(&pairs_file(&p.name), &pairs)?);
        }
        let words = |d: &[Document]| d.iter().map(|d| d.text.split_whitespace().count()).sum::<usize>();
        let info = json!({
            "documents": {"train": train.len(), "eval": eval.len(), "seeds": seeds.len()},
            "words": {"train": words(&train), "eval": words(&eval), "seeds": words(&seeds)},
        });
        Ok((files, info))
    }

    fn tokenize(&self) -> Result<(Vec<String>, Value)> {
        let train = self.load_split("train")?;
        let tok = TokenizerModel::train(train.iter().map(|d| d.text.as_str()), self.cfg.tokenizer.vocab_size)?;
        let path = self.path(TOKENIZER_FILE);
        fs::create_dir_all(path.parent().expect("nested path"))?;
        tok.save(&path)?;
        Ok((vec![TOKENIZER_FILE.into()], json!({"vocab_size": tok.vocab_size(), "merges": tok.merges().len()})))
    }

    fn train_tokens(&self, tok: &TokenizerModel) -> Result<Arc<Vec<Vec<TokenId>>>> {
        let train = self.load_split("train")?;
        Ok(Arc::new(tok.encode_many(&train.iter().map(|d| d.text.as_str()).collect::<Vec<_>>())))
    }

    fn mixture_config(&self, ratio: f64, run_seed: u64) -> MixtureConfig {
        MixtureConfig {
            synth_ratio: ratio,
            batch_sequences: self.cfg.training.batch_sequences,
            seq_len: self.cfg.training.seq_len,
            reshuffle_seed: run_seed,
        }
    }

    fn schedule(&self) -> TrainSchedule {
        TrainSchedule { steps: self.cfg.training.steps, snapshot_every: self.cfg.training.snapshot_every }
    }

    /// Train all runs of one method, scoring every snapshot as it appears.
    /// Returns the outcome matrix and the snapshots to keep.
    fn train_runs(&self, run: &Run, tok: &TokenizerModel, tasks: &Tasks) -> Result<(OutcomeMatrix, Vec<CheckpointedModel>)> {
        let seeds = seed_plan(self.cfg.master_seed, self.cfg.training.n_runs)?;
        let keep = self.cfg.training.keep_snapshots;
        let schedule = self.schedule();
        let per_run: Vec<(OutcomeMatrix, Vec<CheckpointedModel>)> = seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| {
                let mut outcomes = OutcomeMatrix::new(tasks.specs());
                let mut kept = Vec::new();
                train_mixture(
                    run.real.clone(),
                    run.synth.clone(),
                    tok.eos(),
                    tok.vocab_size(),
                    &self.cfg.ngram,
                    &self.mixture_config(run.ratio, seed),
                    &schedule,
                    &run_family(run.method, i),
                    |m| {
                        for (task, values) in tasks.score(&m)? {
                            outcomes.insert(run.method, &task, i as u64, m.id.step, values)?;
                        }
                        if keep == KeepSnapshots::All || (keep == KeepSnapshots::Final && m.id.step == schedule.steps) {
                            kept.push(m);
                        }
                        Ok(ControlFlow::Continue(()))
                    },
                )?;
                log::info!("{} run {i} trained", run.method);
                Ok((outcomes, kept))
            })
            .collect::<Result<_>>()?;
        let mut matrix = OutcomeMatrix::new(tasks.specs());
        let mut kept = Vec::new();
        for (m, k) in per_run {
            matrix.merge(m)?;
            kept.extend(k);
        }
        Ok((matrix, kept))
    }

    /// Re-run baseline training for `run` and return its snapshot at `step`.
    pub fn replay_baseline(&self, run: usize, step: u64, tok: &TokenizerModel) -> Result<CheckpointedModel> {
        let seeds = seed_plan(self.cfg.master_seed, self.cfg.training.n_runs)?;
        let seed = *seeds.get(run).ok_or_else(|| Error::argument(format!("no baseline run {run}")))?;
        let mut found = None;
        train_mixture(
            self.train_tokens(tok)?,
            Arc::new(Vec::new()),
            tok.eos(),
            tok.vocab_size(),
            &self.cfg.ngram,
            &self.mixture_config(0.0, seed),
            &self.schedule(),
            &run_family(BASELINE, run),
            |m| {
                if m.id.step == step {
                    found = Some(m);
                    return Ok(ControlFlow::Break(()));
                }
                Ok(ControlFlow::Continue(()))
            },
        )?;
        found.ok_or_else(|| Error::config(format!("baseline run {run} has no snapshot at step {step}")))
    }

    fn save_models(&self, registry: &mut Registry, models: &[CheckpointedModel]) -> Result<Vec<String>> {
        let mut files = Vec::new();
        for m in models {
            registry.save(m, SnapshotFormat::Binary)?;
            files.push(self.model_file(registry, &m.id)?);
        }
        Ok(files)
    }

    fn train(&self) -> Result<(Vec<String>, Value)> {
        let tok = self.tokenizer()?;
        let tasks = self.tasks(&tok)?;
        let run = Run { method: BASELINE, real: self.train_tokens(&tok)?, synth: Arc::new(Vec::new()), ratio: 0.0 };
        let (matrix, kept) = self.train_runs(&run, &tok, &tasks)?;
        let mut files = vec![self.write_records(BASELINE_OUTCOMES, &matrix.to_records())?];
        files.extend(self.save_models(&mut self.registry()?, &kept)?);
        let seeds = seed_plan(self.cfg.master_seed, self.cfg.training.n_runs)?;
        let runs: Vec<Value> =
            seeds.iter().enumerate().map(|(i, s)| json!({"run": i, "seed": s, "family": run_family(BASELINE, i)})).collect();
        Ok((files, json!({"runs": runs, "snapshot_steps": self.cfg.snapshot_steps()})))
    }

    fn read_outcomes(&self, rel: &str) -> Result<OutcomeMatrix> {
        OutcomeMatrix::read(&self.path(rel), self.task_specs())
    }

    fn select_good(&self) -> Result<(Vec<String>, Value)> {
        let matrix = self.read_outcomes(BASELINE_OUTCOMES)?;
        let selection = select_good(&matrix, BASELINE, &self.cfg.good.perplexity_task)?;
        let tok = self.tokenizer()?;
        let good = self.replay_baseline(selection.seed as usize, selection.checkpoint, &tok)?;
        let mut registry = self.registry()?;
        let mut files = self.save_models(&mut registry, std::slice::from_ref(&good))?;
        let seeds = seed_plan(self.cfg.master_seed, self.cfg.training.n_runs)?;
        let record =
            GoodRecord { run: selection.seed, run_seed: seeds[selection.seed as usize], id: good.id.clone(), selection };
        files.push(self.write_json(GOOD_FILE, &record)?);
        Ok((files, json!({"good": good.id.to_string()})))
    }

    pub fn good_record(&self) -> Result<GoodRecord> {
        Ok(serde_json::from_slice(&fs::read(self.path(GOOD_FILE))?)?)
    }

    pub fn amateur_summary(&self) -> Result<AmateurSummary> {
        Ok(serde_json::from_slice(&fs::read(self.path(AMATEURS_FILE))?)?)
    }

    fn derive_bad(&self) -> Result<(Vec<String>, Value)> {
        let record = self.good_record()?;
        let mut registry = self.registry()?;
        let good = registry.load(&record.id)?;
        let tok = self.tokenizer()?;
        let eval = self.load_split("eval")?;
        let ppl_task = PerplexityTask::from_documents(&eval, &tok, self.cfg.eval.window)?;
        let ppl = |m: &CheckpointedModel| -> Result<f64> { Ok(ppl_task.spec().aggregation.apply(&ppl_task.score(m)?)) };
        let mut files = Vec::new();
        let mut amateurs = Vec::new();
        for spec in self.amateur_specs() {
            if let AmateurSpec::EarlierCheckpoint { step } = spec {
                let early = self.replay_baseline(record.run as usize, step, &tok)?;
                files.extend(self.save_models(&mut registry, &[early])?);
            }
            let name = spec.to_string();
            let seed = derive_u64(self.cfg.master_seed, &[label("amateur"), label(&name)]);
            let bad = derive_amateur(&good, &spec, seed, &registry)?;
            files.extend(self.save_models(&mut registry, std::slice::from_ref(&bad))?);
            let perplexity = ppl(&bad)?;
            log::info!("amateur {name} ({}) perplexity {perplexity:.3}", bad.id);
            amateurs.push(AmateurRecord { name, spec, id: bad.id.clone(), perplexity });
        }
        let summary = AmateurSummary { good: good.id.clone(), good_perplexity: ppl(&good)?, amateurs };
        files.push(self.write_json(AMATEURS_FILE, &summary)?);
        files.sort();
        files.dedup();
        Ok((files, json!({"good_perplexity": summary.good_perplexity})))
    }

    /// Seeds per domain: enough completions to reach the budget with 25% slack,
    /// assuming each completion runs about one seed-document length past the prefix.
    fn seed_quota(&self, docs: &[Document], tok: &TokenizerModel) -> usize {
        let g = &self.cfg.generation;
        if let Some(q) = g.seeds_per_domain {
            return q;
        }
        let lens: Vec<usize> = tok.encode_many(&docs.iter().map(|d| d.text.as_str()).collect::<Vec<_>>()).iter().map(Vec::len).collect();
        let avg = lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64;
        let per_completion = (avg - g.prefix_len as f64).clamp(1.0, g.max_new as f64);
        let domains = docs.iter().map(|d| d.domain.as_str()).collect::<std::collections::BTreeSet<_>>().len().max(1);
        let seeds = g.token_budget as f64 / (g.completions_per_seed as f64 * per_completion);
        (seeds * 1.25 / domains as f64).ceil() as usize
    }

    fn generate(&self) -> Result<(Vec<String>, Value)> {
        let strategies = self.active_strategies();
        if strategies.is_empty() {
            return Ok((Vec::new(), json!({"corpora": []})));
        }
        let tok = self.tokenizer()?;
        let seed_docs = self.load_split("seeds")?;
        let eval = self.load_split("eval")?;
        let quota = self.seed_quota(&seed_docs, &tok);
        let (seeds, dropped) =
            extract_clean_seeds(&seed_docs, &tok, self.cfg.generation.prefix_len, quota, &[eval.as_slice()])?;
        let mut files = vec![self.write_json(SEEDS_FILE, &seeds)?];
        let registry = self.registry()?;
        let good = registry.load(&self.good_record()?.id)?;
        let amateurs = self.amateur_summary()?;
        let g = &self.cfg.generation;
        let gen_cfg = GenerationConfig {
            completions_per_seed: g.completions_per_seed,
            max_new: g.max_new,
            token_budget: g.token_budget,
            master_seed: derive_u64(self.cfg.master_seed, &[label("generate")]),
            count_prefix: g.count_prefix,
        };
        let mut corpora = Vec::new();
        for s in strategies {
            let bad = match &s.amateur {
                Some(spec) => {
                    let rec = amateurs
                        .amateurs
                        .iter()
                        .find(|a| &a.spec == spec)
                        .ok_or_else(|| Error::config(format!("amateur {spec} was not derived")))?;
                    Some(registry.load(&rec.id)?)
                }
                None => None,
            };
            let name = s.name();
            log::info!("generating {name}");
            let corpus =
                generate_corpus(&s.decoding, &good, bad.as_ref(), &tok, &seeds, &gen_cfg, rayon::current_num_threads())?;
            let dir = corpus_dir(&name);
            corpus.write(&self.path(&dir))?;
            files.push(format!("{dir}/{}", crate::corpusgen::CORPUS_FILE));
            files.push(format!("{dir}/{}", crate::corpusgen::MANIFEST_FILE));
            corpora.push(json!({"strategy": name, "records": corpus.manifest.records,
                                "tokens": corpus.manifest.produced_tokens, "status": corpus.manifest.status}));
        }
        Ok((files, json!({"seeds": seeds.len(), "seeds_per_domain": quota, "dropped_seeds": dropped, "corpora": corpora})))
    }

    pub fn seed_set(&self) -> Result<SeedSet> {
        Ok(serde_json::from_slice(&fs::read(self.path(SEEDS_FILE))?)?)
    }

    pub fn corpus(&self, strategy: &str) -> Result<GeneratedCorpus> {
        GeneratedCorpus::read(&self.path(&corpus_dir(strategy)))
    }

    fn mix_train(&self) -> Result<(Vec<String>, Value)> {
        let strategies = self.active_strategies();
        if strategies.is_empty() {
            return Ok((Vec::new(), json!({"methods": []})));
        }
        let tok = self.tokenizer()?;
        let tasks = self.tasks(&tok)?;
        let real = self.train_tokens(&tok)?;
        let mut registry = self.registry()?;
        let mut files = Vec::new();
        let mut methods = Vec::new();
        for s in strategies {
            let corpus = self.corpus(&s.name())?;
            let synth = Arc::new(tok.encode_many(&corpus.texts()));
            for &q in self.cfg.mixture.ratios.iter().filter(|&&q| q > 0.0) {
                let method = ExperimentConfig::method_name(s, q);
                let run = Run { method: &method, real: real.clone(), synth: synth.clone(), ratio: q };
                let (matrix, kept) = self.train_runs(&run, &tok, &tasks)?;
                files.push(self.write_records(&outcomes_file(&method), &matrix.to_records())?);
                files.extend(self.save_models(&mut registry, &kept)?);
                methods.push(method);
            }
        }
        Ok((files, json!({"methods": methods})))
    }

    fn eval(&self) -> Result<(Vec<String>, Value)> {
        let mut matrix = self.read_outcomes(BASELINE_OUTCOMES)?;
        for method in self.methods().iter().skip(1) {
            matrix.merge(self.read_outcomes(&outcomes_file(method))?)?;
        }
        for e in &self.cfg.eval.external {
            let records: Vec<_> = read_jsonl::<crate::evalstat::OutcomeRecord>(&e.path)?
                .into_iter()
                .filter(|r| r.task == e.task.name)
                .collect();
            if records.is_empty() {
                return Err(Error::config(format!("{} has no `{}` outcomes", e.path.display(), e.task.name)));
            }
            matrix.merge(OutcomeMatrix::from_records([e.task.clone()], &records)?)?;
        }
        let selected = select_checkpoints(&matrix)?;
        let checkpoints: Vec<Value> = selected
            .cells
            .iter()
            .map(|((m, t, s), (c, _))| json!({"method": m, "task": t, "seed": s, "checkpoint": c}))
            .collect();
        let files = vec![self.write_records(ALL_OUTCOMES, &matrix.to_records())?, self.write_json(CHECKPOINTS_FILE, &checkpoints)?];
        Ok((files, json!({"cells": matrix.cells().count()})))
    }

    pub fn outcomes(&self) -> Result<OutcomeMatrix> {
        self.read_outcomes(ALL_OUTCOMES)
    }

    fn report(&self) -> Result<(Vec<String>, Value)> {
        let selected = select_checkpoints(&self.outcomes()?)?;
        let cfg = ReportConfig {
            baseline: BASELINE.into(),
            resamples: self.cfg.report.resamples,
            seed: self.cfg.report_seed(),
            se_mode: self.cfg.report.se_mode,
            method_order: self.methods(),
            task_order: self.task_specs().into_iter().map(|t| t.name).collect(),
            labels: BTreeMap::new(),
        };
        let report = build_report(&selected, &cfg)?;
        let mut files = Vec::new();
        for (rel, text) in [
            (REPORT_JSON, report.to_json()?),
            (REPORT_TABLE, report.render_table()),
            (REPORT_CSV, report.render_csv()),
            (REPORT_LATEX, report.render_latex()),
        ] {
            write_atomic(&self.path(rel), text.as_bytes())?;
            files.push(rel.to_string());
        }
        let mu: BTreeMap<&str, Option<f64>> = report.rows.iter().map(|r| (r.method.as_str(), r.mu_delta_rel)).collect();
        Ok((files, json!({"mu_delta_rel": mu})))
    }

    pub fn read_report(&self) -> Result<crate::evalstat::BootstrapReport> {
        crate::evalstat::BootstrapReport::from_json(&fs::read_to_string(self.path(REPORT_JSON))?)
    }
}

fn file_digest(path: &Path) -> Result<(String, String)> {
    let bytes = fs::read(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    Ok((path.display().to_string(), sha256_hex(&bytes)))
}
