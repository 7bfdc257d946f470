use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use synthforge::corpus::write_jsonl;
use synthforge::desk_corpus;
use synthforge::pipeline::{ExperimentConfig, Pipeline, PipelineOutcome, Stage, REPORT_JSON, ROOT_ENV};

/// Synthetic-corpus experiments: train, generate, mix, evaluate, report.
#[derive(Parser, Debug)]
#[command(name = "forge", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root under which experiment directories are created.
    #[arg(long, global = true, env = ROOT_ENV)]
    root: Option<PathBuf>,
    /// Use this experiment directory instead of the digest-named one.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    #[arg(long, global = true)]
    n_runs: Option<usize>,
    /// Real corpus file (plain text or JSONL documents); repeatable.
    #[arg(long, global = true)]
    real: Vec<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    snapshot_every: Option<u64>,
    /// Synthetic mixture ratio; repeatable.
    #[arg(long, global = true)]
    ratio: Vec<f64>,
    /// Synthetic token budget per strategy.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Keep only the named strategies; repeatable.
    #[arg(long, global = true)]
    strategy: Vec<String>,
    /// Bootstrap resamples.
    #[arg(long, global = true)]
    resamples: Option<usize>,
    /// Any config key, as `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split the corpus and write minimal-pair sets.
    Prepare,
    /// Train the tokenizer.
    Tokenize,
    /// Train baseline runs and score every snapshot.
    Train,
    /// Pick the GOOD model from the baseline runs.
    SelectGood,
    /// Derive the amateur models.
    DeriveBad,
    /// Generate one synthetic corpus per strategy.
    Generate,
    /// Train mixture runs for every strategy and ratio.
    MixTrain,
    /// Collect outcomes and select checkpoints.
    Eval,
    /// Bootstrap report; prints the table.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Run every stage.
    Pipeline {
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Print the resolved config as TOML.
    Config,
    /// Write the built-in synthetic English corpus as JSONL documents.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        words: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Markdown,
    Latex,
    Csv,
    Json,
}

fn toml_list<T: ToString>(items: &[T], quote: bool) -> String {
    let parts: Vec<String> =
        items.iter().map(|i| if quote { format!("{:?}", i.to_string()) } else { i.to_string() }).collect();
    format!("[{}]", parts.join(", "))
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let mut sets = Vec::new();
    if let Some(v) = c.master_seed {
        sets.push(format!("master_seed={v}"));
    }
    if let Some(v) = c.n_runs {
        sets.push(format!("training.n_runs={v}"));
    }
    if !c.real.is_empty() {
        let paths: Vec<String> = c.real.iter().map(|p| p.display().to_string()).collect();
        sets.push(format!("corpus.paths={}", toml_list(&paths, true)));
    }
    if let Some(v) = c.steps {
        sets.push(format!("training.steps={v}"));
    }
    if let Some(v) = c.snapshot_every {
        sets.push(format!("training.snapshot_every={v}"));
    }
    if !c.ratio.is_empty() {
        let r: Vec<String> = c.ratio.iter().map(|q| format!("{q:?}")).collect();
        sets.push(format!("mixture.ratios={}", toml_list(&r, false)));
    }
    if let Some(v) = c.budget {
        sets.push(format!("generation.token_budget={v}"));
    }
    if let Some(v) = c.resamples {
        sets.push(format!("report.resamples={v}"));
    }
    sets.extend(c.overrides.iter().cloned());
    if !sets.is_empty() {
        cfg = cfg.with_overrides(&sets)?;
    }
    if !c.strategy.is_empty() {
        for name in &c.strategy {
            anyhow::ensure!(cfg.strategies.iter().any(|s| &s.name() == name), "no strategy named `{name}`");
        }
        cfg.strategies.retain(|s| c.strategy.contains(&s.name()));
    }
    // The flag or env var beats the config's root; the default config path is relative.
    if let Some(root) = &c.root {
        cfg.root = root.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    let cfg = resolve_config(c)?;
    let p = match &c.dir {
        Some(d) => Pipeline::at(cfg, d)?,
        None => Pipeline::new(cfg)?,
    };
    Ok(p.with_workers(c.workers))
}

fn summarize(o: &PipelineOutcome) {
    let names = |v: &[Stage]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
    eprintln!("experiment: {}", o.dir.display());
    if !o.executed.is_empty() {
        eprintln!("ran: {}", names(&o.executed));
    }
    if !o.skipped.is_empty() {
        eprintln!("up to date: {}", names(&o.skipped));
    }
}

fn print_report(p: &Pipeline, format: Format) -> Result<()> {
    let report = p.read_report()?;
    let text = match format {
        Format::Markdown => report.render_table(),
        Format::Latex => report.render_latex(),
        Format::Csv => report.render_csv(),
        Format::Json => std::fs::read_to_string(p.path(REPORT_JSON))?,
    };
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let stage = match &cli.command {
        Command::Prepare => Stage::Prepare,
        Command::Tokenize => Stage::Tokenize,
        Command::Train => Stage::Train,
        Command::SelectGood => Stage::SelectGood,
        Command::DeriveBad => Stage::DeriveBad,
        Command::Generate => Stage::Generate,
        Command::MixTrain => Stage::MixTrain,
        Command::Eval => Stage::Eval,
        Command::Report { .. } | Command::Pipeline { .. } => Stage::Report,
        Command::Config => {
            print!("{}", resolve_config(c)?.to_toml()?);
            return Ok(());
        }
        Command::MakeCorpus { out, words, seed } => {
            let docs = desk_corpus::generate(*seed, *words);
            write_jsonl(out, &docs).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} documents to {}", docs.len(), out.display());
            return Ok(());
        }
    };
    let p = pipeline(c)?;
    let outcome = p.run_until(stage)?;
    summarize(&outcome);
    if let Command::Report { format } | Command::Pipeline { format } = cli.command {
        print_report(&p, format)?;
    } else {
        let m = p.read_manifest(stage)?.context("stage manifest missing")?;
        println!("{}", serde_json::to_string_pretty(&m.info)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
