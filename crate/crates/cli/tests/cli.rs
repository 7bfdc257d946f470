use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "corpus.builtin_words=20000",
    "--set",
    "tokenizer.vocab_size=400",
    "--set",
    "ngram.order=3",
    "--steps",
    "6",
    "--snapshot-every",
    "3",
    "--set",
    "training.batch_sequences=8",
    "--set",
    "training.seq_len=32",
    "--n-runs",
    "2",
    "--budget",
    "2000",
    "--set",
    "strategies=[{kind=\"no_contrast\"},{kind=\"cd\",amateur={kind=\"earlier_checkpoint\",step=3}}]",
    "--set",
    "eval.window=32",
    "--set",
    "eval.minimal_pairs=[{name=\"agreement\",builtin=40}]",
    "--resamples",
    "100",
];

fn forge(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .args(TINY)
        .env("FORGE_ROOT", root)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn forge")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "forge failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn stages_then_pipeline_reuse_the_same_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let train = forge(tmp.path(), &["train"]);
    let info: serde_json::Value = serde_json::from_str(&stdout(&train)).unwrap();
    assert_eq!(info["runs"].as_array().unwrap().len(), 2);
    let err = String::from_utf8_lossy(&train.stderr).to_string();
    assert!(err.contains("ran: prepare, tokenize, train"), "{err}");

    let full = forge(tmp.path(), &["pipeline"]);
    let table = stdout(&full);
    assert!(table.starts_with("| Name | μΔREL↑ | perplexity↓ | agreement↑ |"), "{table}");
    assert_eq!(table.lines().filter(|l| l.starts_with("| ")).count(), 4);
    let err = String::from_utf8_lossy(&full.stderr).to_string();
    assert!(err.contains("up to date: prepare, tokenize, train"), "{err}");

    let again = forge(tmp.path(), &["report", "--format", "csv"]);
    assert!(stdout(&again).starts_with("method,task,mean"));
    assert!(String::from_utf8_lossy(&again.stderr).contains("up to date: prepare, tokenize, train, select-good"));
}

#[test]
fn config_reflects_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let text = stdout(&forge(tmp.path(), &["config", "--ratio", "0.1", "--ratio", "0.5", "--master-seed", "9"]));
    assert!(text.contains("master_seed = 9"));
    assert!(text.contains("ratios = [0.1, 0.5]"));
    assert!(text.contains("steps = 6"));
}

#[test]
fn bad_input_fails_with_the_stage_name() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.txt");
    let out = forge(tmp.path(), &["prepare", "--real", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `prepare` failed"), "{err}");

    let out = forge(tmp.path(), &["generate", "--strategy", "missing"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no strategy named `missing`"));
}

#[test]
fn make_corpus_writes_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("desk.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["make-corpus", "--words", "3000", "--seed", "4", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["domain"].is_string() && first["text"].is_string());
}
