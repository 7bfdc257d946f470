//! Python bindings: tokenizer, n-gram models, decoding, the bootstrap
//! statistics and the experiment pipeline.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use synthforge::decoder::{self, DecodingStrategy, StrategyKind};
use synthforge::evalstat::{self, SeMode};
use synthforge::lm::{perplexity, LanguageModel};
use synthforge::ngram::{train_ngram, NgramConfig};
use synthforge::pipeline::{ExperimentConfig, Pipeline as CorePipeline, Stage};
use synthforge::{desk_corpus, Error, TokenId};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Argument(_) | Error::Decode { .. } | Error::Toml(_) | Error::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Byte-pair tokenizer with an end-of-sequence token.
#[pyclass(module = "synthforge", frozen)]
struct Tokenizer {
    inner: Arc<synthforge::TokenizerModel>,
}

#[pymethods]
impl Tokenizer {
    #[staticmethod]
    fn train(py: Python<'_>, texts: Vec<String>, vocab_size: usize) -> PyResult<Self> {
        let model = py
            .detach(|| synthforge::TokenizerModel::train(texts.iter().map(String::as_str), vocab_size))
            .map_err(to_py)?;
        Ok(Tokenizer { inner: Arc::new(model) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Tokenizer { inner: Arc::new(synthforge::TokenizerModel::load(&path).map_err(to_py)?) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.inner.encode(text)
    }

    fn decode(&self, tokens: Vec<TokenId>) -> PyResult<String> {
        self.inner.decode(&tokens).map_err(to_py)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn eos(&self) -> TokenId {
        self.inner.eos()
    }

    fn __repr__(&self) -> String {
        format!("Tokenizer(vocab_size={})", self.inner.vocab_size())
    }
}

/// Interpolated add-k n-gram model.
#[pyclass(module = "synthforge", frozen)]
struct NgramModel {
    inner: Arc<synthforge::NgramModel>,
}

#[pymethods]
impl NgramModel {
    /// Train on a token stream and return the final model.
    #[staticmethod]
    #[pyo3(signature = (tokens, vocab_size, order = 4, add_k = 0.01))]
    fn train(py: Python<'_>, tokens: Vec<TokenId>, vocab_size: usize, order: usize, add_k: f64) -> PyResult<Self> {
        let cfg = NgramConfig { order, add_k, ..NgramConfig::default() };
        let len = tokens.len().max(1);
        let snaps = py.detach(|| train_ngram(&tokens, vocab_size, &cfg, len, "py")).map_err(to_py)?;
        let last = snaps.into_iter().last().expect("one snapshot");
        let model = last.downcast::<synthforge::NgramModel>().expect("n-gram backend").clone();
        Ok(NgramModel { inner: Arc::new(model) })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn next_probs(&self, context: Vec<TokenId>) -> Vec<f64> {
        self.inner.next_dist(&context).into_probs()
    }

    fn perplexity(&self, py: Python<'_>, tokens: Vec<TokenId>) -> PyResult<f64> {
        py.detach(|| perplexity(self.inner.as_ref(), &tokens)).map_err(to_py)
    }

    /// Sample a continuation of `prefix`; `amateur` is required for contrastive strategies.
    #[pyo3(signature = (strategy, prefix, max_new, seed, amateur = None, eos = None))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        py: Python<'_>,
        strategy: &Strategy,
        prefix: Vec<TokenId>,
        max_new: usize,
        seed: u64,
        amateur: Option<&NgramModel>,
        eos: Option<TokenId>,
    ) -> PyResult<Vec<TokenId>> {
        let bad = amateur.map(|a| a.inner.clone());
        py.detach(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let bad = bad.as_deref().map(|b| b as &dyn LanguageModel);
            decoder::generate(&strategy.inner, self.inner.as_ref(), bad, &prefix, max_new, eos, &mut rng)
        })
        .map_err(to_py)
    }
}

/// A decoding strategy, e.g. `Strategy("cd", alpha=0.1)`.
#[pyclass(module = "synthforge", frozen)]
struct Strategy {
    inner: DecodingStrategy,
}

#[pymethods]
impl Strategy {
    #[new]
    #[pyo3(signature = (kind, alpha = 0.1, lam = 1.0, k = None, p = None, ban_eos = false))]
    fn new(kind: &str, alpha: f64, lam: f64, k: Option<usize>, p: Option<f64>, ban_eos: bool) -> PyResult<Self> {
        let kind: StrategyKind = kind.parse().map_err(to_py)?;
        let inner = DecodingStrategy { kind, alpha, lambda: lam, k, p, ban_eos };
        inner.validate().map_err(to_py)?;
        Ok(Strategy { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    fn __repr__(&self) -> String {
        format!("Strategy({:?})", self.inner)
    }
}

/// An experiment directory driven by a TOML config.
#[pyclass(module = "synthforge", frozen)]
struct Pipeline {
    inner: CorePipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config = None, overrides = Vec::new(), dir = None, workers = 0))]
    fn new(config: Option<&str>, overrides: Vec<String>, dir: Option<PathBuf>, workers: usize) -> PyResult<Self> {
        let base = match config {
            Some(text) => ExperimentConfig::from_toml(text).map_err(to_py)?,
            None => ExperimentConfig::default(),
        };
        let cfg = base.with_overrides(&overrides).map_err(to_py)?;
        let inner = match dir {
            Some(d) => CorePipeline::at(cfg, d),
            None => CorePipeline::new(cfg),
        }
        .map_err(to_py)?;
        Ok(Pipeline { inner: inner.with_workers(workers) })
    }

    #[getter]
    fn dir(&self) -> PathBuf {
        self.inner.dir().to_path_buf()
    }

    /// Run up to `until` (default: every stage); returns (executed, skipped) stage names.
    #[pyo3(signature = (until = None))]
    fn run(&self, py: Python<'_>, until: Option<&str>) -> PyResult<(Vec<String>, Vec<String>)> {
        let last: Stage = until.unwrap_or("report").parse().map_err(to_py)?;
        let out = py.detach(|| self.inner.run_until(last)).map_err(to_py)?;
        let names = |v: Vec<Stage>| v.into_iter().map(|s| s.name().to_string()).collect();
        Ok((names(out.executed), names(out.skipped)))
    }

    fn report_json(&self) -> PyResult<String> {
        self.inner.read_report().and_then(|r| r.to_json()).map_err(to_py)
    }

    fn report_table(&self) -> PyResult<String> {
        Ok(self.inner.read_report().map_err(to_py)?.render_table())
    }
}

/// Mean of per-task relative changes, in percent.
#[pyfunction]
fn mu_delta_rel(deltas: Vec<f64>) -> PyResult<f64> {
    evalstat::mu_delta_rel(&deltas).map_err(to_py)
}

/// Paired comparison of two draw vectors: (delta_hat, ci_low, ci_high, significant, p_value).
#[pyfunction]
fn compare_draws(first: Vec<f64>, second: Vec<f64>) -> PyResult<(f64, f64, f64, bool, f64)> {
    let c = evalstat::compare_draws(&first, &second).map_err(to_py)?;
    Ok((c.delta_hat, c.ci_low, c.ci_high, c.significant, c.p_value))
}

/// (mean, se) of a draw vector; `se` is `"draw_sd_over_sqrt_b"` or `"draw_sd"`.
#[pyfunction]
#[pyo3(signature = (draws, se = "draw_sd_over_sqrt_b"))]
fn summarize(draws: Vec<f64>, se: &str) -> PyResult<(f64, f64)> {
    let mode = match se {
        "draw_sd_over_sqrt_b" => SeMode::DrawSdOverSqrtB,
        "draw_sd" => SeMode::DrawSd,
        other => return Err(PyValueError::new_err(format!("unknown se mode `{other}`"))),
    };
    let s = evalstat::summarize(&draws, mode).map_err(to_py)?;
    Ok((s.mean, s.se))
}

/// Built-in synthetic English documents as (domain, text) pairs.
#[pyfunction]
#[pyo3(signature = (seed, words = 100_000))]
fn desk_documents(seed: u64, words: usize) -> Vec<(String, String)> {
    desk_corpus::generate(seed, words).into_iter().map(|d| (d.domain, d.text)).collect()
}

#[pymodule]
#[pyo3(name = "synthforge")]
fn synthforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tokenizer>()?;
    m.add_class::<NgramModel>()?;
    m.add_class::<Strategy>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(mu_delta_rel, m)?)?;
    m.add_function(wrap_pyfunction!(compare_draws, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(desk_documents, m)?)?;
    Ok(())
}
