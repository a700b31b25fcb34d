//! Python bindings: training, evaluation, cluster reports and the
//! clustering/metric primitives.
//!
//! Structured results (configs, metrics, histories, reports) cross the
//! boundary as JSON and come out as plain dicts and lists.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};

use rolecluster::cluster::{constant_temperature, inter_loss, intra_loss, soft_assign};
use rolecluster::data::{self, LabelMap, NewsSample, Split};
use rolecluster::head::{compute_metrics, MetricReport, Task};
use rolecluster::report::{self, ClusterReport};
use rolecluster::sentiment::{load_lexicon, SentimentLexicon, SentimentScorer};
use rolecluster::synthetic;
use rolecluster::tensor::{Precision, Tape, Tensor};
use rolecluster::train::{self, Evaluation, LoadedModel, RunData, TrainConfig, TrainError, Trainer};
use rolecluster::verify;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Config(_) | TrainError::VocabMismatch { .. } | TrainError::EmptySplit(_) => {
            value_err(e)
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn existing(path: &str) -> PyResult<PathBuf> {
    let p = PathBuf::from(path);
    if p.is_file() {
        Ok(p)
    } else {
        Err(PyFileNotFoundError::new_err(path.to_string()))
    }
}

fn parse_split(name: &str) -> PyResult<Split> {
    name.parse().map_err(value_err)
}

/// Corpus (bundled when `None`) and lexicon (bundled when `None`).
fn inputs(
    corpus: Option<&str>,
    lexicon: Option<&str>,
) -> PyResult<(LabelMap, Vec<NewsSample>, SentimentLexicon)> {
    let (labels, samples) = match corpus {
        Some(p) => data::load_corpus(existing(p)?).map_err(value_err)?,
        None => synthetic::bundled_corpus(),
    };
    let lex = match lexicon {
        Some(p) => load_lexicon(existing(p)?, 0.05, -0.05).map_err(value_err)?.0,
        None => synthetic::bundled_lexicon(),
    };
    Ok((labels, samples, lex))
}

fn metrics_json(m: &MetricReport) -> Value {
    serde_json::to_value(m).expect("metrics serialize")
}

fn evaluation_json(e: &Evaluation, data: &RunData) -> Value {
    json!({
        "split": e.split.name(),
        "ids": e.members.iter().map(|&i| data.samples[i].id.clone()).collect::<Vec<_>>(),
        "labels": e.labels,
        "probs": (0..e.probs.rows()).map(|r| e.probs.row_slice(r).to_vec()).collect::<Vec<_>>(),
        "loss": e.loss,
        "metrics": metrics_json(&e.metrics),
    })
}

fn cluster_json(r: &ClusterReport) -> Value {
    json!({
        "classes": r.class_names,
        "counts": r.counts,
        "top_terms": r.top_terms,
    })
}

fn stopwords() -> std::collections::HashSet<String> {
    let mut s = synthetic::parse_stopwords(synthetic::STOPWORDS_EN);
    s.extend(synthetic::parse_stopwords(synthetic::STOPWORDS_ZH));
    s
}

enum AnyTrainer {
    F32(Trainer<f32>),
    F64(Trainer<f64>),
}

macro_rules! with_trainer {
    ($self:expr, $t:ident => $body:expr) => {
        match $self {
            AnyTrainer::F32($t) => $body,
            AnyTrainer::F64($t) => $body,
        }
    };
}

fn cluster_report_of(
    eval: &Evaluation,
    data: &RunData,
    clusters: usize,
    top_n: usize,
) -> Value {
    cluster_json(&report::cluster_report(eval, data, clusters, &stopwords(), top_n))
}

/// A training run over a corpus.
#[pyclass(name = "Trainer", module = "rolecluster_py")]
struct PyTrainer {
    inner: AnyTrainer,
}

#[pymethods]
impl PyTrainer {
    /// `config` is a (possibly partial) dict of training settings.
    #[new]
    #[pyo3(signature = (config=None, corpus=None, lexicon=None, embeddings=None))]
    fn new(
        config: Option<&Bound<'_, PyAny>>,
        corpus: Option<&str>,
        lexicon: Option<&str>,
        embeddings: Option<&str>,
    ) -> PyResult<Self> {
        let cfg: TrainConfig = match config {
            Some(c) => serde_json::from_value(from_py(c)?).map_err(value_err)?,
            None => TrainConfig::default(),
        };
        let (labels, samples, lex) = inputs(corpus, lexicon)?;
        let emb = embeddings.map(existing).transpose()?;
        let inner = match cfg.precision {
            Precision::F32 => AnyTrainer::F32(
                Trainer::new(cfg, &labels, &samples, &lex, emb.as_deref()).map_err(train_err)?,
            ),
            Precision::F64 => AnyTrainer::F64(
                Trainer::new(cfg, &labels, &samples, &lex, emb.as_deref()).map_err(train_err)?,
            ),
        };
        Ok(PyTrainer { inner })
    }

    /// Restores a checkpoint written by `save_checkpoint`.
    #[staticmethod]
    #[pyo3(signature = (path, corpus=None, lexicon=None))]
    fn resume(path: &str, corpus: Option<&str>, lexicon: Option<&str>) -> PyResult<Self> {
        let path = existing(path)?;
        let (labels, samples, lex) = inputs(corpus, lexicon)?;
        let bytes = rolecluster::checkpoint::read_file(&path).map_err(value_err)?;
        let inner = match rolecluster::checkpoint::peek_precision(&bytes).map_err(value_err)? {
            Precision::F32 => AnyTrainer::F32(
                Trainer::resume(&path, &labels, &samples, &lex).map_err(train_err)?,
            ),
            Precision::F64 => AnyTrainer::F64(
                Trainer::resume(&path, &labels, &samples, &lex).map_err(train_err)?,
            ),
        };
        Ok(PyTrainer { inner })
    }

    #[getter]
    fn epoch(&self) -> usize {
        with_trainer!(&self.inner, t => t.epoch())
    }

    #[getter]
    fn best_epoch(&self) -> Option<usize> {
        with_trainer!(&self.inner, t => t.best().map(|b| b.epoch))
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = with_trainer!(&self.inner, t => serde_json::to_value(t.config()));
        to_py(py, &v.map_err(value_err)?)
    }

    /// One epoch; returns its history record.
    fn train_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rec = with_trainer!(&mut self.inner, t => t.train_epoch()).map_err(train_err)?;
        to_py(py, &serde_json::to_value(rec).map_err(value_err)?)
    }

    /// Trains until the configured number of epochs.
    fn fit(&mut self) -> PyResult<()> {
        with_trainer!(&mut self.inner, t => t.fit()).map_err(train_err)
    }

    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = with_trainer!(&self.inner, t => serde_json::to_value(t.history()));
        to_py(py, &v.map_err(value_err)?)
    }

    /// Metrics of the current (or, with `best=True`, best-validation)
    /// parameters on a split: "train", "validation" or "test".
    #[pyo3(signature = (split="test", best=false))]
    fn evaluate<'py>(&self, py: Python<'py>, split: &str, best: bool) -> PyResult<Bound<'py, PyAny>> {
        let which = parse_split(split)?;
        let v = with_trainer!(&self.inner, t => {
            let e = if best { t.evaluate_best(which) } else { t.evaluate(which) };
            e.map(|e| evaluation_json(&e, t.data()))
        })
        .map_err(train_err)?;
        to_py(py, &v)
    }

    /// Hard-assignment counts per (cluster, class) and top terms per cluster
    /// for the best parameters.
    #[pyo3(signature = (split="test", top_terms=20))]
    fn cluster_report<'py>(
        &self,
        py: Python<'py>,
        split: &str,
        top_terms: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let which = parse_split(split)?;
        let v = match &self.inner {
            AnyTrainer::F32(t) => t.evaluate_best(which).map(|e| {
                cluster_report_of(&e, t.data(), t.config().model.clusters, top_terms)
            }),
            AnyTrainer::F64(t) => t.evaluate_best(which).map(|e| {
                cluster_report_of(&e, t.data(), t.config().model.clusters, top_terms)
            }),
        }
        .map_err(train_err)?;
        to_py(py, &v)
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        with_trainer!(&self.inner, t => t.save_checkpoint(Path::new(path))).map_err(train_err)
    }

    fn save_best(&self, path: &str) -> PyResult<()> {
        with_trainer!(&self.inner, t => t.save_best(Path::new(path))).map_err(train_err)
    }

    fn __repr__(&self) -> String {
        with_trainer!(&self.inner, t => format!(
            "Trainer(variant={}, epoch={}/{}, seed={})",
            t.config().model.variant,
            t.epoch(),
            t.config().epochs,
            t.config().seed
        ))
    }
}

enum AnyModel {
    F32(LoadedModel<f32>),
    F64(LoadedModel<f64>),
}

/// Parameters loaded from a checkpoint, bound to a corpus.
#[pyclass(name = "Model", module = "rolecluster_py")]
struct PyModel {
    inner: AnyModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (path, corpus=None, lexicon=None))]
    fn load(path: &str, corpus: Option<&str>, lexicon: Option<&str>) -> PyResult<Self> {
        let path = existing(path)?;
        let (labels, samples, lex) = inputs(corpus, lexicon)?;
        let bytes = rolecluster::checkpoint::read_file(&path).map_err(value_err)?;
        let inner = match rolecluster::checkpoint::peek_precision(&bytes).map_err(value_err)? {
            Precision::F32 => AnyModel::F32(
                train::load_model(&path, &labels, &samples, &lex).map_err(train_err)?,
            ),
            Precision::F64 => AnyModel::F64(
                train::load_model(&path, &labels, &samples, &lex).map_err(train_err)?,
            ),
        };
        Ok(PyModel { inner })
    }

    #[pyo3(signature = (split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let which = parse_split(split)?;
        let v = match &self.inner {
            AnyModel::F32(m) => m.evaluate(which).map(|e| evaluation_json(&e, &m.data)),
            AnyModel::F64(m) => m.evaluate(which).map(|e| evaluation_json(&e, &m.data)),
        }
        .map_err(train_err)?;
        to_py(py, &v)
    }

    /// Per-comment soft assignments: dicts with sample_id, comment_idx and q.
    #[pyo3(signature = (split="test"))]
    fn assignments<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let which = parse_split(split)?;
        let (eval, data) = match &self.inner {
            AnyModel::F32(m) => (m.evaluate(which), &m.data),
            AnyModel::F64(m) => (m.evaluate(which), &m.data),
        };
        let eval = eval.map_err(train_err)?;
        let rows: Vec<Value> = eval
            .assignments
            .iter()
            .map(|a| json!({"sample_id": data.samples[a.sample].id, "comment_idx": a.comment, "q": a.q}))
            .collect();
        to_py(py, &Value::Array(rows))
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular matrix")));
    }
    let n = rows.len();
    Tensor::from_vec(n, cols, rows.concat()).map_err(value_err)
}

fn to_rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Cosine similarities S and soft assignments Q of features to centers.
#[pyfunction]
fn soft_assignment(
    features: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    temperature: f64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let a = soft_assign(
        tape.constant(matrix(features, "features")?),
        tape.constant(matrix(centers, "centers")?),
        constant_temperature(&tape, temperature),
    )
    .map_err(value_err)?;
    let s = to_rows(&a.similarity.value());
    let q = to_rows(&a.assignment.value());
    Ok((s, q))
}

/// Intra-cluster loss over all rows of `features`.
#[pyfunction]
fn intra_cluster_loss(features: Vec<Vec<f64>>, centers: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    let tape = Tape::new();
    let n = features.len();
    let a = soft_assign(
        tape.constant(matrix(features, "features")?),
        tape.constant(matrix(centers, "centers")?),
        constant_temperature(&tape, temperature),
    )
    .map_err(value_err)?;
    let loss = intra_loss(&a, &vec![true; n]).map_err(value_err)?;
    let v = loss.value().item();
    Ok(v)
}

/// Mean pairwise cosine between centers.
#[pyfunction]
fn inter_cluster_loss(centers: Vec<Vec<f64>>) -> PyResult<f64> {
    let tape = Tape::new();
    let m = tape
        .constant(matrix(centers, "centers")?)
        .l2_normalize_rows()
        .map_err(value_err)?;
    let loss = inter_loss(m).map_err(value_err)?;
    let v = loss.value().item();
    Ok(v)
}

/// Accuracy, precision, recall, F1, macro-F1 and RMSE. Binary tasks treat
/// `positive` as the fake class; more classes use macro averages.
#[pyfunction]
#[pyo3(signature = (probs, labels, positive=1, unverified=None))]
fn metrics<'py>(
    py: Python<'py>,
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    positive: usize,
    unverified: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let p = matrix(probs, "probs")?;
    let task = if p.cols() == 2 {
        Task::Binary { positive }
    } else {
        Task::Multiclass {
            classes: p.cols(),
            unverified,
        }
    };
    let m = compute_metrics(&p, &labels, &task).map_err(value_err)?;
    to_py(py, &metrics_json(&m))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    data::tokenize(text)
}

/// Ternary polarity (-1, 0 or 1) of a text under a lexicon (bundled when
/// `None`).
#[pyfunction]
#[pyo3(signature = (text, lexicon=None))]
fn sentiment(text: &str, lexicon: Option<&str>) -> PyResult<f64> {
    let lex = match lexicon {
        Some(p) => load_lexicon(existing(p)?, 0.05, -0.05).map_err(value_err)?.0,
        None => synthetic::bundled_lexicon(),
    };
    Ok(lex.score(&data::tokenize(text)).value())
}

/// Synthetic planted-signal corpus in the JSON-lines corpus format.
#[pyfunction]
#[pyo3(signature = (size=synthetic::BUNDLED_SIZE, seed=synthetic::BUNDLED_SEED))]
fn synthetic_corpus(size: usize, seed: u64) -> String {
    synthetic::synthetic_corpus_text(size, seed)
}

/// Finite-difference gradient checks: (name, max relative error) pairs.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn grad_check(seed: u64) -> PyResult<Vec<(String, f64)>> {
    let checks = verify::gradient_suite(seed).map_err(value_err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.max_error)).collect())
}

#[pymodule]
fn rolecluster_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(soft_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(intra_cluster_loss, m)?)?;
    m.add_function(wrap_pyfunction!(inter_cluster_loss, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(sentiment, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add("GRAD_TOLERANCE", verify::TOLERANCE)?;
    Ok(())
}
