//! Fusion, classifier, joint objective and evaluation metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelMap;
use crate::params::ClassifierParams;
use crate::tensor::{Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("label {label} is out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{what}: expected {expected}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cannot compute metrics on an empty evaluation set")]
    EmptyEvaluation,
    #[error("alpha must be non-negative, got {0}")]
    NegativeAlpha(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, HeadError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub weight_decay: f64,
    pub num_classes: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.05,
            weight_decay: 0.0,
            num_classes: 2,
        }
    }
}

/// `f = [v_A ; vec(C_K)]` row by row. Either part may be absent.
pub fn fuse<'t, T: Scalar>(news: Option<Var<'t, T>>, roles: Var<'t, T>) -> Result<Var<'t, T>> {
    match news {
        None => Ok(roles),
        Some(v) => {
            if v.shape()[0] != roles.shape()[0] {
                return Err(HeadError::Length {
                    what: "fusion batch rows",
                    expected: v.shape()[0],
                    found: roles.shape()[0],
                });
            }
            Ok(roles.tape().concat_cols(&[v, roles])?)
        }
    }
}

/// How the classifier's dropout layer behaves on this pass.
pub enum Dropout<'a, T, R: ?Sized> {
    Off,
    Sample { rate: f64, rng: &'a mut R },
    /// Pre-drawn inverted-dropout multipliers, one per hidden activation.
    Frozen(Vec<T>),
}

/// `softmax(W_2 · Dropout(ReLU(W_1 f + b_1)) + b_2)`, one row per sample.
pub fn classify<'t, T: Scalar, R: Rng + ?Sized>(
    fused: Var<'t, T>,
    params: &ClassifierParams<Var<'t, T>>,
    dropout: Dropout<'_, T, R>,
) -> Result<Var<'t, T>> {
    let hidden = fused.matmul(params.w1)?.add(params.b1)?.relu();
    let hidden = match dropout {
        Dropout::Off => hidden,
        Dropout::Sample { rate, rng } => hidden.dropout(rate, true, rng)?,
        Dropout::Frozen(mask) => hidden.dropout_with_mask(mask)?,
    };
    Ok(hidden.matmul(params.w2)?.add(params.b2)?.softmax_rows()?)
}

/// Mean negative log-likelihood of `labels`, log clamped at 1e-12.
pub fn classification_loss<'t, T: Scalar>(probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let [b, m] = probs.shape();
    if labels.len() != b {
        return Err(HeadError::Length {
            what: "labels",
            expected: b,
            found: labels.len(),
        });
    }
    let mut one_hot = Tensor::zeros(b, m);
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(HeadError::Label {
                label: y,
                classes: m,
            });
        }
        one_hot.set(i, y, T::one());
    }
    let picked = probs.ln().mul(probs.tape().constant(one_hot))?.sum();
    Ok(picked.scale(-T::one() / T::of_f64(b as f64)))
}

/// `Σ ‖θ‖²` over the given parameters.
pub fn l2_penalty<'t, T: Scalar>(params: &[Var<'t, T>]) -> Option<Var<'t, T>> {
    params
        .iter()
        .map(|p| p.mul(*p).expect("same shape").sum())
        .reduce(|a, b| a.add(b).expect("scalars"))
}

/// `L = L_cls + α (L_intra + L_inter)`; the clustering terms are skipped
/// entirely when absent or when `α = 0`.
pub fn total_loss<'t, T: Scalar>(
    cls: Var<'t, T>,
    clustering: Option<(Var<'t, T>, Var<'t, T>)>,
    alpha: f64,
) -> Result<Var<'t, T>> {
    if alpha < 0.0 {
        return Err(HeadError::NegativeAlpha(alpha));
    }
    match clustering {
        Some((intra, inter)) if alpha > 0.0 => {
            Ok(cls.add(intra.add(inter)?.scale(T::of_f64(alpha)))?)
        }
        _ => Ok(cls),
    }
}

/// Which summary the evaluation reports and selects on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Two classes; `positive` is the fake class.
    Binary { positive: usize },
    /// Three or more classes; `unverified` marks the class whose gold items
    /// are scored by the confidence-only RMSE rule.
    Multiclass {
        classes: usize,
        unverified: Option<usize>,
    },
}

impl Task {
    /// Binary tasks take "fake" (or "false") as positive, defaulting to 1;
    /// larger label sets look for an "unverified" class.
    pub fn from_labels(labels: &LabelMap) -> Task {
        let find = |names: &[&str]| {
            names
                .iter()
                .find_map(|n| labels.index_of(n))
        };
        if labels.len() == 2 {
            Task::Binary {
                positive: find(&["fake", "false"]).unwrap_or(1),
            }
        } else {
            Task::Multiclass {
                classes: labels.len(),
                unverified: find(&["unverified"]),
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Task::Binary { .. } => 2,
            Task::Multiclass { classes, .. } => *classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Positive-class precision for binary tasks, macro average otherwise.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub rmse: f64,
}

impl MetricReport {
    /// F1 for binary tasks, macro-F1 otherwise.
    pub fn selection_score(&self, task: &Task) -> f64 {
        match task {
            Task::Binary { .. } => self.f1,
            Task::Multiclass { .. } => self.macro_f1,
        }
    }
}

/// Confusion counts, `counts[gold][pred]`. Merging shards adds counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold][pred] += 1;
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `(precision, recall, f1)` of class `c`; empty ratios count as 0.
    pub fn class_scores(&self, c: usize) -> (f64, f64, f64) {
        let tp = self.counts[c][c] as f64;
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let actual: u64 = self.counts[c].iter().sum();
        let ratio = |n: f64, d: u64| if d == 0 { 0.0 } else { n / d as f64 };
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

/// Lowest index of the row maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Squared RMSE contribution of one item.
///
/// Gold items of a definite class score `1 − p(chosen)` when the argmax is
/// right and `p(chosen)` when wrong. Gold unverified items score 0 if the
/// model says unverified, else the confidence of the class it picked.
pub fn rmse_item_error(probs: &[f64], gold: usize, unverified: Option<usize>) -> f64 {
    let chosen = argmax(probs);
    let p = probs[chosen];
    if Some(gold) == unverified {
        if Some(chosen) == unverified {
            0.0
        } else {
            p
        }
    } else if chosen == gold {
        1.0 - p
    } else {
        p
    }
}

/// Metrics for `probs` (one row per item) against gold `labels`.
pub fn compute_metrics(probs: &Tensor<f64>, labels: &[usize], task: &Task) -> Result<MetricReport> {
    if labels.is_empty() {
        return Err(HeadError::EmptyEvaluation);
    }
    if probs.rows() != labels.len() {
        return Err(HeadError::Length {
            what: "probability rows",
            expected: labels.len(),
            found: probs.rows(),
        });
    }
    let m = task.num_classes();
    if probs.cols() != m {
        return Err(HeadError::Length {
            what: "probability columns",
            expected: m,
            found: probs.cols(),
        });
    }
    let unverified = match task {
        Task::Binary { .. } => None,
        Task::Multiclass { unverified, .. } => *unverified,
    };
    let mut confusion = Confusion::new(m);
    let mut sq = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(HeadError::Label {
                label: y,
                classes: m,
            });
        }
        let row = probs.row_slice(i);
        confusion.add(y, argmax(row));
        let e = rmse_item_error(row, y, unverified);
        sq += e * e;
    }
    let n = labels.len() as f64;
    let correct: u64 = (0..m).map(|c| confusion.counts[c][c]).sum();
    let per_class: Vec<_> = (0..m).map(|c| confusion.class_scores(c)).collect();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| per_class.iter().map(f).sum::<f64>() / m as f64;
    let macro_f1 = mean(|s| s.2);
    let (precision, recall, f1) = match task {
        Task::Binary { positive } => per_class[*positive],
        Task::Multiclass { .. } => (mean(|s| s.0), mean(|s| s.1), macro_f1),
    };
    Ok(MetricReport {
        accuracy: correct as f64 / n,
        precision,
        recall,
        f1,
        macro_f1,
        rmse: (sq / n).sqrt(),
    })
}
