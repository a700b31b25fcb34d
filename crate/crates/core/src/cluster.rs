//! Sentiment-augmented role clustering with learnable centers.
//!
//! Comment rows arrive sample-major: row `b·T + j` is comment `j` of sample
//! `b`, with `T` comment slots per sample. Padded slots carry a `false` mask
//! and contribute nothing to the aggregated role features.

use thiserror::Error;

use crate::params::{ClusterParams, ProjectionParams};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("{what} has {found} rows, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("at least two clusters are required, got {0}")]
    TooFewClusters(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ClusterError>;

/// Similarities, assignments and the normalized operands they came from.
#[derive(Debug, Clone, Copy)]
pub struct SoftAssignment<'t, T: Scalar> {
    /// `n × d_p` row-normalized features `X̃`.
    pub features: Var<'t, T>,
    /// `K × d_p` row-normalized centers `M̃`.
    pub centers: Var<'t, T>,
    /// `n × K` cosine similarities `S = X̃ M̃ᵀ`.
    pub similarity: Var<'t, T>,
    /// `n × K` row-stochastic `Q = softmax(S τ)`.
    pub assignment: Var<'t, T>,
    /// `1 × 1` temperature `τ`.
    pub temperature: Var<'t, T>,
}

fn column<T: Scalar>(values: &[T]) -> Tensor<T> {
    Tensor::from_vec(values.len(), 1, values.to_vec()).expect("column length")
}

pub(crate) fn mask_column<T: Scalar>(mask: &[bool]) -> Tensor<T> {
    let v: Vec<T> = mask
        .iter()
        .map(|&m| if m { T::one() } else { T::zero() })
        .collect();
    column(&v)
}

/// Appends the sentiment scalar of each comment as a last column.
pub fn augment_with_sentiment<'t, T: Scalar>(
    comments: Var<'t, T>,
    sentiment: &[T],
) -> Result<Var<'t, T>> {
    let rows = comments.shape()[0];
    if sentiment.len() != rows {
        return Err(ClusterError::Length {
            what: "sentiment",
            expected: rows,
            found: sentiment.len(),
        });
    }
    let tape = comments.tape();
    let e = tape.constant(column(sentiment));
    Ok(tape.concat_cols(&[comments, e])?)
}

/// `X = V W + b`, no activation.
pub fn project<'t, T: Scalar>(
    augmented: Var<'t, T>,
    params: &ProjectionParams<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    Ok(augmented.matmul(params.weight)?.add(params.bias)?)
}

/// Normalizes features and centers, then `Q = softmax(τ · X̃ M̃ᵀ)`.
pub fn soft_assign<'t, T: Scalar>(
    features: Var<'t, T>,
    centers: Var<'t, T>,
    temperature: Var<'t, T>,
) -> Result<SoftAssignment<'t, T>> {
    let tau = temperature.value().item();
    if !(tau > T::zero()) {
        return Err(ClusterError::Temperature(tau.as_f64()));
    }
    let k = centers.shape()[0];
    if k < 2 {
        return Err(ClusterError::TooFewClusters(k));
    }
    let x = features.l2_normalize_rows()?;
    let m = centers.l2_normalize_rows()?;
    let similarity = x.matmul(m.transpose())?;
    let assignment = similarity.mul(temperature)?.softmax_rows()?;
    Ok(SoftAssignment {
        features: x,
        centers: m,
        similarity,
        assignment,
        temperature,
    })
}

/// Soft assignment with `τ = exp(ρ)` taken from the stored parameters.
pub fn soft_assign_params<'t, T: Scalar>(
    features: Var<'t, T>,
    params: &ClusterParams<Var<'t, T>>,
) -> Result<SoftAssignment<'t, T>> {
    soft_assign(features, params.centers, params.log_temperature.exp())
}

/// Per-sample `C_K = Q_bᵀ X̃_b` with padded rows of `Q` zeroed, each
/// flattened row-major into one `1 × K·d_p` row of the result.
pub fn aggregate_roles<'t, T: Scalar>(
    assign: &SoftAssignment<'t, T>,
    mask: &[bool],
    slots: usize,
) -> Result<Var<'t, T>> {
    let rows = assign.assignment.shape()[0];
    if mask.len() != rows || slots == 0 || rows % slots != 0 {
        return Err(ClusterError::Length {
            what: "comment mask",
            expected: rows,
            found: mask.len(),
        });
    }
    let tape = assign.assignment.tape();
    let q = assign
        .assignment
        .mul(tape.constant(mask_column(mask)))?;
    let [_, k] = q.shape();
    let d_p = assign.features.shape()[1];
    let per_sample = (0..rows / slots)
        .map(|b| {
            let qb = q.slice_rows(b * slots, slots)?;
            let xb = assign.features.slice_rows(b * slots, slots)?;
            qb.transpose().matmul(xb)?.reshape(1, k * d_p)
        })
        .collect::<std::result::Result<Vec<_>, TensorError>>()?;
    Ok(tape.concat_rows(&per_sample)?)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_assignments<T: Scalar>(q: &Tensor<T>) -> Vec<usize> {
    (0..q.rows())
        .map(|r| {
            let row = q.row_slice(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// `−Σ q_jk s_jk / n` over real comments; zero when none are real.
pub fn intra_loss<'t, T: Scalar>(assign: &SoftAssignment<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
    let rows = assign.assignment.shape()[0];
    if mask.len() != rows {
        return Err(ClusterError::Length {
            what: "comment mask",
            expected: rows,
            found: mask.len(),
        });
    }
    let tape = assign.assignment.tape();
    let real = mask.iter().filter(|&&m| m).count();
    if real == 0 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let weighted = assign
        .assignment
        .mul(assign.similarity)?
        .mul(tape.constant(mask_column(mask)))?;
    Ok(weighted.sum().scale(-T::one() / T::of_f64(real as f64)))
}

/// Mean off-diagonal cosine between normalized centers.
pub fn inter_loss<'t, T: Scalar>(normalized_centers: Var<'t, T>) -> Result<Var<'t, T>> {
    let k = normalized_centers.shape()[0];
    if k < 2 {
        return Err(ClusterError::TooFewClusters(k));
    }
    let tape = normalized_centers.tape();
    let gram = normalized_centers.matmul(normalized_centers.transpose())?;
    let mut off = Tensor::full(k, k, T::one());
    for i in 0..k {
        off.set(i, i, T::zero());
    }
    let pairs = (k * (k - 1)) as f64;
    Ok(gram
        .mul(tape.constant(off))?
        .sum()
        .scale(T::one() / T::of_f64(pairs)))
}

/// `K × d_p` centers drawn uniformly on the unit sphere.
pub fn init_centers<T: Scalar, R: rand::Rng + ?Sized>(k: usize, d_p: usize, rng: &mut R) -> Tensor<T> {
    use rand_distr::{Distribution, StandardNormal};
    let mut m = Tensor::zeros(k, d_p);
    for r in 0..k {
        let row: Vec<f64> = (0..d_p).map(|_| StandardNormal.sample(rng)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for (c, v) in row.iter().enumerate() {
            m.set(r, c, T::of_f64(v / norm));
        }
    }
    m
}

/// Convenience for callers holding a bare `Tape` and a fixed temperature.
pub fn constant_temperature<T: Scalar>(tape: &Tape<T>, tau: f64) -> Var<'_, T> {
    tape.constant(Tensor::scalar(T::of_f64(tau)))
}
