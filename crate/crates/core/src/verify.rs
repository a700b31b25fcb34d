//! Finite-difference verification of every differentiable piece, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{encode_sample, make_batches, SeqCaps, Vocabulary};
use crate::encoder::encode;
use crate::model::{forward, init_params, LossWeights, ModelConfig, Variant};
use crate::params::EncoderParams;
use crate::synthetic::{bundled_corpus, bundled_lexicon};
use crate::tensor::{grad_check_many, SeqLayout, Tape, Tensor, TensorError, Var};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Random points drawn per primitive.
pub const POINTS: usize = 5;
const EPS: f64 = 1e-6;

type TResult<T> = std::result::Result<T, TensorError>;
type Builder = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> TResult<Var<'t, f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

/// Fixed, shape-dependent weights so reductions have non-uniform gradients.
fn reduce<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>) -> TResult<Var<'t, f64>> {
    let [r, c] = out.shape();
    let w: Vec<f64> = (0..r * c).map(|i| (1.0 + i as f64).sin()).collect();
    out.mul(tape.constant(Tensor::from_vec(r, c, w)?))
        .map(Var::sum)
}

struct Primitive {
    name: &'static str,
    shapes: Vec<[usize; 2]>,
    positive: bool,
    build: Builder,
}

fn prim<F>(name: &'static str, shapes: &[[usize; 2]], f: F) -> Primitive
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> TResult<Var<'t, f64>> + 'static,
{
    Primitive {
        name,
        shapes: shapes.to_vec(),
        positive: false,
        build: Box::new(f),
    }
}

fn primitives() -> Vec<Primitive> {
    let layout = SeqLayout::new(2, 3);
    let seq_mask = [true, true, true, true, true, false];
    let drop_mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
    vec![
        prim("matmul", &[[3, 4], [4, 2]], |_, v| v[0].matmul(v[1])),
        prim("add", &[[3, 4], [3, 4]], |_, v| v[0].add(v[1])),
        prim("sub", &[[3, 4], [3, 4]], |_, v| v[0].sub(v[1])),
        prim("mul", &[[3, 4], [3, 4]], |_, v| v[0].mul(v[1])),
        prim("mul_broadcast", &[[3, 4], [1, 1]], |_, v| v[0].mul(v[1])),
        prim("scale", &[[3, 4]], |_, v| Ok(v[0].scale(0.7))),
        prim("add_scalar", &[[3, 4]], |_, v| Ok(v[0].add_scalar(0.3))),
        prim("neg", &[[3, 4]], |_, v| Ok(v[0].neg())),
        prim("sigmoid", &[[3, 4]], |_, v| Ok(v[0].sigmoid())),
        prim("tanh", &[[3, 4]], |_, v| Ok(v[0].tanh())),
        prim("relu", &[[3, 4]], |_, v| Ok(v[0].relu())),
        prim("exp", &[[3, 4]], |_, v| Ok(v[0].exp())),
        Primitive {
            positive: true,
            ..prim("ln", &[[3, 4]], |_, v| Ok(v[0].ln()))
        },
        prim("softmax_rows", &[[3, 4]], |_, v| v[0].softmax_rows()),
        prim("l2_normalize_rows", &[[3, 4]], |_, v| v[0].l2_normalize_rows()),
        prim("mean_rows", &[[3, 4]], |_, v| Ok(v[0].mean_rows())),
        prim("sum", &[[3, 4]], |_, v| Ok(v[0].sum())),
        prim("transpose", &[[3, 4]], |_, v| Ok(v[0].transpose())),
        prim("dropout_frozen_mask", &[[3, 4]], move |_, v| {
            v[0].dropout_with_mask(drop_mask.clone())
        }),
        prim("gather_rows", &[[4, 3]], |_, v| {
            v[0].gather_rows(&[Some(2), None, Some(0), Some(2)])
        }),
        prim("concat_cols", &[[3, 2], [3, 4]], |t, v| t.concat_cols(&v[..2])),
        prim("concat_rows", &[[2, 3], [4, 3]], |t, v| t.concat_rows(&v[..2])),
        prim("slice_rows", &[[4, 3]], |_, v| v[0].slice_rows(1, 2)),
        prim("slice_cols", &[[3, 4]], |_, v| v[0].slice_cols(1, 2)),
        prim("reshape", &[[3, 4]], |_, v| v[0].reshape(2, 6)),
        prim("blend_rows", &[[3, 4], [3, 4]], |_, v| {
            v[0].blend_rows(v[1], &[1.0, 0.0, 0.3])
        }),
        prim("seq_attention", &[[6, 4], [6, 4], [6, 3]], move |_, v| {
            v[0].seq_attention(v[1], v[2], layout, &seq_mask, 0.5)
        }),
        prim("seq_mean", &[[6, 4]], move |_, v| v[0].seq_mean(layout, &seq_mask)),
    ]
}

fn random_point(shape: [usize; 2], positive: bool, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::uniform(shape[0], shape[1], 1.0, rng);
    if positive {
        t.data_mut().iter_mut().for_each(|x| *x += 1.5);
    }
    t
}

/// Every tape primitive at [`POINTS`] random points.
pub fn check_primitives(seed: u64) -> TResult<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitives()
        .into_iter()
        .map(|p| {
            let mut worst = 0.0f64;
            for _ in 0..POINTS {
                let points: Vec<_> = p
                    .shapes
                    .iter()
                    .map(|&s| random_point(s, p.positive, &mut rng))
                    .collect();
                let err = grad_check_many(
                    |tape, vars| reduce(tape, (p.build)(tape, vars)?),
                    &points,
                    EPS,
                )?;
                worst = worst.max(err);
            }
            Ok(GradCheck {
                name: p.name.to_string(),
                max_error: worst,
            })
        })
        .collect()
}

fn to_tensor_error(e: impl std::fmt::Display) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

/// BiGRU plus attention encoder over a padded two-sequence batch, w.r.t.
/// the embedding table and every encoder weight.
pub fn check_encoder(seed: u64) -> TResult<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stored = EncoderParams::<Tensor<f64>>::init(3, 2, 4, &mut rng);
    let embedding = Tensor::<f64>::uniform(5, 3, 1.0, &mut rng);
    let seqs = crate::data::PaddedSeqs {
        seqs: 2,
        len: 3,
        tokens: vec![2, 3, 4, 1, 2, 0],
        mask: vec![true, true, true, true, true, false],
    };
    let mut points = vec![embedding];
    stored.walk("", &mut |_, t| points.push(t.clone()));
    let max_error = grad_check_many(
        |tape, vars| {
            let mut next = 0;
            let p = stored.map(&mut |_| {
                next += 1;
                vars[next]
            });
            let out = encode(tape, vars[0], &seqs, &p).map_err(to_tensor_error)?;
            reduce(tape, out.pooled)
        },
        &points,
        EPS,
    )?;
    Ok(GradCheck {
        name: "encoder".into(),
        max_error,
    })
}

/// Reduced widths used for the end-to-end check; finite differences over
/// the full-size model would take hours.
pub fn micro_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        news_hidden: 3,
        comment_hidden: 2,
        projection_dim: 3,
        clusters: 3,
        classifier_hidden: 5,
        num_classes: 2,
        dropout: 0.5,
        variant,
    }
}

/// Total training loss (classification, clustering and L2 terms) on the
/// first two bundled samples, w.r.t. every model parameter. Dropout is off.
pub fn check_full_loss(variant: Variant, seed: u64) -> TResult<GradCheck> {
    let (_, corpus) = bundled_corpus();
    let pair = &corpus[..2];
    let config = micro_config(variant);
    let vocab = Vocabulary::build(pair, config.embedding_dim);
    let caps = SeqCaps {
        news_len: 5,
        comments: 3,
        comment_len: 4,
    };
    let lexicon = bundled_lexicon();
    let samples: Vec<_> = pair
        .iter()
        .map(|s| encode_sample(s, &vocab, &lexicon, &caps))
        .collect();
    let batch = make_batches(&samples, 2, &caps).remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = Tensor::<f64>::uniform(vocab.len(), config.embedding_dim, 0.5, &mut rng);
    let mut stored = init_params(&config, &table, &mut rng).map_err(to_tensor_error)?;
    // Move the temperature off its initial value so its gradient is generic.
    stored.clustering.log_temperature.data_mut()[0] += rng.random_range(-0.5..0.5);
    let weights = LossWeights {
        alpha: 0.05,
        weight_decay: 1e-3,
    };
    let mut points = Vec::new();
    stored.walk("", &mut |_, t| points.push(t.clone()));
    let max_error = grad_check_many(
        |tape, vars| {
            let mut next = 0;
            let p = stored.map(&mut |_| {
                next += 1;
                vars[next - 1]
            });
            let out = forward(tape, &p, &config, &batch, weights, None::<&mut ChaCha8Rng>)
                .map_err(to_tensor_error)?;
            Ok(out.loss)
        },
        &points,
        EPS,
    )?;
    Ok(GradCheck {
        name: format!("full_loss[{variant}]"),
        max_error,
    })
}

/// Primitives, encoder and the full loss of every variant.
pub fn gradient_suite(seed: u64) -> TResult<Vec<GradCheck>> {
    let mut out = check_primitives(seed)?;
    out.push(check_encoder(seed.wrapping_add(1))?);
    for v in Variant::ALL {
        out.push(check_full_loss(v, seed.wrapping_add(2))?);
    }
    Ok(out)
}
