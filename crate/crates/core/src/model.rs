//! The full detector: dual encoders, role clustering and classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterError, SoftAssignment};
use crate::data::Batch;
use crate::encoder::{self, EncoderError};
use crate::head::{self, Dropout, HeadError};
use crate::params::{
    init_matrix, ClassifierParams, ClusterParams, EncoderParams, ModelParams, ProjectionParams,
};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Article features dropped from the fusion.
    NoNews,
    /// Role clustering replaced by the masked mean of projected comments.
    NoCluster,
    /// Every comment polarity fed as zero.
    NoSentiment,
    /// Clustering losses switched off (`α = 0`).
    ClsLossOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoNews,
        Variant::NoCluster,
        Variant::NoSentiment,
        Variant::ClsLossOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNews => "no_news",
            Variant::NoCluster => "no_cluster",
            Variant::NoSentiment => "no_sentiment",
            Variant::ClsLossOnly => "cls_loss_only",
        }
    }

    /// Clustering weight actually applied for a configured `alpha`.
    pub fn effective_alpha(self, alpha: f64) -> f64 {
        match self {
            Variant::ClsLossOnly | Variant::NoCluster => 0.0,
            _ => alpha,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!("unknown variant {s:?} (expected full, no_news, no_cluster, no_sentiment or cls_loss_only)")
            })
    }
}

/// Layer widths and structural switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub news_hidden: usize,
    pub comment_hidden: usize,
    pub projection_dim: usize,
    pub clusters: usize,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 300,
            news_hidden: 256,
            comment_hidden: 128,
            projection_dim: 256,
            clusters: 3,
            classifier_hidden: 256,
            num_classes: 2,
            dropout: 0.5,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("news_hidden", self.news_hidden),
            ("comment_hidden", self.comment_hidden),
            ("projection_dim", self.projection_dim),
            ("classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.clusters < 2 {
            return Err(ModelError::Config(format!(
                "clusters must be at least 2, got {}",
                self.clusters
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the fused vector fed to the classifier.
    pub fn fusion_dim(&self) -> usize {
        let news = match self.variant {
            Variant::NoNews => 0,
            _ => 2 * self.news_hidden,
        };
        let roles = match self.variant {
            Variant::NoCluster => self.projection_dim,
            _ => self.clusters * self.projection_dim,
        };
        news + roles
    }
}

/// Fresh parameters. `embedding` seeds both tables (each then trains on its
/// own); it must be `|V| × embedding_dim`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    config: &ModelConfig,
    embedding: &Tensor<T>,
    rng: &mut R,
) -> Result<ModelParams<Tensor<T>>> {
    config.validate()?;
    if embedding.cols() != config.embedding_dim {
        return Err(ModelError::Config(format!(
            "embedding table has width {}, config says {}",
            embedding.cols(),
            config.embedding_dim
        )));
    }
    let d_e = config.embedding_dim;
    let news_encoder = EncoderParams::init(d_e, config.news_hidden, 2 * config.news_hidden, rng);
    let comment_encoder =
        EncoderParams::init(d_e, config.comment_hidden, 2 * config.comment_hidden, rng);
    let aug = 2 * config.comment_hidden + 1;
    let projection = ProjectionParams {
        weight: init_matrix(aug, config.projection_dim, aug, rng),
        bias: init_matrix(1, config.projection_dim, aug, rng),
    };
    let clustering = ClusterParams {
        centers: cluster::init_centers(config.clusters, config.projection_dim, rng),
        log_temperature: Tensor::scalar(T::of_f64(10f64.ln())),
    };
    let f = config.fusion_dim();
    let h = config.classifier_hidden;
    let classifier = ClassifierParams {
        w1: init_matrix(f, h, f, rng),
        b1: init_matrix(1, h, f, rng),
        w2: init_matrix(h, config.num_classes, h, rng),
        b2: init_matrix(1, config.num_classes, h, rng),
    };
    Ok(ModelParams {
        news_embedding: embedding.clone(),
        comment_embedding: embedding.clone(),
        news_encoder,
        comment_encoder,
        projection,
        clustering,
        classifier,
    })
}

/// Loss weights applied by [`forward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub weight_decay: f64,
}

/// Everything a forward pass produces; values stay readable while the tape
/// lives.
pub struct ForwardPass<'t, T: Scalar> {
    /// `B × M` class probabilities.
    pub probs: Var<'t, T>,
    pub loss: Var<'t, T>,
    pub cls_loss: Var<'t, T>,
    /// Intra and inter clustering losses (absent for `no_cluster`).
    pub clustering: Option<(Var<'t, T>, Var<'t, T>)>,
    /// Soft assignment of every comment slot (absent for `no_cluster`).
    pub assignment: Option<SoftAssignment<'t, T>>,
}

/// Runs the detector on one batch. Dropout is active only when `rng` is
/// given (training mode).
pub fn forward<'t, T: Scalar, R: Rng + ?Sized>(
    tape: &'t Tape<T>,
    params: &ModelParams<Var<'t, T>>,
    config: &ModelConfig,
    batch: &Batch,
    weights: LossWeights,
    rng: Option<&mut R>,
) -> Result<ForwardPass<'t, T>> {
    let variant = config.variant;
    let news = match variant {
        Variant::NoNews => None,
        _ => Some(
            encoder::encode(tape, params.news_embedding, &batch.news, &params.news_encoder)?
                .pooled,
        ),
    };

    let comments = encoder::encode_comments(
        tape,
        params.comment_embedding,
        &batch.comments,
        &batch.comment_mask,
        &params.comment_encoder,
    )?;
    let sentiment: Vec<T> = match variant {
        Variant::NoSentiment => vec![T::zero(); batch.sentiment.len()],
        _ => batch.sentiment.iter().map(|&e| T::of_f64(e)).collect(),
    };
    let augmented = cluster::augment_with_sentiment(comments, &sentiment)?;
    let projected = cluster::project(augmented, &params.projection)?;

    let (roles, assignment, clustering) = match variant {
        Variant::NoCluster => (
            masked_sample_mean(tape, projected, &batch.comment_mask, batch.comment_slots)?,
            None,
            None,
        ),
        _ => {
            let a = cluster::soft_assign_params(projected, &params.clustering)?;
            let roles = cluster::aggregate_roles(&a, &batch.comment_mask, batch.comment_slots)?;
            let intra = cluster::intra_loss(&a, &batch.comment_mask)?;
            let inter = cluster::inter_loss(a.centers)?;
            (roles, Some(a), Some((intra, inter)))
        }
    };

    let fused = head::fuse(news, roles)?;
    let dropout = match rng {
        Some(rng) if config.dropout > 0.0 => Dropout::Sample {
            rate: config.dropout,
            rng,
        },
        _ => Dropout::Off,
    };
    let probs = head::classify(fused, &params.classifier, dropout)?;
    let mut cls_loss = head::classification_loss(probs, &batch.labels)?;
    if weights.weight_decay > 0.0 {
        if let Some(p) = head::l2_penalty(&params.vars()) {
            cls_loss = cls_loss.add(p.scale(T::of_f64(weights.weight_decay)))?;
        }
    }
    let alpha = variant.effective_alpha(weights.alpha);
    let loss = head::total_loss(cls_loss, clustering, alpha)?;
    Ok(ForwardPass {
        probs,
        loss,
        cls_loss,
        clustering,
        assignment,
    })
}

/// `B × d` masked mean of each sample's comment rows; zero rows for samples
/// without comments.
fn masked_sample_mean<'t, T: Scalar>(
    tape: &'t Tape<T>,
    rows: Var<'t, T>,
    mask: &[bool],
    slots: usize,
) -> Result<Var<'t, T>> {
    let n = rows.shape()[0];
    let b = n / slots.max(1);
    let mut pool = Tensor::zeros(b, n);
    for s in 0..b {
        let real = (0..slots).filter(|&j| mask[s * slots + j]).count();
        for j in 0..slots {
            if mask[s * slots + j] {
                pool.set(s, s * slots + j, T::one() / T::of_f64(real as f64));
            }
        }
    }
    Ok(tape.constant(pool).matmul(rows)?)
}
