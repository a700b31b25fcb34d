//! Training loop, evaluation, checkpoint resume and parameter sweeps.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, Contents};
use crate::data::{
    encode_sample, load_embeddings, make_batches, split_with_rng, DataError, LabelMap, NewsSample,
    SeqCaps, Split, Splits, TokenizedSample, Vocabulary,
};
use crate::head::{compute_metrics, HeadError, MetricReport, Task};
use crate::model::{forward, init_params, LossWeights, ModelConfig, ModelError};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ModelParams;
use crate::sentiment::SentimentScorer;
use crate::tensor::{Precision, Scalar, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("vocabulary mismatch: checkpoint digest {expected}, corpus gives {found}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Everything that shapes a run. Missing fields in a config file fall back
/// to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub precision: Precision,
    pub split_ratios: [f64; 3],
    pub caps: SeqCaps,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            alpha: 0.05,
            weight_decay: 0.0,
            seed: 42,
            precision: Precision::F32,
            split_ratios: [0.7, 0.1, 0.2],
            caps: SeqCaps::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.caps.news_len == 0 || self.caps.comment_len == 0 {
            return bad("token caps must be positive".into());
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            weight_decay: self.weight_decay,
        }
    }
}

/// Tokenized corpus with its split and vocabulary.
#[derive(Debug, Clone)]
pub struct RunData {
    pub labels: LabelMap,
    pub task: Task,
    pub samples: Vec<TokenizedSample>,
    pub splits: Splits,
    pub vocab: Vocabulary,
}

impl RunData {
    pub fn indices(&self, which: Split) -> &[usize] {
        self.splits.get(which)
    }
}

/// Soft assignment of one real comment.
#[derive(Debug, Clone, PartialEq)]
pub struct CommentAssignment {
    pub sample: usize,
    pub comment: usize,
    pub q: Vec<f64>,
}

/// Model outputs over one split, in split order.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub split: Split,
    pub members: Vec<usize>,
    pub labels: Vec<usize>,
    /// `n × M` class probabilities.
    pub probs: Tensor<f64>,
    pub loss: f64,
    pub metrics: MetricReport,
    /// Empty for the `no_cluster` variant.
    pub assignments: Vec<CommentAssignment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub loss: f64,
    pub metrics: MetricReport,
}

impl From<&Evaluation> for SplitSummary {
    fn from(e: &Evaluation) -> Self {
        SplitSummary {
            loss: e.loss,
            metrics: e.metrics,
        }
    }
}

/// Per-epoch log line. Epoch 0 describes the freshly initialized model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss of the optimizer steps (training mode, with dropout).
    pub step_loss: Option<f64>,
    pub train: SplitSummary,
    pub validation: SplitSummary,
}

#[derive(Debug, Clone)]
pub struct Best<T: Scalar> {
    pub epoch: usize,
    pub score: f64,
    pub params: ModelParams<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Option<ChaCha8Rng> {
        if self.seed.len() != 64 {
            return None;
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).ok()?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

/// JSON header of a training checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub epoch: usize,
    pub adam_step: u64,
    rng: RngState,
    pub labels: Vec<String>,
    pub vocab: Vec<String>,
    pub vocab_digest: String,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Builds splits, vocabulary and embeddings in the run's RNG order:
/// splits, then the embedding table.
fn prepare_data<T: Scalar>(
    config: &TrainConfig,
    labels: &LabelMap,
    corpus: &[NewsSample],
    scorer: &dyn SentimentScorer,
    embeddings: Option<&Path>,
    rng: &mut ChaCha8Rng,
) -> Result<(RunData, Tensor<T>)> {
    let splits = split_with_rng(corpus.len(), config.split_ratios, rng)?;
    let train: Vec<NewsSample> = splits
        .get(Split::Train)
        .iter()
        .map(|&i| corpus[i].clone())
        .collect();
    let vocab = Vocabulary::build(&train, config.model.embedding_dim);
    let (table, stats) = load_embeddings::<T, _>(embeddings, &vocab, rng)?;
    if embeddings.is_some() {
        log::info!(
            "embeddings cover {} of {} tokens ({} duplicate lines)",
            stats.covered,
            vocab.len(),
            stats.duplicates
        );
    }
    let samples = corpus
        .iter()
        .map(|s| encode_sample(s, &vocab, scorer, &config.caps))
        .collect();
    let data = RunData {
        labels: labels.clone(),
        task: Task::from_labels(labels),
        samples,
        splits,
        vocab,
    };
    Ok((data, table))
}

pub struct Trainer<T: Scalar> {
    config: TrainConfig,
    data: RunData,
    params: ModelParams<Tensor<T>>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
    best: Option<Best<T>>,
}

impl<T: Scalar> Trainer<T> {
    /// Splits the corpus, builds the vocabulary, initializes parameters and
    /// evaluates the untrained model as epoch 0.
    pub fn new(
        config: TrainConfig,
        labels: &LabelMap,
        corpus: &[NewsSample],
        scorer: &dyn SentimentScorer,
        embeddings: Option<&Path>,
    ) -> Result<Self> {
        let config = Self::checked(config, labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (data, table) = prepare_data::<T>(&config, labels, corpus, scorer, embeddings, &mut rng)?;
        let params = init_params(&config.model, &table, &mut rng)?;
        let adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
        let mut trainer = Trainer {
            config,
            data,
            params,
            adam,
            rng,
            epoch: 0,
            history: Vec::new(),
            best: None,
        };
        trainer.finish_epoch(None)?;
        Ok(trainer)
    }

    fn checked(mut config: TrainConfig, labels: &LabelMap) -> Result<TrainConfig> {
        if config.precision != T::PRECISION {
            return Err(TrainError::Config(format!(
                "trainer built for {:?} but config asks for {:?}",
                T::PRECISION,
                config.precision
            )));
        }
        config.model.num_classes = labels.len();
        config.validate()?;
        Ok(config)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn data(&self) -> &RunData {
        &self.data
    }

    pub fn params(&self) -> &ModelParams<Tensor<T>> {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn best(&self) -> Option<&Best<T>> {
        self.best.as_ref()
    }

    /// Parameters of the best validation epoch (current ones before any).
    pub fn best_params(&self) -> &ModelParams<Tensor<T>> {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }

    /// Changes the epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    /// Trains until `config.epochs` epochs are done.
    pub fn fit(&mut self) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.train_epoch()?;
        }
        Ok(())
    }

    /// One pass over the shuffled training split, followed by evaluation on
    /// the training and validation splits.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let mut order = self.data.indices(Split::Train).to_vec();
        order.shuffle(&mut self.rng);
        let ordered: Vec<TokenizedSample> =
            order.iter().map(|&i| self.data.samples[i].clone()).collect();
        let batches = make_batches(&ordered, self.config.batch_size, &self.config.caps);
        let adam_cfg = self.config.adam();
        let weights = self.config.loss_weights();
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let tape = Tape::new();
            let bound = self.params.bind(&tape);
            let pass = forward(
                &tape,
                &bound,
                &self.config.model,
                batch,
                weights,
                Some(&mut self.rng),
            )?;
            let loss = pass.loss.value().item().as_f64();
            let grads = tape.backward(pass.loss)?;
            let grads: Vec<Tensor<T>> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
            let mut named = self.params.named_mut();
            let mut refs: Vec<&mut Tensor<T>> = named.iter_mut().map(|(_, t)| &mut **t).collect();
            self.adam.step(&adam_cfg, &mut refs, &grads)?;
            total += loss * batch.size() as f64;
            seen += batch.size();
        }
        self.epoch += 1;
        self.finish_epoch(Some(total / seen.max(1) as f64))
    }

    fn finish_epoch(&mut self, step_loss: Option<f64>) -> Result<EpochRecord> {
        let train = self.evaluate(Split::Train)?;
        let validation = self.evaluate(Split::Validation)?;
        let record = EpochRecord {
            epoch: self.epoch,
            step_loss,
            train: (&train).into(),
            validation: (&validation).into(),
        };
        let score = validation.metrics.selection_score(&self.data.task);
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(Best {
                epoch: self.epoch,
                score,
                params: self.params.clone(),
            });
        }
        log::info!(
            "epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} score {:.4}",
            self.epoch,
            record.train.loss,
            record.train.metrics.accuracy,
            record.validation.loss,
            score
        );
        self.history.push(record);
        Ok(record)
    }

    /// Evaluates the current parameters on `which`.
    pub fn evaluate(&self, which: Split) -> Result<Evaluation> {
        evaluate_params(&self.params, &self.config, &self.data, which)
    }

    /// Evaluates the best-validation parameters on `which`.
    pub fn evaluate_best(&self, which: Split) -> Result<Evaluation> {
        evaluate_params(self.best_params(), &self.config, &self.data, which)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            config: self.config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.step,
            rng: RngState::capture(&self.rng),
            labels: self.data.labels.names().to_vec(),
            vocab: self.data.vocab.words().to_vec(),
            vocab_digest: self.data.vocab.digest(),
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            best_score: self.best.as_ref().map(|b| b.score),
            history: self.history.clone(),
        }
    }

    /// Full training state: parameters, optimizer moments, best parameters,
    /// RNG position and history.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor<T>)> = Vec::new();
        let named = self.params.named();
        for (name, t) in &named {
            tensors.push((format!("param.{name}"), t));
        }
        for ((name, _), (m, v)) in named.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            tensors.push((format!("adam.m.{name}"), m));
            tensors.push((format!("adam.v.{name}"), v));
        }
        if let Some(best) = &self.best {
            for (name, t) in best.params.named() {
                tensors.push((format!("best.{name}"), t));
            }
        }
        checkpoint::save(path, &self.meta(), &tensors)?;
        Ok(())
    }

    /// Saves only the best parameters, loadable by [`load_model`].
    pub fn save_best(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, &Tensor<T>)> = self
            .best_params()
            .named()
            .into_iter()
            .map(|(n, t)| (format!("param.{n}"), t))
            .collect();
        let mut meta = self.meta();
        meta.epoch = self.best.as_ref().map_or(self.epoch, |b| b.epoch);
        meta.history.clear();
        checkpoint::save(path, &meta, &tensors)?;
        Ok(())
    }

    /// Restores a run saved by [`save_checkpoint`](Self::save_checkpoint).
    /// The corpus must be the one the run started from: splits are redrawn
    /// from the seed and the vocabulary digest must match.
    pub fn resume(
        path: &Path,
        corpus_labels: &LabelMap,
        corpus: &[NewsSample],
        scorer: &dyn SentimentScorer,
    ) -> Result<Self> {
        let contents: Contents<T, CheckpointMeta> = checkpoint::load(path)?;
        let meta = &contents.meta;
        let config = Self::checked(meta.config.clone(), corpus_labels)?;
        let data = rebuild_data(&config, meta, corpus_labels, corpus, scorer)?;
        let params = params_from(&contents, "param.", &config, data.vocab.len())?;
        let mut adam = AdamState::new(params.named().into_iter().map(|(_, t)| t));
        adam.step = meta.adam_step;
        for (i, (name, t)) in params.named().into_iter().enumerate() {
            adam.m[i] = contents.expect(&format!("adam.m.{name}"), t.shape())?.clone();
            adam.v[i] = contents.expect(&format!("adam.v.{name}"), t.shape())?.clone();
        }
        let best = match (meta.best_epoch, meta.best_score) {
            (Some(epoch), Some(score)) => Some(Best {
                epoch,
                score,
                params: params_from(&contents, "best.", &config, data.vocab.len())?,
            }),
            _ => None,
        };
        let rng = meta
            .rng
            .restore()
            .ok_or_else(|| TrainError::Config("corrupt RNG state in checkpoint".into()))?;
        Ok(Trainer {
            epoch: meta.epoch,
            history: meta.history.clone(),
            config,
            data,
            params,
            adam,
            rng,
            best,
        })
    }
}

/// Re-derives the run's data from the corpus and checks it against the
/// checkpoint's vocabulary.
fn rebuild_data(
    config: &TrainConfig,
    meta: &CheckpointMeta,
    labels: &LabelMap,
    corpus: &[NewsSample],
    scorer: &dyn SentimentScorer,
) -> Result<RunData> {
    if labels.names() != meta.labels.as_slice() {
        return Err(TrainError::Config(format!(
            "corpus labels {:?} differ from checkpoint labels {:?}",
            labels.names(),
            meta.labels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let splits = split_with_rng(corpus.len(), config.split_ratios, &mut rng)?;
    let vocab = Vocabulary::from_tokens(
        meta.vocab.iter().cloned(),
        config.model.embedding_dim,
    );
    if vocab.digest() != meta.vocab_digest {
        return Err(TrainError::VocabMismatch {
            expected: meta.vocab_digest.clone(),
            found: vocab.digest(),
        });
    }
    let train: Vec<NewsSample> = splits
        .get(Split::Train)
        .iter()
        .map(|&i| corpus[i].clone())
        .collect();
    let rebuilt = Vocabulary::build(&train, config.model.embedding_dim);
    if rebuilt.digest() != meta.vocab_digest {
        return Err(TrainError::VocabMismatch {
            expected: meta.vocab_digest.clone(),
            found: rebuilt.digest(),
        });
    }
    let samples = corpus
        .iter()
        .map(|s| encode_sample(s, &vocab, scorer, &config.caps))
        .collect();
    Ok(RunData {
        labels: labels.clone(),
        task: Task::from_labels(labels),
        samples,
        splits,
        vocab,
    })
}

/// Parameters stored under `prefix`, shape-checked against a fresh layout.
fn params_from<T: Scalar, M>(
    contents: &Contents<T, M>,
    prefix: &str,
    config: &TrainConfig,
    vocab_len: usize,
) -> Result<ModelParams<Tensor<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shell = Tensor::<T>::zeros(vocab_len, config.model.embedding_dim);
    let mut params = init_params(&config.model, &shell, &mut rng)?;
    for (name, t) in params.named_mut() {
        *t = contents.expect(&format!("{prefix}{name}"), t.shape())?.clone();
    }
    Ok(params)
}

/// A trained model with the data it needs for evaluation.
pub struct LoadedModel<T: Scalar> {
    pub meta: CheckpointMeta,
    pub data: RunData,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Scalar> LoadedModel<T> {
    pub fn evaluate(&self, which: Split) -> Result<Evaluation> {
        evaluate_params(&self.params, &self.meta.config, &self.data, which)
    }
}

/// Loads the parameters of a checkpoint (a `best` file or a full training
/// checkpoint) and rebuilds the data view of `corpus`.
pub fn load_model<T: Scalar>(
    path: &Path,
    labels: &LabelMap,
    corpus: &[NewsSample],
    scorer: &dyn SentimentScorer,
) -> Result<LoadedModel<T>> {
    let contents: Contents<T, CheckpointMeta> = checkpoint::load(path)?;
    let mut meta = contents.meta.clone();
    meta.config.model.num_classes = labels.len();
    let data = rebuild_data(&meta.config, &meta, labels, corpus, scorer)?;
    let params = params_from(&contents, "param.", &meta.config, data.vocab.len())?;
    Ok(LoadedModel { meta, data, params })
}

/// Runs `params` in evaluation mode over one split.
pub fn evaluate_params<T: Scalar>(
    params: &ModelParams<Tensor<T>>,
    config: &TrainConfig,
    data: &RunData,
    which: Split,
) -> Result<Evaluation> {
    let members = data.indices(which).to_vec();
    if members.is_empty() {
        return Err(TrainError::EmptySplit(which.name()));
    }
    let samples: Vec<TokenizedSample> = members.iter().map(|&i| data.samples[i].clone()).collect();
    let m = config.model.num_classes;
    let mut probs = Vec::with_capacity(members.len() * m);
    let mut labels = Vec::with_capacity(members.len());
    let mut assignments = Vec::new();
    let mut loss_sum = 0.0;
    for batch in make_batches(&samples, config.batch_size, &config.caps) {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let pass = forward::<T, ChaCha8Rng>(
            &tape,
            &bound,
            &config.model,
            &batch,
            config.loss_weights(),
            None,
        )?;
        loss_sum += pass.loss.value().item().as_f64() * batch.size() as f64;
        probs.extend(pass.probs.value().data().iter().map(|v| v.as_f64()));
        labels.extend_from_slice(&batch.labels);
        if let Some(a) = pass.assignment {
            let q = a.assignment.value();
            for (row, &real) in batch.comment_mask.iter().enumerate() {
                if real {
                    let b = row / batch.comment_slots;
                    assignments.push(CommentAssignment {
                        sample: members[batch.members[b]],
                        comment: row % batch.comment_slots,
                        q: q.row_slice(row).iter().map(|v| v.as_f64()).collect(),
                    });
                }
            }
        }
    }
    let n = members.len();
    let probs = Tensor::from_vec(n, m, probs)?;
    let metrics = compute_metrics(&probs, &labels, &data.task)?;
    Ok(Evaluation {
        split: which,
        members,
        labels,
        probs,
        loss: loss_sum / n as f64,
        metrics,
        assignments,
    })
}

/// Hyperparameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    K,
    Alpha,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Alpha => "alpha",
        }
    }

    /// The grid examined by default.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::K => vec![2.0, 3.0, 4.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            SweepParam::Alpha => vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::K => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(TrainError::Config(format!(
                        "k values must be integers of at least 2, got {value}"
                    )));
                }
                cfg.model.clusters = value as usize;
            }
            SweepParam::Alpha => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(TrainError::Config(format!(
                        "alpha values must be non-negative, got {value}"
                    )));
                }
                cfg.alpha = value;
            }
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "k" => Ok(SweepParam::K),
            "alpha" => Ok(SweepParam::Alpha),
            _ => Err(format!("unknown sweep parameter {s:?} (expected k or alpha)")),
        }
    }
}

/// One line of a sweep table: best-validation epoch and its test metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub best_epoch: usize,
    pub validation: MetricReport,
    pub test: MetricReport,
}

/// Trains once per value from the same seed. `after_run` sees each finished
/// trainer (for writing per-value artifacts).
pub fn sweep<T: Scalar>(
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    labels: &LabelMap,
    corpus: &[NewsSample],
    scorer: &dyn SentimentScorer,
    embeddings: Option<&Path>,
    mut after_run: impl FnMut(f64, &Trainer<T>) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(TrainError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (&value, cfg) in values.iter().zip(configs) {
        let (row, trainer) = sweep_run::<T>(cfg, value, labels, corpus, scorer, embeddings)?;
        rows.push(row);
        after_run(value, &trainer)?;
    }
    Ok(rows)
}

/// Trains one sweep point from an already adjusted config.
pub fn sweep_run<T: Scalar>(
    config: TrainConfig,
    value: f64,
    labels: &LabelMap,
    corpus: &[NewsSample],
    scorer: &dyn SentimentScorer,
    embeddings: Option<&Path>,
) -> Result<(SweepRow, Trainer<T>)> {
    let mut trainer = Trainer::<T>::new(config, labels, corpus, scorer, embeddings)?;
    trainer.fit()?;
    let best = trainer.best().expect("epoch 0 always sets a best model");
    let row = SweepRow {
        value,
        best_epoch: best.epoch,
        validation: trainer.evaluate_best(Split::Validation)?.metrics,
        test: trainer.evaluate_best(Split::Test)?.metrics,
    };
    Ok((row, trainer))
}
