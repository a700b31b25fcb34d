use std::collections::BTreeSet;

use rolecluster::data::{tokenize, NewsSample, Split};
use rolecluster::model::ModelConfig;
use rolecluster::report::epoch_table;
use rolecluster::synthetic::{bundled_corpus, bundled_lexicon, synthetic_corpus};
use rolecluster::tensor::Precision;
use rolecluster::train::{load_model, TrainConfig, TrainError, Trainer};

fn small(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            embedding_dim: 16,
            news_hidden: 8,
            comment_hidden: 8,
            projection_dim: 8,
            classifier_hidden: 16,
            ..ModelConfig::default()
        },
        epochs,
        seed,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    }
}

fn trained(cfg: TrainConfig) -> Trainer<f32> {
    let (labels, corpus) = bundled_corpus();
    let mut t = Trainer::<f32>::new(cfg, &labels, &corpus, &bundled_lexicon(), None).unwrap();
    t.fit().unwrap();
    t
}

#[test]
fn zero_epochs_only_evaluates() {
    let t = trained(small(1, 0));
    assert_eq!(t.epoch(), 0);
    assert_eq!(t.history().len(), 1);
    assert_eq!(t.history()[0].step_loss, None);
    assert_eq!(t.best().unwrap().epoch, 0);
}

#[test]
fn same_seed_same_history_different_seed_differs() {
    let a = epoch_table(trained(small(3, 2)).history());
    let b = epoch_table(trained(small(3, 2)).history());
    let c = epoch_table(trained(small(4, 2)).history());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn training_loss_falls_for_nearly_every_seed() {
    let falls = (0..10)
        .filter(|&seed| {
            let t = trained(small(seed, 20));
            let h = t.history();
            h[20].train.loss < h[0].train.loss
        })
        .count();
    assert!(falls >= 9, "loss fell for only {falls}/10 seeds");
}

#[test]
fn splits_partition_and_assignments_cover_real_comments() {
    let t = trained(small(5, 1));
    let data = t.data();
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for s in [Split::Train, Split::Validation, Split::Test] {
        let e = t.evaluate(s).unwrap();
        total += e.members.len();
        seen.extend(e.members.iter().copied());
        let comments: usize = e.members.iter().map(|&i| data.samples[i].comment_tokens.len()).sum();
        assert_eq!(e.assignments.len(), comments);
        for a in &e.assignments {
            assert!((a.q.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        assert_eq!(e.probs.rows(), e.members.len());
    }
    assert_eq!(total, data.samples.len());
    assert_eq!(seen.len(), data.samples.len());
}

#[test]
fn vocabulary_is_exactly_the_training_tokens() {
    let (_, corpus) = bundled_corpus();
    let t = trained(small(6, 0));
    let mut brute = BTreeSet::new();
    for &i in t.data().indices(Split::Train) {
        let s: &NewsSample = &corpus[i];
        brute.extend(tokenize(&s.text));
        for c in &s.comments {
            brute.extend(tokenize(c));
        }
    }
    let words: BTreeSet<String> = t.data().vocab.words().iter().cloned().collect();
    assert_eq!(words, brute);
    assert_eq!(t.data().vocab.len(), brute.len() + 2);
}

#[test]
fn best_checkpoint_reloads_with_identical_metrics() {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let t = trained(small(8, 3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    t.save_best(&path).unwrap();
    let loaded = load_model::<f32>(&path, &labels, &corpus, &lex).unwrap();
    for s in [Split::Validation, Split::Test] {
        let a = t.evaluate_best(s).unwrap();
        let b = loaded.evaluate(s).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.probs, b.probs);
    }
}

#[test]
fn resume_rejects_a_different_corpus() {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let t = trained(small(9, 1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    t.save_checkpoint(&path).unwrap();
    let (_, other) = synthetic_corpus(corpus.len(), 77);
    let err = Trainer::<f32>::resume(&path, &labels, &other, &lex).err().unwrap();
    assert!(matches!(err, TrainError::VocabMismatch { .. }), "{err}");
    assert!(load_model::<f32>(&path, &labels, &other, &lex).is_err());
    assert!(Trainer::<f32>::resume(&path, &labels, &corpus, &lex).is_ok());
}

#[test]
fn precision_must_match_the_trainer() {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    let cfg = TrainConfig {
        precision: Precision::F64,
        ..small(1, 1)
    };
    assert!(matches!(
        Trainer::<f32>::new(cfg.clone(), &labels, &corpus, &lex, None),
        Err(TrainError::Config(_))
    ));
    let mut t = Trainer::<f64>::new(cfg, &labels, &corpus, &lex, None).unwrap();
    t.fit().unwrap();
    assert!(t.history()[1].train.loss.is_finite());
}

#[test]
fn partial_config_files_fill_in_defaults() {
    let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "model": {"clusters": 5}}"#).unwrap();
    assert_eq!(cfg.epochs, 3);
    assert_eq!(cfg.model.clusters, 5);
    assert_eq!(cfg.model.projection_dim, 256);
    assert_eq!(cfg.batch_size, 8);
    let round: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn invalid_settings_are_rejected() {
    let (labels, corpus) = bundled_corpus();
    let lex = bundled_lexicon();
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..small(1, 1)
        },
        TrainConfig {
            learning_rate: -1.0,
            ..small(1, 1)
        },
        TrainConfig {
            split_ratios: [0.5, 0.5, 0.5],
            ..small(1, 1)
        },
    ] {
        assert!(Trainer::<f32>::new(cfg, &labels, &corpus, &lex, None).is_err());
    }
}
