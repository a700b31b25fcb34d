use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rolecluster::cluster::{
    aggregate_roles, constant_temperature, hard_assignments, inter_loss, intra_loss, soft_assign,
};
use rolecluster::data::{
    encode_sample, make_batches, split_with_rng, tokenize, write_split_manifest, SeqCaps,
    Vocabulary,
};
use rolecluster::head::{compute_metrics, Task};
use rolecluster::sentiment::NeutralScorer;
use rolecluster::synthetic::synthetic_corpus;
use rolecluster::tensor::{SeqLayout, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(rows, cols, v).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in shaped()) {
        let tape = Tape::new();
        let p = tape.constant(x).softmax_rows().unwrap().value().clone();
        for r in 0..p.rows() {
            let row = p.row_slice(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 || p.cols() == 1 && v == 1.0));
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm(x in shaped()) {
        prop_assume!((0..x.rows()).all(|r| x.row_slice(r).iter().any(|v| v.abs() > 1e-3)));
        let tape = Tape::new();
        let n = tape.constant(x).l2_normalize_rows().unwrap().value().clone();
        for r in 0..n.rows() {
            let norm = n.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn fan_out_gradients_add(x in matrix(3, 4), w in matrix(4, 2)) {
        let grad = |left: bool, right: bool| {
            let tape = Tape::new();
            let v = tape.param(x.clone());
            let mut terms = Vec::new();
            if left {
                terms.push(v.matmul(tape.constant(w.clone())).unwrap().tanh().sum());
            }
            if right {
                terms.push(v.mul(v).unwrap().sigmoid().sum());
            }
            let loss = terms.iter().skip(1).fold(terms[0], |a, &b| a.add(b).unwrap());
            tape.backward(loss).unwrap().wrt(v)
        };
        let both = grad(true, true);
        let (a, b) = (grad(true, false), grad(false, true));
        for i in 0..both.len() {
            prop_assert!((both.data()[i] - a.data()[i] - b.data()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_weights_sum_to_one(seqs in 1usize..4, len in 1usize..5, seed in any::<u64>()) {
        let layout = SeqLayout::new(seqs, len);
        let rows = layout.rows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::<f64>::uniform(rows, 3, 2.0, &mut rng);
        let k = Tensor::<f64>::uniform(rows, 3, 2.0, &mut rng);
        // Real lengths 1..=len per sequence.
        let lens: Vec<usize> = (0..seqs).map(|s| 1 + (seed as usize >> s) % len).collect();
        let mask: Vec<bool> = (0..rows).map(|r| r / seqs < lens[r % seqs]).collect();
        let tape = Tape::new();
        // With identity values each output row is the attention distribution.
        let out = tape
            .constant(q)
            .seq_attention(tape.constant(k), tape.constant(Tensor::identity(rows)), layout, &mask, 0.5)
            .unwrap()
            .value()
            .clone();
        for r in 0..rows {
            let row = out.row_slice(r);
            let total: f64 = row.iter().sum();
            if mask[r] {
                prop_assert!((total - 1.0).abs() <= 1e-6);
                for (j, &w) in row.iter().enumerate() {
                    let same_seq = j % seqs == r % seqs;
                    prop_assert!(w == 0.0 || (same_seq && mask[j]));
                }
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }
    }

    #[test]
    fn splits_partition_and_repeat(n in 10usize..80, seed in any::<u64>()) {
        let ratios = [0.7, 0.1, 0.2];
        let a = split_with_rng(n, ratios, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = split_with_rng(n, ratios, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

        let (_, samples) = synthetic_corpus(n, 1);
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
        write_split_manifest(&pa, &samples, &a).unwrap();
        write_split_manifest(&pb, &samples, &b).unwrap();
        prop_assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    #[test]
    fn batch_tokens_map_back_to_source(n in 2usize..12, seed in any::<u64>(), batch in 1usize..5) {
        let (_, samples) = synthetic_corpus(n, seed);
        let vocab = Vocabulary::build(&samples, 4);
        let caps = SeqCaps { news_len: 8, comments: 3, comment_len: 5 };
        let encoded: Vec<_> = samples.iter().map(|s| encode_sample(s, &vocab, &NeutralScorer, &caps)).collect();
        for b in make_batches(&encoded, batch, &caps) {
            for (pos, &m) in b.members.iter().enumerate() {
                let news = tokenize(&samples[m].text);
                for t in 0..b.news.len {
                    if b.news.is_real(pos, t) {
                        prop_assert!(news.contains(&vocab.token(b.news.token(pos, t)).to_string()));
                    }
                }
                for slot in 0..b.comment_slots {
                    let seq = pos * b.comment_slots + slot;
                    if !b.comment_mask[seq] {
                        continue;
                    }
                    let words = tokenize(&samples[m].comments[slot]);
                    for t in 0..b.comments.len {
                        if b.comments.is_real(seq, t) {
                            prop_assert!(words.contains(&vocab.token(b.comments.token(seq, t)).to_string()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn role_features_ignore_comment_order(
        x in matrix(5, 3), m in matrix(3, 3), tau in 0.5f64..15.0, perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()
    ) {
        let mask = [true, true, false, true, true];
        let tape = Tape::new();
        let c = |rows: &[usize]| {
            let mut data = Vec::new();
            for &r in rows {
                data.extend_from_slice(x.row_slice(r));
            }
            let pm: Vec<bool> = rows.iter().map(|&r| mask[r]).collect();
            let a = soft_assign(
                tape.constant(Tensor::from_vec(5, 3, data).unwrap()),
                tape.constant(m.clone()),
                constant_temperature(&tape, tau),
            )
            .unwrap();
            aggregate_roles(&a, &pm, 5).unwrap().value().clone()
        };
        let base = c(&[0, 1, 2, 3, 4]);
        prop_assert!(base.max_abs_diff(&c(&perm)) <= 1e-9);
    }

    #[test]
    fn hard_assignment_survives_monotone_maps(s in matrix(4, 5)) {
        let mapped: Vec<f64> = s.data().iter().map(|v| (2.0 * v).exp() * 3.0 + v.powi(3)).collect();
        let t = Tensor::from_vec(4, 5, mapped).unwrap();
        prop_assert_eq!(hard_assignments(&s), hard_assignments(&t));
    }

    #[test]
    fn losses_stay_in_range(x in matrix(4, 3), m in matrix(3, 3), tau in 0.1f64..30.0) {
        prop_assume!((0..3).all(|r| m.row_slice(r).iter().any(|v| v.abs() > 1e-3)));
        prop_assume!((0..4).all(|r| x.row_slice(r).iter().any(|v| v.abs() > 1e-3)));
        let tape = Tape::new();
        let a = soft_assign(tape.constant(x), tape.constant(m), constant_temperature(&tape, tau)).unwrap();
        let intra = intra_loss(&a, &[true, false, true, true]).unwrap().value().item();
        let inter = inter_loss(a.centers).unwrap().value().item();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&intra));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&inter));
    }
}

/// Metrics computed with explicit loops over items and classes.
fn brute_force(probs: &[Vec<f64>], labels: &[usize], m: usize, task: &Task) -> [f64; 6] {
    let pred: Vec<usize> = probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for c in 0..m {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let n = labels.len() as f64;
    let acc = pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n;
    let mut prf = Vec::new();
    for c in 0..m {
        let tp = (0..labels.len()).filter(|&i| pred[i] == c && labels[i] == c).count() as f64;
        let pp = pred.iter().filter(|&&p| p == c).count() as f64;
        let ap = labels.iter().filter(|&&y| y == c).count() as f64;
        let p = if pp > 0.0 { tp / pp } else { 0.0 };
        let r = if ap > 0.0 { tp / ap } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        prf.push((p, r, f));
    }
    let macro_f1 = prf.iter().map(|s| s.2).sum::<f64>() / m as f64;
    let (p, r, f, unv) = match *task {
        Task::Binary { positive } => (prf[positive].0, prf[positive].1, prf[positive].2, None),
        Task::Multiclass { unverified, .. } => (
            prf.iter().map(|s| s.0).sum::<f64>() / m as f64,
            prf.iter().map(|s| s.1).sum::<f64>() / m as f64,
            macro_f1,
            unverified,
        ),
    };
    let mut sq = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let conf = probs[i][pred[i]];
        let e = match unv {
            Some(u) if y == u => {
                if pred[i] == u {
                    0.0
                } else {
                    conf
                }
            }
            _ if pred[i] == y => 1.0 - conf,
            _ => conf,
        };
        sq += e * e;
    }
    [acc, p, r, f, macro_f1, (sq / n).sqrt()]
}

#[test]
fn metrics_match_brute_force_on_100_random_sets() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=40);
        let task = if m == 2 {
            Task::Binary {
                positive: rng.random_range(0..2),
            }
        } else {
            Task::Multiclass {
                classes: m,
                unverified: if rng.random_bool(0.5) { Some(rng.random_range(0..m)) } else { None },
            }
        };
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // Coarse values so ties occur and exercise the tie rule.
                let raw: Vec<f64> = (0..m).map(|_| rng.random_range(1..5) as f64).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|v| v / z).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let t = Tensor::from_vec(n, m, probs.concat()).unwrap();
        let got = compute_metrics(&t, &labels, &task).unwrap();
        let want = brute_force(&probs, &labels, m, &task);
        let got = [got.accuracy, got.precision, got.recall, got.f1, got.macro_f1, got.rmse];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?} for {task:?}");
        }
    }
}
