//! BiGRU → self-attention → mean-pool text encoder.
//!
//! Sequences are processed as a batch in time-major row order (see
//! [`SeqLayout`]); a batch of one sequence is the plain `L×d` case.

use thiserror::Error;

use crate::data::PaddedSeqs;
use crate::params::{AttentionParams, EncoderParams, GruDirection, GruParams};
use crate::tensor::{Scalar, SeqLayout, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("embedding width {found} does not match configured input width {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("sequence {0} has no unmasked position")]
    FullyMasked(usize),
    #[error("mask covers {mask} positions, layout has {rows}")]
    MaskLength { mask: usize, rows: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, EncoderError>;

/// Output of one encoder pass over a batch of sequences.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput<'t, T: Scalar> {
    /// `seqs × 2d_h` masked means of `per_position`.
    pub pooled: Var<'t, T>,
    /// `(seqs·len) × 2d_h` attended states `u_i`, time-major.
    pub per_position: Var<'t, T>,
}

fn check_mask(layout: SeqLayout, mask: &[bool]) -> Result<()> {
    if mask.len() != layout.rows() {
        return Err(EncoderError::MaskLength {
            mask: mask.len(),
            rows: layout.rows(),
        });
    }
    Ok(())
}

/// One GRU scan over every sequence of the batch.
///
/// `z = σ(x W_z + h U_z + b_z)`, `r = σ(x W_r + h U_r + b_r)`,
/// `n = tanh(x W_n + (r ⊙ h) U_n + b_n)`, `h' = z ⊙ h + (1 − z) ⊙ n`.
/// At padded positions the previous state is carried through unchanged.
fn gru_scan<'t, T: Scalar>(
    tape: &'t Tape<T>,
    inputs: Var<'t, T>,
    layout: SeqLayout,
    mask: &[bool],
    p: &GruDirection<Var<'t, T>>,
    reverse: bool,
) -> Result<Var<'t, T>> {
    let s = layout.seqs;
    let d_h = p.u_z.shape()[0];
    let xz = inputs.matmul(p.w_z)?.add(p.b_z)?;
    let xr = inputs.matmul(p.w_r)?.add(p.b_r)?;
    let xn = inputs.matmul(p.w_n)?.add(p.b_n)?;

    let mut h = tape.constant(Tensor::zeros(s, d_h));
    let mut states: Vec<Option<Var<'t, T>>> = vec![None; layout.len];
    let steps: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..layout.len).rev())
    } else {
        Box::new(0..layout.len)
    };
    for t in steps {
        let rows = t * s;
        let z = xz.slice_rows(rows, s)?.add(h.matmul(p.u_z)?)?.sigmoid();
        let r = xr.slice_rows(rows, s)?.add(h.matmul(p.u_r)?)?.sigmoid();
        let n = xn
            .slice_rows(rows, s)?
            .add(r.mul(h)?.matmul(p.u_n)?)?
            .tanh();
        let candidate = n.add(z.mul(h.sub(n)?)?)?;
        let step_mask: Vec<T> = mask[rows..rows + s]
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        h = candidate.blend_rows(h, &step_mask)?;
        states[t] = Some(h);
    }
    let states: Vec<Var<'t, T>> = states.into_iter().map(|h| h.expect("every step")).collect();
    Ok(tape.concat_rows(&states)?)
}

/// Bidirectional GRU over `inputs` (`(seqs·len) × d_in`, time-major).
/// Returns `(seqs·len) × 2d_h` states `[h→_i, h←_i]`; both directions start
/// from zero.
pub fn bigru_forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    inputs: Var<'t, T>,
    layout: SeqLayout,
    mask: &[bool],
    params: &GruParams<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    check_mask(layout, mask)?;
    let expected = params.forward.w_z.shape()[0];
    let found = inputs.shape()[1];
    if found != expected {
        return Err(EncoderError::InputWidth { expected, found });
    }
    if inputs.shape()[0] != layout.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "bigru_forward",
            left: inputs.shape(),
            right: [layout.rows(), found],
        }
        .into());
    }
    let fwd = gru_scan(tape, inputs, layout, mask, &params.forward, false)?;
    let bwd = gru_scan(tape, inputs, layout, mask, &params.backward, true)?;
    Ok(tape.concat_cols(&[fwd, bwd])?)
}

/// `u_i = Σ_j A_ij h_j + h_i` with `A = softmax(q_i·k_j / √d_k)` over the
/// unmasked positions of each sequence. Every sequence needs at least one
/// unmasked position.
pub fn self_attention<'t, T: Scalar>(
    states: Var<'t, T>,
    layout: SeqLayout,
    mask: &[bool],
    params: &AttentionParams<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    check_mask(layout, mask)?;
    if let Some(s) = (0..layout.seqs).find(|&s| (0..layout.len).all(|t| !mask[layout.row(s, t)])) {
        return Err(EncoderError::FullyMasked(s));
    }
    let q = states.matmul(params.w_q)?;
    let k = states.matmul(params.w_k)?;
    let d_k = q.shape()[1];
    let scale = T::one() / T::of_f64(d_k as f64).sqrt();
    let attended = q.seq_attention(k, states, layout, mask, scale)?;
    Ok(attended.add(states)?)
}

/// Mean over unmasked rows of each sequence; all-padding sequences give 0.
pub fn mean_pool<'t, T: Scalar>(
    per_position: Var<'t, T>,
    layout: SeqLayout,
    mask: &[bool],
) -> Result<Var<'t, T>> {
    check_mask(layout, mask)?;
    Ok(per_position.seq_mean(layout, mask)?)
}

/// Time-major token ids and mask for a padded batch.
pub fn time_major(seqs: &PaddedSeqs) -> (SeqLayout, Vec<Option<usize>>, Vec<bool>) {
    let layout = SeqLayout::new(seqs.seqs, seqs.len);
    let mut ids = vec![None; layout.rows()];
    let mut mask = vec![false; layout.rows()];
    for s in 0..seqs.seqs {
        for t in 0..seqs.len {
            let r = layout.row(s, t);
            if seqs.is_real(s, t) {
                ids[r] = Some(seqs.token(s, t));
                mask[r] = true;
            }
        }
    }
    (layout, ids, mask)
}

/// `MeanPool(SelfAttn(BiGRU(E[tokens])))` for every sequence in `seqs`.
pub fn encode<'t, T: Scalar>(
    tape: &'t Tape<T>,
    embedding: Var<'t, T>,
    seqs: &PaddedSeqs,
    params: &EncoderParams<Var<'t, T>>,
) -> Result<EncoderOutput<'t, T>> {
    let (layout, ids, mask) = time_major(seqs);
    let inputs = embedding.gather_rows(&ids)?;
    let states = bigru_forward(tape, inputs, layout, &mask, &params.gru)?;
    let per_position = self_attention(states, layout, &mask, &params.attention)?;
    let pooled = mean_pool(per_position, layout, &mask)?;
    Ok(EncoderOutput {
        pooled,
        per_position,
    })
}

/// Encodes the real comments of a batch and scatters them into
/// `slots.len() × 2d_h`; padded slots are zero rows.
pub fn encode_comments<'t, T: Scalar>(
    tape: &'t Tape<T>,
    embedding: Var<'t, T>,
    comments: &PaddedSeqs,
    slot_mask: &[bool],
    params: &EncoderParams<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let real: Vec<usize> = (0..comments.seqs).filter(|&i| slot_mask[i]).collect();
    let width = 2 * params.gru.forward.u_z.shape()[0];
    if real.is_empty() {
        return Ok(tape.constant(Tensor::zeros(comments.seqs, width)));
    }
    let len = real
        .iter()
        .map(|&i| comments.real_len(i))
        .max()
        .unwrap_or(1)
        .max(1);
    let mut tokens = vec![0; real.len() * len];
    let mut mask = vec![false; real.len() * len];
    for (k, &i) in real.iter().enumerate() {
        for t in 0..comments.len.min(len) {
            if comments.is_real(i, t) {
                tokens[k * len + t] = comments.token(i, t);
                mask[k * len + t] = true;
            }
        }
    }
    let compact = PaddedSeqs {
        seqs: real.len(),
        len,
        tokens,
        mask,
    };
    let pooled = encode(tape, embedding, &compact, params)?.pooled;
    let mut slot_to_row = vec![None; comments.seqs];
    for (k, &i) in real.iter().enumerate() {
        slot_to_row[i] = Some(k);
    }
    Ok(pooled.gather_rows(&slot_to_row)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::EncoderParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop GRU step, independent of the tape.
    fn oracle_step(p: &GruDirection<Tensor<f64>>, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d_h = h.len();
        let lin = |w: &Tensor<f64>, u: &Tensor<f64>, b: &Tensor<f64>, hh: &[f64], j: usize| {
            let mut acc = b.get(0, j);
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w.get(i, j);
            }
            for (i, &hi) in hh.iter().enumerate() {
                acc += hi * u.get(i, j);
            }
            acc
        };
        let z: Vec<f64> = (0..d_h).map(|j| sigmoid(lin(&p.w_z, &p.u_z, &p.b_z, h, j))).collect();
        let r: Vec<f64> = (0..d_h).map(|j| sigmoid(lin(&p.w_r, &p.u_r, &p.b_r, h, j))).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = (0..d_h).map(|j| lin(&p.w_n, &p.u_n, &p.b_n, &rh, j).tanh()).collect();
        (0..d_h).map(|j| z[j] * h[j] + (1.0 - z[j]) * n[j]).collect()
    }

    fn random_params(d_in: usize, d_h: usize, seed: u64) -> EncoderParams<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::init(d_in, d_h, 2 * d_h, &mut rng)
    }

    #[test]
    fn zero_params_give_zero_states() {
        let tape = Tape::<f64>::new();
        let p = EncoderParams::<Tensor<f64>>::zeros(3, 2, 4).bind_on(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::uniform(4, 3, 1.0, &mut rng));
        let layout = SeqLayout::new(1, 4);
        let mask = vec![true; 4];
        let h = bigru_forward(&tape, x, layout, &mask, &p.gru).unwrap();
        assert!(h.value().data().iter().all(|&v| v == 0.0));
        let u = self_attention(h, layout, &mask, &p.attention).unwrap();
        let pooled = mean_pool(u, layout, &mask).unwrap();
        assert!(pooled.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bigru_matches_scalar_recurrence() {
        let (d_in, d_h, l) = (3, 2, 3);
        let stored = random_params(d_in, d_h, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::uniform(l, d_in, 1.0, &mut rng);

        let tape = Tape::<f64>::new();
        let p = stored.bind_on(&tape);
        let xv = tape.constant(x.clone());
        let h = bigru_forward(&tape, xv, SeqLayout::new(1, l), &[true; 3], &p.gru).unwrap();
        let h = h.value().clone();

        let mut fwd = vec![vec![0.0; d_h]; l];
        let mut state = vec![0.0; d_h];
        for t in 0..l {
            state = oracle_step(&stored.gru.forward, x.row_slice(t), &state);
            fwd[t] = state.clone();
        }
        let mut bwd = vec![vec![0.0; d_h]; l];
        let mut state = vec![0.0; d_h];
        for t in (0..l).rev() {
            state = oracle_step(&stored.gru.backward, x.row_slice(t), &state);
            bwd[t] = state.clone();
        }
        for t in 0..l {
            for j in 0..d_h {
                assert!((h.get(t, j) - fwd[t][j]).abs() < 1e-12);
                assert!((h.get(t, d_h + j) - bwd[t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_sees_only_first_token() {
        let stored = random_params(3, 2, 5);
        let x = Tensor::<f64>::from_f64(1, 3, &[0.2, -0.4, 0.9]).unwrap();
        let tape = Tape::<f64>::new();
        let p = stored.bind_on(&tape);
        let xv = tape.constant(x.clone());
        let h = bigru_forward(&tape, xv, SeqLayout::new(1, 1), &[true], &p.gru).unwrap();
        let f = oracle_step(&stored.gru.forward, x.row_slice(0), &[0.0, 0.0]);
        let b = oracle_step(&stored.gru.backward, x.row_slice(0), &[0.0, 0.0]);
        let expect: Vec<f64> = f.into_iter().chain(b).collect();
        assert!(h
            .value()
            .data()
            .iter()
            .zip(&expect)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn padding_does_not_change_pooled_output() {
        let stored = random_params(3, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(2, 3, 1.0, &mut rng);
        let run = |pad: usize| {
            let tape = Tape::<f64>::new();
            let p = stored.bind_on(&tape);
            let mut data = x.data().to_vec();
            data.extend(std::iter::repeat_n(0.5, 3 * pad));
            let xv = tape.constant(Tensor::from_vec(2 + pad, 3, data).unwrap());
            let layout = SeqLayout::new(1, 2 + pad);
            let mut mask = vec![true, true];
            mask.extend(std::iter::repeat_n(false, pad));
            let h = bigru_forward(&tape, xv, layout, &mask, &p.gru).unwrap();
            let u = self_attention(h, layout, &mask, &p.attention).unwrap();
            let v = mean_pool(u, layout, &mask).unwrap().value().clone();
            v
        };
        let a = run(0);
        let b = run(3);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn zero_projection_attention_is_uniform_plus_residual() {
        let tape = Tape::<f64>::new();
        let h = Tensor::<f64>::from_f64(3, 2, &[1., 2., 3., 4., 5., 9.]).unwrap();
        let hv = tape.constant(h.clone());
        let att = AttentionParams {
            w_q: tape.constant(Tensor::zeros(2, 4)),
            w_k: tape.constant(Tensor::zeros(2, 4)),
        };
        let u = self_attention(hv, SeqLayout::new(1, 3), &[true; 3], &att).unwrap();
        let mean = [3.0, 5.0];
        for i in 0..3 {
            for j in 0..2 {
                assert!((u.value().get(i, j) - (mean[j] + h.get(i, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_position_attention_doubles() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = Tensor::<f64>::from_f64(1, 2, &[0.3, -1.2]).unwrap();
        let att = AttentionParams {
            w_q: tape.constant(Tensor::uniform(2, 4, 1.0, &mut rng)),
            w_k: tape.constant(Tensor::uniform(2, 4, 1.0, &mut rng)),
        };
        let u = self_attention(tape.constant(h), SeqLayout::new(1, 1), &[true], &att).unwrap();
        assert_eq!(u.value().data(), &[0.6, -2.4]);
    }

    #[test]
    fn attention_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = Tensor::<f64>::uniform(2, 4, 1.0, &mut rng);
        let wq = Tensor::<f64>::uniform(4, 4, 1.0, &mut rng);
        let wk = Tensor::<f64>::uniform(4, 4, 1.0, &mut rng);
        let tape = Tape::<f64>::new();
        let att = AttentionParams {
            w_q: tape.constant(wq.clone()),
            w_k: tape.constant(wk.clone()),
        };
        let u = self_attention(tape.constant(h.clone()), SeqLayout::new(1, 2), &[true, true], &att)
            .unwrap();

        let q = h.matmul(&wq).unwrap();
        let k = h.matmul(&wk).unwrap();
        for i in 0..2 {
            let logits: Vec<f64> = (0..2)
                .map(|j| (0..4).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..4 {
                let expect: f64 = (0..2)
                    .map(|j| logits[j].exp() / z * h.get(j, c))
                    .sum::<f64>()
                    + h.get(i, c);
                assert!((u.value().get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fully_masked_attention_rejected() {
        let tape = Tape::<f64>::new();
        let att = AttentionParams {
            w_q: tape.constant(Tensor::zeros(2, 2)),
            w_k: tape.constant(Tensor::zeros(2, 2)),
        };
        let h = tape.constant(Tensor::zeros(2, 2));
        assert_eq!(
            self_attention(h, SeqLayout::new(1, 2), &[false, false], &att).unwrap_err(),
            EncoderError::FullyMasked(0)
        );
    }

    #[test]
    fn mean_pool_cases() {
        let tape = Tape::<f64>::new();
        let u = tape.constant(Tensor::from_f64(2, 2, &[1., 3., 3., 5.]).unwrap());
        let v = mean_pool(u, SeqLayout::new(1, 2), &[true, true]).unwrap();
        assert_eq!(v.value().data(), &[2., 4.]);
        let u = tape.constant(Tensor::from_f64(2, 2, &[1., -2., -1., 2.]).unwrap());
        let v = mean_pool(u, SeqLayout::new(1, 2), &[true, true]).unwrap();
        assert_eq!(v.value().data(), &[0., 0.]);
        let u = tape.constant(Tensor::from_f64(2, 2, &[7., 7., 7., 7.]).unwrap());
        let v = mean_pool(u, SeqLayout::new(1, 2), &[true, true]).unwrap();
        assert_eq!(v.value().data(), &[7., 7.]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let tape = Tape::<f64>::new();
        let p = EncoderParams::<Tensor<f64>>::zeros(3, 2, 4).bind_on(&tape);
        let x = tape.constant(Tensor::zeros(2, 5));
        assert_eq!(
            bigru_forward(&tape, x, SeqLayout::new(1, 2), &[true, true], &p.gru).unwrap_err(),
            EncoderError::InputWidth {
                expected: 3,
                found: 5
            }
        );
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::tensor::grad_check_many;
        let stored = random_params(3, 2, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let embedding = Tensor::<f64>::uniform(5, 3, 1.0, &mut rng);
        let weights = Tensor::<f64>::uniform(2, 4, 1.0, &mut rng);
        let seqs = PaddedSeqs {
            seqs: 2,
            len: 3,
            tokens: vec![2, 3, 4, 1, 2, 0],
            mask: vec![true, true, true, true, true, false],
        };
        let mut points = vec![embedding];
        stored.walk("", &mut |_, t| points.push(t.clone()));
        let err = grad_check_many(
            |tape, vars| {
                let mut next = 1;
                let p = stored.map(&mut |_| {
                    next += 1;
                    vars[next - 1]
                });
                let out = encode(tape, vars[0], &seqs, &p).map_err(|e| match e {
                    EncoderError::Tensor(t) => t,
                    other => TensorError::InvalidArgument(other.to_string()),
                })?;
                Ok(out.pooled.mul(tape.constant(weights.clone()))?.sum())
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "relative gradient error {err}");
    }

    #[test]
    fn comment_order_only_permutes_rows() {
        let stored = random_params(3, 2, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let embedding = Tensor::<f64>::uniform(6, 3, 1.0, &mut rng);
        let run = |tokens: Vec<usize>, mask: Vec<bool>, slots: Vec<bool>| {
            let tape = Tape::<f64>::new();
            let p = stored.bind_on(&tape);
            let e = tape.constant(embedding.clone());
            let seqs = PaddedSeqs {
                seqs: 3,
                len: 2,
                tokens,
                mask,
            };
            let out = encode_comments(&tape, e, &seqs, &slots, &p).unwrap();
            let v = out.value().clone();
            v
        };
        let a = run(
            vec![2, 3, 4, 0, 0, 0],
            vec![true, true, true, false, false, false],
            vec![true, true, false],
        );
        let b = run(
            vec![4, 0, 2, 3, 0, 0],
            vec![true, false, true, true, false, false],
            vec![true, true, false],
        );
        assert!(a.row_slice(0).iter().zip(b.row_slice(1)).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(a.row_slice(1).iter().zip(b.row_slice(0)).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(a.row_slice(2).iter().all(|&x| x == 0.0));
    }
}
