//! History attention, argmax position selection and the decoder-input
//! combination schemes. These are the mechanism the rest of the crate is
//! built around; the pure-slice forms here are the reference semantics and
//! the tape composition used in training must agree with them.

use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};
use crate::nn::{NodeId, Real, Tape, Tensor};

/// How the selected word's embedding and its encoder contextual vector are
/// combined into the next decoder input. `Baseline` is the plain pointer
/// mechanism (embedding only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Baseline,
    Enc,
    Sum,
    Cat,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Baseline, Scheme::Enc, Scheme::Sum, Scheme::Cat];

    /// Decoder input width for this scheme.
    pub fn input_width(self, d_emb: usize, d_hid: usize) -> usize {
        match self {
            Scheme::Baseline => d_emb,
            Scheme::Enc => d_hid,
            Scheme::Sum => d_emb,
            Scheme::Cat => d_emb + d_hid,
        }
    }

    pub fn check_dims(self, d_emb: usize, d_hid: usize) -> Result<()> {
        match self {
            Scheme::Sum | Scheme::Enc if d_emb != d_hid => Err(CsgError::Config(format!(
                "scheme {self} requires d_emb == d_hid (got {d_emb} vs {d_hid})"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Baseline => "baseline",
            Scheme::Enc => "enc",
            Scheme::Sum => "sum",
            Scheme::Cat => "cat",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = CsgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Scheme::Baseline),
            "enc" => Ok(Scheme::Enc),
            "sum" => Ok(Scheme::Sum),
            "cat" => Ok(Scheme::Cat),
            other => Err(CsgError::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Attention over history positions: softmax of the dot products between
/// each encoder output row and the decoder output, max-subtracted.
pub fn history_attention<F: Real>(ot: &Tensor<F>, o_dec: &[F]) -> Result<Vec<F>> {
    if ot.rows == 0 {
        return Err(CsgError::Config("history attention over empty history".into()));
    }
    assert_eq!(ot.cols, o_dec.len(), "attention width mismatch");
    let logits: Vec<F> = (0..ot.rows)
        .map(|i| ot.row(i).iter().zip(o_dec).map(|(a, b)| *a * *b).sum())
        .collect();
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|v| (*v - max).exp()).collect();
    let z: F = exps.iter().cloned().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Index of the maximum probability, lowest index on ties.
pub fn select_position<F: Real>(p_history: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in p_history.iter().enumerate().skip(1) {
        if *v > p_history[best] {
            best = i;
        }
    }
    best
}

/// Scheme-specific combination of word embedding and contextual vector.
pub fn combine_input<F: Real>(scheme: Scheme, w: &[F], ctx: &[F]) -> Result<Vec<F>> {
    match scheme {
        Scheme::Baseline => Ok(w.to_vec()),
        Scheme::Enc => Ok(ctx.to_vec()),
        Scheme::Sum => {
            if w.len() != ctx.len() {
                return Err(CsgError::Config(format!(
                    "sum scheme dimension mismatch: {} vs {}",
                    w.len(),
                    ctx.len()
                )));
            }
            Ok(w.iter().zip(ctx).map(|(a, b)| *a + *b).collect())
        }
        Scheme::Cat => {
            let mut out = w.to_vec();
            out.extend_from_slice(ctx);
            Ok(out)
        }
    }
}

/// The contextual representation of position `pos`: row `pos` of OT.
pub fn gather_context<F: Real>(ot: &Tensor<F>, pos: usize) -> Result<Vec<F>> {
    if pos >= ot.rows {
        return Err(CsgError::Range(format!("position {pos} out of range ({} rows)", ot.rows)));
    }
    Ok(ot.row(pos).to_vec())
}

/// Tape-side combination; same semantics as [`combine_input`].
pub fn combine_on_tape<F: Real>(
    tape: &mut Tape<F>,
    scheme: Scheme,
    w: NodeId,
    ctx: NodeId,
) -> NodeId {
    match scheme {
        Scheme::Baseline => w,
        Scheme::Enc => ctx,
        Scheme::Sum => tape.add(w, ctx),
        Scheme::Cat => tape.concat(w, ctx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Params;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_uniform_for_identical_rows() {
        let ot = Tensor::from_vec(4, 2, vec![0.3f64, -1.0, 0.3, -1.0, 0.3, -1.0, 0.3, -1.0]);
        let p = history_attention(&ot, &[2.0, 0.5]).unwrap();
        for v in &p {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_single_position() {
        let ot = Tensor::from_vec(1, 3, vec![1.0f64, 2.0, 3.0]);
        let p = history_attention(&ot, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn attention_hand_computed_softmax() {
        // OT = [[1,0],[0,1],[1,1]], o_dec = [2,0] -> softmax([2,0,2])
        let ot = Tensor::from_vec(3, 2, vec![1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let p = history_attention(&ot, &[2.0, 0.0]).unwrap();
        assert_relative_eq!(p[0], 0.4683, epsilon = 1e-4);
        assert_relative_eq!(p[1], 0.0634, epsilon = 1e-4);
        assert_relative_eq!(p[2], 0.4683, epsilon = 1e-4);
    }

    #[test]
    fn attention_empty_history_is_error() {
        let ot: Tensor<f64> = Tensor::zeros(0, 2);
        assert!(history_attention(&ot, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn attention_shift_invariance() {
        // adding a constant to every logit leaves the softmax unchanged:
        // append a bias direction so every row gains the same dot product
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ot = Tensor::from_vec(3, 2, base.clone());
        let q = [0.7, -0.4];
        let p1 = history_attention(&ot, &q).unwrap();

        let mut shifted = Vec::new();
        for r in 0..3 {
            shifted.extend_from_slice(ot.row(r));
            shifted.push(1.0); // bias direction
        }
        let ot2 = Tensor::from_vec(3, 3, shifted);
        let p2 = history_attention(&ot2, &[q[0], q[1], 5.0]).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn select_position_cases() {
        assert_eq!(select_position(&[0.1f64, 0.7, 0.2]), 1);
        assert_eq!(select_position(&[1.0f64 / 3.0; 3]), 0); // tie -> lowest index
    }

    #[test]
    fn select_position_matches_linear_scan_and_monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut oracle = 0;
            for i in 0..n {
                if v[i] > v[oracle] {
                    oracle = i;
                }
            }
            assert_eq!(select_position(&v), oracle);
            // strictly monotone transform preserves the argmax
            let t: Vec<f64> = v.iter().map(|x| (3.0 * x).exp() + 1.0).collect();
            assert_eq!(select_position(&t), oracle);
        }
    }

    #[test]
    fn combine_scheme_identities() {
        let w = [1.0f64, 2.0];
        let ctx = [3.0f64, 4.0];
        assert_eq!(combine_input(Scheme::Sum, &w, &ctx).unwrap(), vec![4.0, 6.0]);
        assert_eq!(combine_input(Scheme::Cat, &w, &ctx).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(combine_input(Scheme::Enc, &w, &[5.0, 5.0]).unwrap(), vec![5.0, 5.0]);
        assert_eq!(combine_input(Scheme::Baseline, &w, &ctx).unwrap(), vec![1.0, 2.0]);
        assert!(combine_input(Scheme::Sum, &w, &[1.0]).is_err());
    }

    #[test]
    fn scheme_width_contract() {
        let (d_emb, d_hid) = (8, 8);
        let w = vec![0.0f64; d_emb];
        let ctx = vec![0.0f64; d_hid];
        for s in Scheme::ALL {
            let out = combine_input(s, &w, &ctx).unwrap();
            assert_eq!(out.len(), s.input_width(d_emb, d_hid));
        }
        assert_eq!(Scheme::Cat.input_width(4, 6), 10);
    }

    #[test]
    fn gather_context_rows_and_range() {
        let ot = Tensor::from_vec(3, 2, vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(gather_context(&ot, 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(gather_context(&ot, 2).unwrap(), vec![5.0, 6.0]);
        assert!(gather_context(&ot, 3).is_err());
    }

    #[test]
    fn tape_attention_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ot = Tensor::from_vec(5, 3, data);
        let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let reference = history_attention(&ot, &q).unwrap();

        let params: Params<f64> = Params::new();
        let mut tape = Tape::new(&params);
        let ot_n = tape.constant(ot);
        let q_n = tape.constant(Tensor::vector(q));
        let logits = tape.matvec(ot_n, q_n);
        let p = tape.softmax(logits);
        for (a, b) in tape.value(p).data.iter().zip(&reference) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
