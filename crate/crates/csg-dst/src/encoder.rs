//! Bidirectional GRU encoder. The two directions are merged by element-wise
//! sum so both the per-token outputs OT and the final state S stay
//! d_hid-wide without an extra projection.

use rand::Rng;

use crate::error::{CsgError, Result};
use crate::nn::{GruCell, NodeId, Params, Real, Tape, Tensor};
use crate::vocab;

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub d_emb: usize,
    pub d_hid: usize,
    pub dropout: f64,
    pub word_dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d_emb: 400, d_hid: 400, dropout: 0.2, word_dropout: 0.1 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Encoder {
    fwd: GruCell,
    bwd: GruCell,
}

/// Tape nodes for one encoded history: OT (l x d_hid) and final state S.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub ot: NodeId,
    pub s: NodeId,
    pub len: usize,
}

impl Encoder {
    pub fn register<F: Real, R: Rng>(
        params: &mut Params<F>,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        Encoder {
            fwd: GruCell::register(params, "enc.fwd", cfg.d_emb, cfg.d_hid, rng),
            bwd: GruCell::register(params, "enc.bwd", cfg.d_emb, cfg.d_hid, rng),
        }
    }

    /// Run both directions over the embedded tokens. `embeddings` must hold
    /// at least one row; rows that are not finite are rejected.
    pub fn encode<F: Real>(
        &self,
        tape: &mut Tape<F>,
        embeddings: &[NodeId],
    ) -> Result<EncoderOutput> {
        if embeddings.is_empty() {
            return Err(CsgError::Config("cannot encode an empty history".into()));
        }
        for e in embeddings {
            if !tape.value(*e).all_finite() {
                return Err(CsgError::Numeric("non-finite encoder input".into()));
            }
        }
        let l = embeddings.len();

        let mut fwd_states = Vec::with_capacity(l);
        let mut h = self.fwd.zero_state(tape);
        for e in embeddings {
            h = self.fwd.step(tape, *e, h);
            fwd_states.push(h);
        }
        let fwd_final = h;

        let mut bwd_states: Vec<NodeId> = Vec::with_capacity(l);
        let mut h = self.bwd.zero_state(tape);
        for e in embeddings.iter().rev() {
            h = self.bwd.step(tape, *e, h);
            bwd_states.push(h);
        }
        bwd_states.reverse();
        let bwd_final = h;

        let rows: Vec<NodeId> = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(f, b)| tape.add(*f, *b))
            .collect();
        let ot = tape.rows(rows);
        let s = tape.add(fwd_final, bwd_final);
        Ok(EncoderOutput { ot, s, len: l })
    }
}

/// Replace each non-special token index by UNK with probability `rate`
/// (training mode only).
pub fn word_dropout<R: Rng>(
    tokens: &[usize],
    rate: f64,
    rng: &mut R,
    training_mode: bool,
) -> Vec<usize> {
    assert!((0.0..1.0).contains(&rate), "word dropout rate {rate} outside [0, 1)");
    if !training_mode || rate == 0.0 {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .map(|&t| {
            if t >= vocab::SPECIALS.len() && rng.gen_bool(rate) {
                vocab::UNK
            } else {
                t
            }
        })
        .collect()
}

/// Inverted-dropout mask as a constant tensor, or None in eval mode.
pub fn dropout_mask<F: Real, R: Rng>(
    dim: usize,
    rate: f64,
    rng: &mut R,
    training_mode: bool,
) -> Option<Tensor<F>> {
    if !training_mode || rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = F::from_f64(1.0 / keep);
    let data = (0..dim)
        .map(|_| if rng.gen_bool(keep) { scale } else { F::zero() })
        .collect();
    Some(Tensor::vector(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_setup() -> (Params<f64>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = Params::new();
        let cfg = EncoderConfig { d_emb: 4, d_hid: 4, dropout: 0.0, word_dropout: 0.0 };
        let enc = Encoder::register(&mut params, &cfg, &mut rng);
        (params, enc)
    }

    fn rand_rows(tape: &mut Tape<f64>, l: usize, d: usize, seed: u64) -> Vec<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..l)
            .map(|_| {
                let data = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                tape.constant(Tensor::vector(data))
            })
            .collect()
    }

    #[test]
    fn single_token_history() {
        let (params, enc) = tiny_setup();
        let mut tape = Tape::new(&params);
        let rows = rand_rows(&mut tape, 1, 4, 0);
        let out = enc.encode(&mut tape, &rows).unwrap();
        assert_eq!(tape.value(out.ot).rows, 1);
        assert!(tape.value(out.s).all_finite());
    }

    #[test]
    fn empty_history_is_error() {
        let (params, enc) = tiny_setup();
        let mut tape = Tape::new(&params);
        assert!(enc.encode(&mut tape, &[]).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (params, enc) = tiny_setup();
        let run = || {
            let mut tape = Tape::new(&params);
            let rows = rand_rows(&mut tape, 5, 4, 3);
            let out = enc.encode(&mut tape, &rows).unwrap();
            (tape.value(out.ot).clone(), tape.value(out.s).clone())
        };
        let (ot1, s1) = run();
        let (ot2, s2) = run();
        assert_eq!(ot1, ot2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn shape_contract_l_rows() {
        let (params, enc) = tiny_setup();
        for l in [1usize, 3, 9, 17] {
            let mut tape = Tape::new(&params);
            let rows = rand_rows(&mut tape, l, 4, l as u64);
            let out = enc.encode(&mut tape, &rows).unwrap();
            assert_eq!(tape.value(out.ot).rows, l);
            assert_eq!(out.len, l);
        }
    }

    #[test]
    fn word_dropout_contracts() {
        let tokens: Vec<usize> = (4..14).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(word_dropout(&tokens, 0.0, &mut rng, true), tokens);
        assert_eq!(word_dropout(&tokens, 0.5, &mut rng, false), tokens);
        // specials are never dropped
        let specials = vec![0usize, 1, 2, 3];
        assert_eq!(word_dropout(&specials, 0.9, &mut rng, true), specials);
    }

    #[test]
    fn word_dropout_rate_concentrates() {
        let tokens: Vec<usize> = vec![10; 10_000];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dropped = word_dropout(&tokens, 0.1, &mut rng, true)
            .iter()
            .filter(|&&t| t == vocab::UNK)
            .count();
        let frac = dropped as f64 / tokens.len() as f64;
        assert!((0.08..=0.12).contains(&frac), "replaced fraction {frac}");
    }
}
