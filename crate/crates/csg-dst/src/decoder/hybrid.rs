//! The hybrid pointer-generator decoder: each step mixes a vocabulary
//! softmax with the history attention through a learned generation gate,
//! so values can be produced from the vocabulary, copied from the history,
//! or both.

use rand_chacha::ChaCha8Rng;

use crate::corpus::SlotValue;
use crate::csg::{combine_on_tape, select_position};
use crate::decoder::{
    blend_final, BlendChoice, GateClass, GenStep, Instrumentation, SlotPrediction, StepTrace,
};
use crate::error::Result;
use crate::model::{forced_step, DstModel, TurnContext};
use crate::nn::{NodeId, Real, Tape};
use crate::vocab;

/// Everything one generation step computes on the tape.
struct HybridStep {
    p_vocab: NodeId,
    p_history: NodeId,
    p_gen: NodeId,
}

impl<F: Real> DstModel<F> {
    /// One pointer-generator step from decoder state `h` fed `input`.
    fn hybrid_step(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        h: NodeId,
        input: NodeId,
    ) -> HybridStep {
        let ot = ctx.enc.ot;
        let att_logits = tape.matvec(ot, h);
        let p_history = tape.softmax(att_logits);

        let vw = tape.param(self.vocab_w.expect("hybrid model has a vocab head"));
        let vb = tape.param(self.vocab_b.expect("hybrid model has a vocab head"));
        let v_logits = tape.matvec(vw, h);
        let v_logits = tape.add(v_logits, vb);
        let p_vocab = tape.softmax(v_logits);

        // generation gate over [decoder output; attention context; input]
        let context = tape.matvec_t(ot, p_history);
        let gw = tape.param(self.pgen_w.expect("hybrid model has a generation gate"));
        let gb = tape.param(self.pgen_b.expect("hybrid model has a generation gate"));
        let hc = tape.concat(h, context);
        let hci = tape.concat(hc, input);
        let g_logit = tape.matvec(gw, hci);
        let g_logit = tape.add(g_logit, gb);
        let p_gen = tape.sigmoid(g_logit);

        HybridStep { p_vocab, p_history, p_gen }
    }

    /// Probability of emitting `word` this step, on the tape:
    /// p_gen * p_vocab[word] + (1 - p_gen) * sum of p_history over the
    /// positions whose surface token is `word`. Returns None when the word
    /// is unreachable (out of vocabulary and absent from the history).
    fn gold_word_prob(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        step: &HybridStep,
        word: &str,
        anchor: Option<usize>,
    ) -> Option<NodeId> {
        // When the gold value occurs contiguously in the history, credit the
        // copy route at the gold occurrence itself; repeated surface forms
        // (above all the mask token, which can blanket a history) would
        // otherwise pool credit over unrelated positions and wash out the
        // alignment signal.
        let copy_positions: Vec<usize> = match anchor {
            Some(pos) => vec![pos],
            None => ctx
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| t.as_str() == word)
                .map(|(i, _)| i)
                .collect(),
        };
        // Only a real vocabulary entry earns generation credit; a word that
        // merely maps to the UNK fallback (including the literal mask token)
        // must be reached through the copy route, otherwise the generator
        // learns to emit the placeholder instead of copying surface forms.
        let word_idx = self.vocab.index_of(word);
        let vocab_term = if self.vocab.contains(word) && word_idx != vocab::UNK {
            let pv = tape.pick(step.p_vocab, word_idx);
            Some(tape.mul(step.p_gen, pv))
        } else {
            None
        };
        let copy_term = if copy_positions.is_empty() {
            None
        } else {
            let ph = tape.pick_sum(step.p_history, copy_positions);
            let copy_gate = tape.one_minus(step.p_gen);
            Some(tape.mul(copy_gate, ph))
        };
        match (vocab_term, copy_term) {
            (Some(a), Some(b)) => Some(tape.add(a, b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }

    /// Feedback input for the next step after this one emitted (or was
    /// forced to) a word.
    fn hybrid_feedback(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        word_idx: usize,
        ctx_position: usize,
    ) -> NodeId {
        let w = self.embed(tape, word_idx);
        let c = tape.row(ctx.enc.ot, ctx_position);
        combine_on_tape(tape, self.cfg.scheme, w, c)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn hybrid_slot_loss(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        slot: &str,
        gold: Option<&SlotValue>,
        tf_ratio: f64,
        rng: &mut ChaCha8Rng,
        instr: &mut Instrumentation,
    ) -> Result<Vec<NodeId>> {
        let slot_idx = self.vocab.slot_index(slot)?;
        let (h1, input0) = self.slot_step0(tape, ctx, slot_idx);
        let gold_gate = GateClass::gold(gold);
        let mut terms = vec![self.gate_loss_term(tape, h1, gold_gate)];

        let words = match gold {
            Some(SlotValue::Words(ws)) => ws,
            _ => return Ok(terms),
        };
        // gold emission sequence: the value words, then the EOS terminator
        let eos = vocab::SPECIALS[vocab::EOS].to_string();
        let targets: Vec<&str> =
            words.iter().map(String::as_str).chain(std::iter::once(eos.as_str())).collect();
        let surface_idx: Vec<usize> =
            ctx.tokens.iter().map(|t| self.vocab.index_of(t)).collect();
        let span = crate::decoder::find_span(&ctx.tokens, words);

        let mut h = h1;
        let mut input = input0;
        for (k, &gold_word) in targets.iter().enumerate() {
            let step = self.hybrid_step(tape, ctx, h, input);
            let anchor = span.filter(|_| k < words.len()).map(|(start, _)| start + k);
            if let Some(p_gold) = self.gold_word_prob(tape, ctx, &step, gold_word, anchor) {
                let lp = tape.ln(p_gold);
                terms.push(tape.neg(lp));
            }
            if k + 1 == targets.len() {
                break;
            }

            let attn_argmax = select_position(&tape.value(step.p_history).data);
            let forced = forced_step(tf_ratio, rng);
            let (word_idx, ctx_position) = if forced {
                // the word half comes from the gold word, but the context
                // half stays the model's own: either its attention argmax,
                // or (alternate reading) the gold word's history position
                let gold_idx = self.vocab.index_of(gold_word);
                let pos = if self.cfg.context_teacher_forcing {
                    ctx.tokens
                        .iter()
                        .rposition(|t| t == gold_word)
                        .unwrap_or(attn_argmax)
                } else {
                    attn_argmax
                };
                (gold_idx, pos)
            } else {
                let blend = blend_final(
                    tape.scalar(step.p_gen),
                    &tape.value(step.p_vocab).data,
                    &tape.value(step.p_history).data,
                    &surface_idx,
                    &ctx.oov,
                );
                match blend.argmax() {
                    BlendChoice::Vocab(i) => (i, attn_argmax),
                    // copied OOV word: no embedding row of its own, fall
                    // back to UNK for the word half
                    BlendChoice::Copy(pos) => (vocab::UNK, pos),
                }
            };
            instr.note(StepTrace { forced, word_index: word_idx, ctx_position, attn_argmax });
            input = self.hybrid_feedback(tape, ctx, word_idx, ctx_position);
            h = self.dec.step(tape, input, h);
        }
        Ok(terms)
    }

    pub(crate) fn hybrid_slot_predict(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        slot: &str,
        mut trace: Option<&mut Vec<GenStep>>,
    ) -> Result<SlotPrediction> {
        let slot_idx = self.vocab.slot_index(slot)?;
        let (h1, input0) = self.slot_step0(tape, ctx, slot_idx);
        let p_gate = self.gate_distribution(tape, h1);
        let gate = GateClass::from_index(select_position(&tape.value(p_gate).data));
        if gate != GateClass::Ptr {
            return Ok(SlotPrediction { slot: slot.into(), gate, positions: vec![], value: vec![] });
        }

        let surface_idx: Vec<usize> =
            ctx.tokens.iter().map(|t| self.vocab.index_of(t)).collect();
        let mut h = h1;
        let mut input = input0;
        let mut positions = Vec::new();
        let mut value: Vec<String> = Vec::new();
        for _ in 0..self.cfg.max_value_len {
            let step = self.hybrid_step(tape, ctx, h, input);
            let blend = blend_final(
                tape.scalar(step.p_gen),
                &tape.value(step.p_vocab).data,
                &tape.value(step.p_history).data,
                &surface_idx,
                &ctx.oov,
            );
            let choice = blend.argmax();
            let attn_argmax = select_position(&tape.value(step.p_history).data);
            let (word_idx, ctx_position, emitted) = match choice {
                BlendChoice::Vocab(i) => (i, attn_argmax, self.vocab.word(i)?.to_string()),
                BlendChoice::Copy(pos) => (vocab::UNK, pos, ctx.tokens[pos].clone()),
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(GenStep {
                    p_vocab: tape.value(step.p_vocab).data.iter().map(|v| v.to_f64().unwrap()).collect(),
                    p_history: tape.value(step.p_history).data.iter().map(|v| v.to_f64().unwrap()).collect(),
                    p_gen: tape.scalar(step.p_gen).to_f64().unwrap(),
                    emitted: emitted.clone(),
                });
            }
            if matches!(choice, BlendChoice::Vocab(i) if i == vocab::EOS) {
                break;
            }
            if let BlendChoice::Copy(pos) = choice {
                positions.push(pos);
            }
            value.push(emitted);
            input = self.hybrid_feedback(tape, ctx, word_idx, ctx_position);
            h = self.dec.step(tape, input, h);
        }
        Ok(SlotPrediction { slot: slot.into(), gate, positions, value })
    }
}
