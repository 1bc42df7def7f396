//! Extractive pointer decoders. SpanPtr predicts a (start, end) pair in
//! exactly two steps; SeqPtr points position by position until it selects
//! the learned sentinel appended after the last history position.

use rand_chacha::ChaCha8Rng;

use crate::corpus::SlotValue;
use crate::csg::{combine_on_tape, select_position};
use crate::decoder::{
    find_span, masked_end_argmax, GateClass, Instrumentation, SlotPrediction, StepTrace,
};
use crate::error::{CsgError, Result};
use crate::model::{forced_step, DstModel, TurnContext};
use crate::nn::{NodeId, Real, Tape};
use crate::vocab;

impl<F: Real> DstModel<F> {
    /// Gate cross-entropy term for one slot.
    pub(crate) fn gate_loss_term(
        &self,
        tape: &mut Tape<'_, F>,
        h1: NodeId,
        gold: GateClass,
    ) -> NodeId {
        let p = self.gate_distribution(tape, h1);
        let picked = tape.pick(p, gold.index());
        let lp = tape.ln(picked);
        tape.neg(lp)
    }

    /// Next decoder input after pointing at history position `pos`: the
    /// word-embedding half comes from `word_idx`, the context half from row
    /// `pos` of `ot`, combined per the configured scheme.
    fn pointer_feedback(
        &self,
        tape: &mut Tape<'_, F>,
        ot: NodeId,
        word_idx: usize,
        pos: usize,
    ) -> NodeId {
        let w = self.embed(tape, word_idx);
        let c = tape.row(ot, pos);
        combine_on_tape(tape, self.cfg.scheme, w, c)
    }

    /// Vocabulary index fed back for pointing at `pos` of the (possibly
    /// sentinel-extended) history.
    fn feedback_word(&self, ctx: &TurnContext, pos: usize) -> usize {
        if pos < ctx.len() {
            ctx.idx[pos]
        } else {
            vocab::EOS
        }
    }

    pub(crate) fn extractive_slot_loss(
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
        let (h1, _input) = self.slot_step0(tape, ctx, slot_idx);
        let gold_gate = GateClass::gold(gold);
        let mut terms = vec![self.gate_loss_term(tape, h1, gold_gate)];

        let words = match gold {
            Some(SlotValue::Words(ws)) => ws,
            _ => return Ok(terms),
        };
        let span = match find_span(&ctx.tokens, words) {
            Some(s) => s,
            // value not present in the history: nothing an extractive
            // pointer can be supervised towards, gate loss only
            None => return Ok(terms),
        };

        match self.cfg.variant {
            crate::model::ModelVariant::SpanPtr => {
                self.span_ptr_loss(tape, ctx, h1, span, tf_ratio, rng, instr, &mut terms)
            }
            crate::model::ModelVariant::SeqPtr => {
                self.seq_ptr_loss(tape, ctx, h1, span, tf_ratio, rng, instr, &mut terms)
            }
            _ => {
                return Err(CsgError::Config(
                    "extractive loss called on a generative model".into(),
                ))
            }
        }
        Ok(terms)
    }

    #[allow(clippy::too_many_arguments)]
    fn span_ptr_loss(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        h1: NodeId,
        (start, end): (usize, usize),
        tf_ratio: f64,
        rng: &mut ChaCha8Rng,
        instr: &mut Instrumentation,
        terms: &mut Vec<NodeId>,
    ) {
        let ot = ctx.enc.ot;
        let logits1 = tape.matvec(ot, h1);
        let p1 = tape.softmax(logits1);
        let picked = tape.pick(p1, start);
        let lp = tape.ln(picked);
        terms.push(tape.neg(lp));

        let attn_argmax = select_position(&tape.value(p1).data);
        let forced = forced_step(tf_ratio, rng);
        let pos = if forced { start } else { attn_argmax };
        let word_idx = self.feedback_word(ctx, pos);
        instr.note(StepTrace { forced, word_index: word_idx, ctx_position: pos, attn_argmax });

        let input = self.pointer_feedback(tape, ot, word_idx, pos);
        let h2 = self.dec.step(tape, input, h1);
        // the end step trains with plain (unmasked) cross-entropy; the
        // start constraint only applies at inference
        let logits2 = tape.matvec(ot, h2);
        let p2 = tape.softmax(logits2);
        let picked = tape.pick(p2, end);
        let lp = tape.ln(picked);
        terms.push(tape.neg(lp));
    }

    #[allow(clippy::too_many_arguments)]
    fn seq_ptr_loss(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        h1: NodeId,
        (start, end): (usize, usize),
        tf_ratio: f64,
        rng: &mut ChaCha8Rng,
        instr: &mut Instrumentation,
        terms: &mut Vec<NodeId>,
    ) {
        let ot_ext = ctx.ot_ext.expect("seq_ptr model always extends OT");
        let sentinel = ctx.len();
        // gold pointing sequence: each value position, then the sentinel
        let gold_positions: Vec<usize> =
            (start..=end).chain(std::iter::once(sentinel)).collect();

        let mut h = h1;
        for (k, &target) in gold_positions.iter().enumerate() {
            let logits = tape.matvec(ot_ext, h);
            let p = tape.softmax(logits);
            let picked = tape.pick(p, target);
            let lp = tape.ln(picked);
            terms.push(tape.neg(lp));

            if k + 1 == gold_positions.len() {
                break;
            }
            let attn_argmax = select_position(&tape.value(p).data);
            let forced = forced_step(tf_ratio, rng);
            let pos = if forced { target } else { attn_argmax };
            let word_idx = self.feedback_word(ctx, pos);
            instr.note(StepTrace { forced, word_index: word_idx, ctx_position: pos, attn_argmax });
            let input = self.pointer_feedback(tape, ot_ext, word_idx, pos);
            h = self.dec.step(tape, input, h);
        }
    }

    pub(crate) fn extractive_slot_predict(
        &self,
        tape: &mut Tape<'_, F>,
        ctx: &TurnContext,
        slot: &str,
    ) -> Result<SlotPrediction> {
        let slot_idx = self.vocab.slot_index(slot)?;
        let (h1, _input) = self.slot_step0(tape, ctx, slot_idx);
        let p_gate = self.gate_distribution(tape, h1);
        let gate = GateClass::from_index(select_position(&tape.value(p_gate).data));
        if gate != GateClass::Ptr {
            return Ok(SlotPrediction { slot: slot.into(), gate, positions: vec![], value: vec![] });
        }

        let positions = match self.cfg.variant {
            crate::model::ModelVariant::SpanPtr => self.span_ptr_decode(tape, ctx, h1),
            crate::model::ModelVariant::SeqPtr => self.seq_ptr_decode(tape, ctx, h1),
            _ => {
                return Err(CsgError::Config(
                    "extractive predict called on a generative model".into(),
                ))
            }
        };
        let value = positions.iter().map(|&p| ctx.tokens[p].clone()).collect();
        Ok(SlotPrediction { slot: slot.into(), gate, positions, value })
    }

    fn span_ptr_decode(&self, tape: &mut Tape<'_, F>, ctx: &TurnContext, h1: NodeId) -> Vec<usize> {
        let ot = ctx.enc.ot;
        let logits1 = tape.matvec(ot, h1);
        let p1 = tape.softmax(logits1);
        let start = select_position(&tape.value(p1).data);

        let word_idx = self.feedback_word(ctx, start);
        let input = self.pointer_feedback(tape, ot, word_idx, start);
        let h2 = self.dec.step(tape, input, h1);
        let logits2 = tape.matvec(ot, h2);
        let p2 = tape.softmax(logits2);
        let limit = start + self.cfg.max_value_len - 1;
        let end = masked_end_argmax(&tape.value(p2).data, start, limit);
        (start..=end).collect()
    }

    fn seq_ptr_decode(&self, tape: &mut Tape<'_, F>, ctx: &TurnContext, h1: NodeId) -> Vec<usize> {
        let ot_ext = ctx.ot_ext.expect("seq_ptr model always extends OT");
        let sentinel = ctx.len();
        let mut h = h1;
        let mut positions = Vec::new();
        for _ in 0..self.cfg.max_value_len {
            let logits = tape.matvec(ot_ext, h);
            let p = tape.softmax(logits);
            let pos = select_position(&tape.value(p).data);
            if pos == sentinel {
                break;
            }
            positions.push(pos);
            let word_idx = self.feedback_word(ctx, pos);
            let input = self.pointer_feedback(tape, ot_ext, word_idx, pos);
            h = self.dec.step(tape, input, h);
        }
        positions
    }
}
