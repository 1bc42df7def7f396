//! The DST model: shared embedding table, bidirectional GRU encoder, a
//! GRU slot-value decoder in one of three variants, and the slot gate.
//! The decoder input width is fixed by the context-combination scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_history, BeliefState, Dialogue, SlotValue};
use crate::csg::Scheme;
use crate::decoder::{GateClass, Instrumentation, SlotPrediction};
use crate::encoder::{dropout_mask, word_dropout, Encoder, EncoderConfig, EncoderOutput};
use crate::error::{CsgError, Result};
use crate::nn::{GruCell, NodeId, ParamId, Params, Real, Tape, Tensor};
use crate::vocab::{self, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    SpanPtr,
    SeqPtr,
    Hybrid,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] =
        [ModelVariant::SpanPtr, ModelVariant::SeqPtr, ModelVariant::Hybrid];
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelVariant::SpanPtr => "span_ptr",
            ModelVariant::SeqPtr => "seq_ptr",
            ModelVariant::Hybrid => "hybrid",
        })
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = CsgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "span_ptr" => Ok(ModelVariant::SpanPtr),
            "seq_ptr" => Ok(ModelVariant::SeqPtr),
            "hybrid" => Ok(ModelVariant::Hybrid),
            other => Err(CsgError::Config(format!("unknown model variant '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub scheme: Scheme,
    pub d_emb: usize,
    pub d_hid: usize,
    pub max_value_len: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    /// Alternate reading of the teacher-forcing exception: when set, forced
    /// steps also take the context half from the gold word's history
    /// position instead of the model's own attention argmax.
    pub context_teacher_forcing: bool,
}

impl ModelConfig {
    pub fn new(variant: ModelVariant, scheme: Scheme) -> Self {
        ModelConfig {
            variant,
            scheme,
            d_emb: 400,
            d_hid: 400,
            max_value_len: 10,
            dropout: 0.2,
            word_dropout: 0.1,
            context_teacher_forcing: false,
        }
    }

    pub fn with_dims(mut self, d: usize) -> Self {
        self.d_emb = d;
        self.d_hid = d;
        self
    }
}

pub struct DstModel<F: Real> {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Params<F>,
    pub(crate) emb: ParamId,
    pub(crate) enc: Encoder,
    pub(crate) dec: GruCell,
    pub(crate) gate_w: ParamId,
    pub(crate) gate_b: ParamId,
    pub(crate) vocab_w: Option<ParamId>,
    pub(crate) vocab_b: Option<ParamId>,
    pub(crate) pgen_w: Option<ParamId>,
    pub(crate) pgen_b: Option<ParamId>,
    pub(crate) sentinel: Option<ParamId>,
}

impl<F: Real> DstModel<F> {
    pub fn new(cfg: ModelConfig, vocab: Vocabulary, init_seed: u64) -> Result<Self> {
        cfg.scheme.check_dims(cfg.d_emb, cfg.d_hid)?;
        if cfg.max_value_len < 1 {
            return Err(CsgError::Config("max_value_len must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = Params::new();
        let emb = params.add("embedding", vocab::init_embedding(vocab.len(), cfg.d_emb, init_seed));
        let enc_cfg = EncoderConfig {
            d_emb: cfg.d_emb,
            d_hid: cfg.d_hid,
            dropout: cfg.dropout,
            word_dropout: cfg.word_dropout,
        };
        let enc = Encoder::register(&mut params, &enc_cfg, &mut rng);
        let in_width = cfg.scheme.input_width(cfg.d_emb, cfg.d_hid);
        let dec = GruCell::register(&mut params, "dec", in_width, cfg.d_hid, &mut rng);
        let scale = (1.0 / cfg.d_hid as f64).sqrt();
        let gate_w = params.add("gate.w", Tensor::uniform(GateClass::COUNT, cfg.d_hid, scale, &mut rng));
        let gate_b = params.add("gate.b", Tensor::zeros(1, GateClass::COUNT));

        let (mut vocab_w, mut vocab_b, mut pgen_w, mut pgen_b, mut sentinel) =
            (None, None, None, None, None);
        match cfg.variant {
            ModelVariant::Hybrid => {
                vocab_w = Some(params.add(
                    "gen.vocab_w",
                    Tensor::uniform(vocab.len(), cfg.d_hid, scale, &mut rng),
                ));
                vocab_b = Some(params.add("gen.vocab_b", Tensor::zeros(1, vocab.len())));
                let pgen_in = cfg.d_hid + cfg.d_hid + in_width;
                pgen_w = Some(params.add(
                    "gen.pgen_w",
                    Tensor::uniform(1, pgen_in, (1.0 / pgen_in as f64).sqrt(), &mut rng),
                ));
                pgen_b = Some(params.add("gen.pgen_b", Tensor::zeros(1, 1)));
            }
            ModelVariant::SeqPtr => {
                sentinel =
                    Some(params.add("dec.sentinel", Tensor::uniform(1, cfg.d_hid, scale, &mut rng)));
            }
            ModelVariant::SpanPtr => {}
        }

        Ok(DstModel {
            cfg,
            vocab,
            params,
            emb,
            enc,
            dec,
            gate_w,
            gate_b,
            vocab_w,
            vocab_b,
            pgen_w,
            pgen_b,
            sentinel,
        })
    }

    /// Parameter-vector position of the embedding table (its PAD row is
    /// frozen during optimization).
    pub fn embedding_param_index(&self) -> usize {
        self.emb.0
    }
}

/// Everything slot decoding needs about one encoded turn.
pub struct TurnContext {
    /// Surface tokens of the flattened history.
    pub tokens: Vec<String>,
    /// Vocabulary indices actually fed to the encoder (after word dropout
    /// in training mode).
    pub idx: Vec<usize>,
    /// Per-position flag: surface form absent from the vocabulary.
    pub oov: Vec<bool>,
    pub enc: EncoderOutput,
    /// OT with the sentinel row appended at position l (SeqPtr only).
    pub ot_ext: Option<NodeId>,
}

impl TurnContext {
    pub fn len(&self) -> usize {
        self.enc.len
    }

    pub fn is_empty(&self) -> bool {
        self.enc.len == 0
    }
}

impl<F: Real> DstModel<F> {
    pub(crate) fn embed<'a>(&self, tape: &mut Tape<'a, F>, index: usize) -> NodeId {
        tape.gather_row(self.emb, index)
    }

    pub(crate) fn encode_turn<'a>(
        &'a self,
        tape: &mut Tape<'a, F>,
        dialogue: &Dialogue,
        turn_index: usize,
        rng: Option<&mut ChaCha8Rng>,
        training: bool,
    ) -> Result<TurnContext> {
        let (tokens, _origins) = flatten_history(dialogue, turn_index)?;
        let mut idx = self.vocab.encode(&tokens);
        let oov: Vec<bool> = tokens.iter().map(|t| !self.vocab.contains(t)).collect();

        let mut emb_nodes = Vec::with_capacity(idx.len());
        if let Some(rng) = rng {
            if training {
                idx = word_dropout(&idx, self.cfg.word_dropout, rng, true);
            }
            for &i in &idx {
                let e = self.embed(tape, i);
                let node = match dropout_mask::<F, _>(self.cfg.d_emb, self.cfg.dropout, rng, training)
                {
                    Some(mask) => {
                        let m = tape.constant(mask);
                        tape.mul(e, m)
                    }
                    None => e,
                };
                emb_nodes.push(node);
            }
        } else {
            for &i in &idx {
                emb_nodes.push(self.embed(tape, i));
            }
        }

        let enc = self.enc.encode(tape, &emb_nodes)?;
        let ot_ext = self.sentinel.map(|sent| {
            let mut rows: Vec<NodeId> = (0..enc.len).map(|i| tape.row(enc.ot, i)).collect();
            rows.push(tape.param(sent));
            tape.rows(rows)
        });
        Ok(TurnContext { tokens, idx, oov, enc, ot_ext })
    }

    /// Initial decoder input: the slot embedding, zero-padded on the
    /// context half under the Cat scheme.
    pub(crate) fn initial_input<'a>(&self, tape: &mut Tape<'a, F>, slot_index: usize) -> NodeId {
        let slot_emb = self.embed(tape, slot_index);
        match self.cfg.scheme {
            Scheme::Cat => {
                let z = tape.constant(Tensor::zeros(1, self.cfg.d_hid));
                tape.concat(slot_emb, z)
            }
            _ => slot_emb,
        }
    }

    /// First decoder step for a slot: feed the slot embedding, return the
    /// step-0 decoder output (which conditions both the gate and the first
    /// pointer distribution) along with the input node that produced it.
    pub(crate) fn slot_step0<'a>(
        &self,
        tape: &mut Tape<'a, F>,
        ctx: &TurnContext,
        slot_index: usize,
    ) -> (NodeId, NodeId) {
        let input = self.initial_input(tape, slot_index);
        let h = self.dec.step(tape, input, ctx.enc.s);
        (h, input)
    }

    /// Gate distribution over {NONE, DONTCARE, PTR} from a decoder output.
    pub(crate) fn gate_distribution<'a>(&self, tape: &mut Tape<'a, F>, h: NodeId) -> NodeId {
        let w = tape.param(self.gate_w);
        let b = tape.param(self.gate_b);
        let logits = tape.matvec(w, h);
        let logits = tape.add(logits, b);
        tape.softmax(logits)
    }

    /// Sum of gate and value losses over all schema slots of one turn.
    /// Returns the total loss value, parameter gradients and the number of
    /// slot terms, so batch averaging can happen outside.
    pub fn turn_loss(
        &self,
        dialogue: &Dialogue,
        turn_index: usize,
        tf_ratio: f64,
        rng: &mut ChaCha8Rng,
        instr: &mut Instrumentation,
    ) -> Result<(f64, Vec<Tensor<F>>, usize)> {
        let turn = dialogue
            .turns
            .get(turn_index)
            .ok_or_else(|| CsgError::Range(format!("turn {turn_index} out of range")))?;
        let schema: Vec<String> = self.schema_slots();
        let mut tape = Tape::new(&self.params);
        let ctx = self.encode_turn(&mut tape, dialogue, turn_index, Some(rng), true)?;

        let mut terms: Vec<NodeId> = Vec::new();
        for slot in &schema {
            let gold = turn.gold_state.get(slot);
            let slot_terms = match self.cfg.variant {
                ModelVariant::SpanPtr | ModelVariant::SeqPtr => {
                    self.extractive_slot_loss(&mut tape, &ctx, slot, gold, tf_ratio, rng, instr)?
                }
                ModelVariant::Hybrid => {
                    self.hybrid_slot_loss(&mut tape, &ctx, slot, gold, tf_ratio, rng, instr)?
                }
            };
            terms.extend(slot_terms);
        }
        if terms.is_empty() {
            return Err(CsgError::Config("turn loss over an empty schema".into()));
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = tape.add(total, *t);
        }
        let loss = tape.scalar(total).to_f64().unwrap();
        if !loss.is_finite() {
            return Err(CsgError::Numeric(format!(
                "non-finite loss on dialogue '{}' turn {turn_index}",
                dialogue.id
            )));
        }
        let grads = tape.backward(total);
        Ok((loss, grads, schema.len()))
    }

    /// Deterministic eval-mode decode of every schema slot.
    pub fn predict_turn(&self, dialogue: &Dialogue, turn_index: usize) -> Result<Vec<SlotPrediction>> {
        let mut tape = Tape::new(&self.params);
        let ctx = self.encode_turn(&mut tape, dialogue, turn_index, None, false)?;
        let mut out = Vec::new();
        for slot in self.schema_slots() {
            let pred = match self.cfg.variant {
                ModelVariant::SpanPtr | ModelVariant::SeqPtr => {
                    self.extractive_slot_predict(&mut tape, &ctx, &slot)?
                }
                ModelVariant::Hybrid => self.hybrid_slot_predict(&mut tape, &ctx, &slot, None)?,
            };
            out.push(pred);
        }
        Ok(out)
    }

    /// Predicted belief state for one turn.
    pub fn predict_state(&self, dialogue: &Dialogue, turn_index: usize) -> Result<BeliefState> {
        let mut state = BeliefState::default();
        for pred in self.predict_turn(dialogue, turn_index)? {
            match pred.gate {
                GateClass::None => {}
                GateClass::Dontcare => state.set(&pred.slot, SlotValue::Dontcare),
                GateClass::Ptr => state.set(&pred.slot, SlotValue::Words(pred.value)),
            }
        }
        Ok(state)
    }

    /// Eval-mode encoder pass over one turn's flattened history, returning
    /// the surface tokens and their contextual rows (one per position).
    pub fn encoded_history(
        &self,
        dialogue: &Dialogue,
        turn_index: usize,
    ) -> Result<(Vec<String>, Tensor<F>)> {
        let mut tape = Tape::new(&self.params);
        let ctx = self.encode_turn(&mut tape, dialogue, turn_index, None, false)?;
        let ot = tape.value(ctx.enc.ot).clone();
        Ok((ctx.tokens, ot))
    }

    /// Embedding row of one vocabulary index.
    pub fn embedding_row(&self, index: usize) -> &[F] {
        self.params.get(self.emb).row(index)
    }

    /// Slot names, in schema token order. The vocabulary keeps one reserved
    /// token per slot right after the specials.
    pub fn schema_slots(&self) -> Vec<String> {
        let words = self.vocab.words();
        words[vocab::SPECIALS.len()..]
            .iter()
            .take(self.vocab.n_slots())
            .cloned()
            .collect()
    }
}

/// Per-step teacher-forcing coin.
pub(crate) fn forced_step(tf_ratio: f64, rng: &mut ChaCha8Rng) -> bool {
    use rand::Rng;
    tf_ratio > 0.0 && rng.gen_bool(tf_ratio)
}
