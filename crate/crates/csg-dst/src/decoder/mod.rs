//! Pieces shared by the extractive and hybrid decoders: the slot gate
//! classes, gold-span search, span-end masking and the pointer-generator
//! blending rule.

pub mod extractive;
pub mod hybrid;

use serde::{Deserialize, Serialize};

use crate::corpus::SlotValue;
use crate::nn::Real;

/// Slot gate decision: decode a value, or short-circuit to NONE/DONTCARE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateClass {
    None,
    Dontcare,
    Ptr,
}

impl GateClass {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            GateClass::None => 0,
            GateClass::Dontcare => 1,
            GateClass::Ptr => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => GateClass::None,
            1 => GateClass::Dontcare,
            _ => GateClass::Ptr,
        }
    }

    pub fn gold(value: Option<&SlotValue>) -> Self {
        match value {
            None => GateClass::None,
            Some(SlotValue::Dontcare) => GateClass::Dontcare,
            Some(SlotValue::Words(_)) => GateClass::Ptr,
        }
    }
}

/// One decoded slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub slot: String,
    pub gate: GateClass,
    pub positions: Vec<usize>,
    pub value: Vec<String>,
}

/// Most recent contiguous occurrence of `value` in `history`, as an
/// inclusive (start, end) pair. Values restated later in the dialogue
/// shadow earlier mentions.
pub fn find_span(history: &[String], value: &[String]) -> Option<(usize, usize)> {
    let k = value.len();
    if k == 0 || k > history.len() {
        return None;
    }
    (0..=history.len() - k)
        .rev()
        .find(|&s| history[s..s + k].iter().zip(value).all(|(a, b)| a == b))
        .map(|s| (s, s + k - 1))
}

/// Argmax over positions `start..=limit` of `p` (the span-end constraint:
/// candidates before the start are masked out).
pub fn masked_end_argmax<F: Real>(p: &[F], start: usize, limit: usize) -> usize {
    let hi = limit.min(p.len() - 1);
    let mut best = start;
    for (i, v) in p.iter().enumerate().take(hi + 1).skip(start + 1) {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Negative log-likelihood of one target under a distribution.
pub fn position_nll<F: Real>(p: &[F], target: usize) -> F {
    -p[target].ln()
}

/// The pointer-generator final distribution. Copy mass for an
/// in-vocabulary history word folds onto its vocabulary entry; OOV history
/// positions keep position-level mass.
#[derive(Clone, Debug)]
pub struct FinalDist<F> {
    pub vocab_mass: Vec<F>,
    pub pos_mass: Vec<F>,
}

impl<F: Real> FinalDist<F> {
    pub fn total(&self) -> F {
        self.vocab_mass.iter().cloned().sum::<F>() + self.pos_mass.iter().cloned().sum::<F>()
    }

    /// Argmax over the union of vocabulary entries and OOV history
    /// positions. Returns either a vocabulary index or a history position.
    pub fn argmax(&self) -> BlendChoice {
        let mut best = BlendChoice::Vocab(0);
        let mut best_v = self.vocab_mass[0];
        for (i, v) in self.vocab_mass.iter().enumerate().skip(1) {
            if *v > best_v {
                best_v = *v;
                best = BlendChoice::Vocab(i);
            }
        }
        for (i, v) in self.pos_mass.iter().enumerate() {
            if *v > best_v {
                best_v = *v;
                best = BlendChoice::Copy(i);
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlendChoice {
    Vocab(usize),
    Copy(usize),
}

/// p_final = p_gen * p_vocab (+) (1 - p_gen) * p_history.
/// `history_idx[i]` is the vocabulary index of history position i and
/// `history_oov[i]` marks surface forms outside the vocabulary.
pub fn blend_final<F: Real>(
    p_gen: F,
    p_vocab: &[F],
    p_history: &[F],
    history_idx: &[usize],
    history_oov: &[bool],
) -> FinalDist<F> {
    let copy = F::one() - p_gen;
    let mut vocab_mass: Vec<F> = p_vocab.iter().map(|v| p_gen * *v).collect();
    let mut pos_mass = vec![F::zero(); p_history.len()];
    for i in 0..p_history.len() {
        let mass = copy * p_history[i];
        if history_oov[i] {
            pos_mass[i] = mass;
        } else {
            vocab_mass[history_idx[i]] = vocab_mass[history_idx[i]] + mass;
        }
    }
    FinalDist { vocab_mass, pos_mass }
}

/// One pointer-generator decoding step, recorded for inspection.
#[derive(Clone, Debug)]
pub struct GenStep {
    pub p_vocab: Vec<f64>,
    pub p_history: Vec<f64>,
    pub p_gen: f64,
    pub emitted: String,
}

/// Per-decoding-step record used by training instrumentation.
#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub forced: bool,
    /// Vocabulary index whose embedding fed the next input's word half.
    pub word_index: usize,
    /// History position whose OT row fed the next input's context half.
    pub ctx_position: usize,
    pub attn_argmax: usize,
}

/// Counters threaded through training forward passes.
#[derive(Debug, Default)]
pub struct Instrumentation {
    pub forced_steps: usize,
    pub free_steps: usize,
    pub record_steps: bool,
    pub steps: Vec<StepTrace>,
}

impl Instrumentation {
    pub fn recording() -> Self {
        Instrumentation { record_steps: true, ..Default::default() }
    }

    pub fn note(&mut self, trace: StepTrace) {
        if trace.forced {
            self.forced_steps += 1;
        } else {
            self.free_steps += 1;
        }
        if self.record_steps {
            self.steps.push(trace);
        }
    }
}
