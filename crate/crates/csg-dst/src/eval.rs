//! Metrics: joint/slot accuracy, micro slot F1, and breakdowns by value
//! type and by number of out-of-vocabulary value words.
//!
//! Value comparison is on normalized token lists (load-time tokenization),
//! not raw strings. DONTCARE counts as a non-NONE prediction commitment for
//! slot F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, SlotValue};
use crate::error::{CsgError, Result};
use crate::oov::{label_value_type, oov_word_count, ValueType};
use crate::vocab::Vocabulary;

/// One evaluated turn: predicted and gold belief states over the schema.
#[derive(Clone, Debug)]
pub struct TurnPair {
    pub predicted: BeliefState,
    pub gold: BeliefState,
}

fn check_lengths(predictions: &[BeliefState], gold: &[BeliefState]) -> Result<()> {
    if predictions.len() != gold.len() {
        return Err(CsgError::Eval(format!(
            "turn-count mismatch: {} predictions vs {} gold states",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Err(CsgError::Eval("cannot evaluate zero turns".into()));
    }
    Ok(())
}

fn slot_cell<'a>(state: &'a BeliefState, slot: &str) -> Option<&'a SlotValue> {
    state.get(slot)
}

/// Fraction of turns whose predicted state equals gold exactly over all
/// schema slots (NONE slots must be predicted NONE).
pub fn joint_accuracy(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
) -> Result<f64> {
    check_lengths(predictions, gold)?;
    let correct = predictions
        .iter()
        .zip(gold)
        .filter(|(p, g)| schema.iter().all(|s| slot_cell(p, s) == slot_cell(g, s)))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Fraction of (turn, slot) cells where the predicted value (including
/// NONE/DONTCARE) equals gold.
pub fn slot_accuracy(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
) -> Result<f64> {
    check_lengths(predictions, gold)?;
    if schema.is_empty() {
        return Err(CsgError::Eval("cannot evaluate an empty schema".into()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in predictions.iter().zip(gold) {
        for s in schema {
            total += 1;
            if slot_cell(p, s) == slot_cell(g, s) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Micro-F1 over non-NONE (turn, slot, value) triples.
pub fn slot_f1(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
) -> Result<f64> {
    check_lengths(predictions, gold)?;
    let mut predicted = 0usize;
    let mut gold_n = 0usize;
    let mut correct = 0usize;
    for (p, g) in predictions.iter().zip(gold) {
        for s in schema {
            let pv = slot_cell(p, s);
            let gv = slot_cell(g, s);
            if pv.is_some() {
                predicted += 1;
            }
            if gv.is_some() {
                gold_n += 1;
            }
            if pv.is_some() && pv == gv {
                correct += 1;
            }
        }
    }
    if predicted == 0 && gold_n == 0 {
        return Ok(0.0);
    }
    let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let recall = if gold_n == 0 { 0.0 } else { correct as f64 / gold_n as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Accuracy and size of one breakdown cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Per-value-type exact-match accuracy over gold non-NONE values. Only
/// pointable values (gold `Words`) are bucketed; DONTCARE has no words to
/// type. Bucket proportions are part of the result.
pub fn accuracy_by_value_type(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
    vocab: &Vocabulary,
) -> Result<BTreeMap<ValueType, Cell>> {
    check_lengths(predictions, gold)?;
    let mut cells: BTreeMap<ValueType, Cell> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        for s in schema {
            let Some(SlotValue::Words(ws)) = slot_cell(g, s) else { continue };
            let ty = label_value_type(ws, vocab)?;
            let cell = cells.entry(ty).or_default();
            cell.total += 1;
            if slot_cell(p, s) == slot_cell(g, s) {
                cell.correct += 1;
            }
        }
    }
    Ok(cells)
}

/// Cap applied to the OOV-word-count buckets: 0, 1, 2, 3, >=4.
pub const OOV_COUNT_CAP: usize = 4;

/// Exact-match accuracy of gold values bucketed by how many of their words
/// are out of the training vocabulary.
pub fn accuracy_by_oov_count(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
    vocab: &Vocabulary,
) -> Result<BTreeMap<usize, Cell>> {
    check_lengths(predictions, gold)?;
    let mut cells: BTreeMap<usize, Cell> = BTreeMap::new();
    for (p, g) in predictions.iter().zip(gold) {
        for s in schema {
            let Some(SlotValue::Words(ws)) = slot_cell(g, s) else { continue };
            let bucket = oov_word_count(ws, vocab).min(OOV_COUNT_CAP);
            let cell = cells.entry(bucket).or_default();
            cell.total += 1;
            if slot_cell(p, s) == slot_cell(g, s) {
                cell.correct += 1;
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypeCell {
    pub accuracy: f64,
    pub proportion: f64,
    pub correct: usize,
    pub total: usize,
}

/// The full metric set for one evaluated split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub joint_accuracy: f64,
    pub slot_accuracy: f64,
    pub slot_f1: f64,
    pub by_value_type: BTreeMap<String, TypeCell>,
    pub by_oov_count: BTreeMap<String, TypeCell>,
    pub counts: Counts,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Counts {
    pub turns: usize,
    pub slots: usize,
    pub gold_values: usize,
}

fn to_type_cells<K: std::fmt::Display>(cells: &BTreeMap<K, Cell>) -> BTreeMap<String, TypeCell> {
    let grand: usize = cells.values().map(|c| c.total).sum();
    cells
        .iter()
        .map(|(k, c)| {
            let tc = TypeCell {
                accuracy: c.accuracy(),
                proportion: if grand == 0 { 0.0 } else { c.total as f64 / grand as f64 },
                correct: c.correct,
                total: c.total,
            };
            (k.to_string(), tc)
        })
        .collect()
}

pub fn evaluate(
    schema: &[String],
    predictions: &[BeliefState],
    gold: &[BeliefState],
    vocab: &Vocabulary,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let by_type = accuracy_by_value_type(schema, predictions, gold, vocab)?;
    let by_oov = accuracy_by_oov_count(schema, predictions, gold, vocab)?;
    let gold_values: usize = by_type.values().map(|c| c.total).sum();
    Ok(EvalReport {
        joint_accuracy: joint_accuracy(schema, predictions, gold)?,
        slot_accuracy: slot_accuracy(schema, predictions, gold)?,
        slot_f1: slot_f1(schema, predictions, gold)?,
        by_value_type: to_type_cells(&by_type),
        by_oov_count: to_type_cells(&by_oov),
        counts: Counts { turns: predictions.len(), slots: schema.len(), gold_values },
        config,
    })
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("joint accuracy   {:>8.4}\n", self.joint_accuracy));
        s.push_str(&format!("slot accuracy    {:>8.4}\n", self.slot_accuracy));
        s.push_str(&format!("slot F1          {:>8.4}\n", self.slot_f1));
        s.push_str(&format!(
            "turns {}  slots {}  gold values {}\n",
            self.counts.turns, self.counts.slots, self.counts.gold_values
        ));
        if !self.by_value_type.is_empty() {
            s.push_str("by value type:\n");
            for (k, c) in &self.by_value_type {
                s.push_str(&format!(
                    "  {k:<8} acc {:>7.4}  share {:>6.1}%  ({}/{})\n",
                    c.accuracy,
                    100.0 * c.proportion,
                    c.correct,
                    c.total
                ));
            }
        }
        if !self.by_oov_count.is_empty() {
            s.push_str("by OOV word count:\n");
            for (k, c) in &self.by_oov_count {
                let label = if k == &OOV_COUNT_CAP.to_string() { format!(">={k}") } else { k.clone() };
                s.push_str(&format!(
                    "  {label:<8} acc {:>7.4}  share {:>6.1}%  ({}/{})\n",
                    c.accuracy,
                    100.0 * c.proportion,
                    c.correct,
                    c.total
                ));
            }
        }
        s
    }
}

/// One row of the OOV-ratio sweep table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub joint_accuracy: f64,
    pub slot_accuracy: f64,
    pub slot_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Ratio-indexed joint-accuracy table, sorted ascending by ratio.
pub fn sweep_report(entries: &[(f64, EvalReport)]) -> Result<SweepReport> {
    let mut rows: Vec<SweepRow> = entries
        .iter()
        .map(|(ratio, r)| SweepRow {
            ratio: *ratio,
            joint_accuracy: r.joint_accuracy,
            slot_accuracy: r.slot_accuracy,
            slot_f1: r.slot_f1,
        })
        .collect();
    rows.sort_by(|a, b| a.ratio.partial_cmp(&b.ratio).unwrap());
    for w in rows.windows(2) {
        if w[0].ratio == w[1].ratio {
            return Err(CsgError::Eval(format!("duplicate sweep ratio {}", w[0].ratio)));
        }
    }
    Ok(SweepReport { rows })
}

impl SweepReport {
    pub fn render_text(&self) -> String {
        let mut s = String::from("ratio    joint    slot     f1\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<8.2} {:<8.4} {:<8.4} {:<8.4}\n",
                r.ratio, r.joint_accuracy, r.slot_accuracy, r.slot_f1
            ));
        }
        s
    }
}
