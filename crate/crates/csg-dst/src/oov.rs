//! Controlled out-of-vocabulary injection: word selection over dev/test
//! slot values, UNK rewriting of the train split, negative-sample dropping
//! and value-type labeling.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SlotValue};
use crate::error::{CsgError, Result};
use crate::vocab::Vocabulary;

pub const UNK_TOKEN: &str = "UNK";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OovPlan {
    pub ratio: f64,
    pub seed: u64,
    pub oov_words: BTreeSet<String>,
}

/// KSV: all value words in vocabulary. USV-O: exactly one word out of
/// vocabulary. USV-M: two or more.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Ksv,
    UsvO,
    UsvM,
}

impl std::fmt::Display for ValueType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ValueType::Ksv => "KSV",
            ValueType::UsvO => "USV-O",
            ValueType::UsvM => "USV-M",
        })
    }
}

/// Distinct word types occurring in dev and test gold slot values.
pub fn value_word_types(corpus: &Corpus) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    for d in corpus.dev.iter().chain(&corpus.test) {
        for t in &d.turns {
            for v in t.gold_state.entries.values() {
                if let SlotValue::Words(ws) = v {
                    words.extend(ws.iter().cloned());
                }
            }
        }
    }
    words
}

/// Uniformly select round(ratio * |W|) word types from the dev/test slot
/// values. The ratio is over word types, not token occurrences.
pub fn select_oov_words(corpus: &Corpus, ratio: f64, seed: u64) -> Result<OovPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CsgError::Config(format!("oov ratio {ratio} outside [0, 1]")));
    }
    let pool: Vec<String> = value_word_types(corpus).into_iter().collect();
    let k = (ratio * pool.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = pool;
    shuffled.shuffle(&mut rng);
    Ok(OovPlan { ratio, seed, oov_words: shuffled.into_iter().take(k).collect() })
}

/// Rewrite every occurrence of each plan word in the train split (both
/// utterances and gold values) to the literal token `UNK`. Dev and test
/// come back verbatim; the returned corpus carries the plan words so
/// vocabulary construction excludes them.
pub fn apply_oov_masking(corpus: &Corpus, plan: &OovPlan) -> Result<Corpus> {
    let pool = value_word_types(corpus);
    for w in &plan.oov_words {
        if !pool.contains(w) {
            return Err(CsgError::Consistency(format!(
                "plan word '{w}' does not occur in any dev/test slot value of this corpus"
            )));
        }
    }
    let mask = |tok: &mut String| {
        if plan.oov_words.contains(tok.as_str()) {
            *tok = UNK_TOKEN.to_string();
        }
    };
    let mut out = corpus.clone();
    for d in &mut out.train {
        for t in &mut d.turns {
            if let Some(sys) = &mut t.system {
                sys.tokens.iter_mut().for_each(mask);
            }
            t.user.tokens.iter_mut().for_each(mask);
            for v in t.gold_state.entries.values_mut() {
                if let SlotValue::Words(ws) = v {
                    ws.iter_mut().for_each(mask);
                }
            }
        }
    }
    out.masked_words.extend(plan.oov_words.iter().cloned());
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DropCounts {
    pub turns_before: usize,
    pub turns_after: usize,
}

/// Deactivate every turn whose gold state is all NONE, in all splits.
/// Deactivated turns keep contributing their utterances to the flattened
/// history of later turns.
pub fn drop_negative_samples(corpus: &Corpus) -> (Corpus, DropCounts) {
    let mut out = corpus.clone();
    let mut before = 0;
    let mut after = 0;
    for split in [&mut out.train, &mut out.dev, &mut out.test] {
        for d in split {
            for t in &mut d.turns {
                if t.active {
                    before += 1;
                    if t.gold_state.is_all_none() {
                        t.active = false;
                    } else {
                        after += 1;
                    }
                }
            }
        }
    }
    (out, DropCounts { turns_before: before, turns_after: after })
}

/// Count value words missing from the vocabulary: 0 -> KSV, 1 -> USV-O,
/// >= 2 -> USV-M.
pub fn label_value_type(value: &[String], vocab: &Vocabulary) -> Result<ValueType> {
    if value.is_empty() {
        return Err(CsgError::Config("cannot label an empty value".into()));
    }
    Ok(match oov_word_count(value, vocab) {
        0 => ValueType::Ksv,
        1 => ValueType::UsvO,
        _ => ValueType::UsvM,
    })
}

pub fn oov_word_count(value: &[String], vocab: &Vocabulary) -> usize {
    value.iter().filter(|w| !vocab.contains(w)).count()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsTable {
    pub ratio: f64,
    pub slots: usize,
    pub distinct_values: usize,
    pub avg_value_length: f64,
    pub train_turns: usize,
    pub dev_turns: usize,
    pub test_turns: usize,
    /// Percentage of test gold values per type, in [0, 100].
    pub ksv_pct: f64,
    pub usv_o_pct: f64,
    pub usv_m_pct: f64,
    pub test_values: usize,
}

impl StatsTable {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let mut row = |k: &str, v: String| s.push_str(&format!("{k:<24}{v}\n"));
        row("oov ratio", format!("{:.2}", self.ratio));
        row("slots", self.slots.to_string());
        row("values", self.distinct_values.to_string());
        row("avg length per value", format!("{:.2}", self.avg_value_length));
        row("train turns", self.train_turns.to_string());
        row("dev turns", self.dev_turns.to_string());
        row("test turns", self.test_turns.to_string());
        row("KSV in test (%)", format!("{:.1}", self.ksv_pct));
        row("USV-O in test (%)", format!("{:.1}", self.usv_o_pct));
        row("USV-M in test (%)", format!("{:.1}", self.usv_m_pct));
        s
    }
}

/// Table-style statistics of a prepared corpus: split sizes plus the test
/// split's value-type percentages under the given vocabulary.
pub fn oov_stats(corpus: &Corpus, plan: &OovPlan, vocab: &Vocabulary) -> StatsTable {
    let mut distinct: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut total_len = 0usize;
    let mut n_values = 0usize;
    let mut counts = [0usize; 3];
    let mut test_values = 0usize;

    for (si, split) in [&corpus.train, &corpus.dev, &corpus.test].into_iter().enumerate() {
        for d in split {
            for t in d.active_turns() {
                for v in t.gold_state.entries.values() {
                    if let SlotValue::Words(ws) = v {
                        distinct.insert(ws.clone());
                        total_len += ws.len();
                        n_values += 1;
                        if si == 2 {
                            test_values += 1;
                            match label_value_type(ws, vocab).expect("non-empty value") {
                                ValueType::Ksv => counts[0] += 1,
                                ValueType::UsvO => counts[1] += 1,
                                ValueType::UsvM => counts[2] += 1,
                            }
                        }
                    }
                }
            }
        }
    }
    let pct = |c: usize| {
        if test_values == 0 {
            0.0
        } else {
            100.0 * c as f64 / test_values as f64
        }
    };
    StatsTable {
        ratio: plan.ratio,
        slots: corpus.schema.len(),
        distinct_values: distinct.len(),
        avg_value_length: if n_values == 0 { 0.0 } else { total_len as f64 / n_values as f64 },
        train_turns: corpus.active_turn_count(crate::corpus::SplitName::Train),
        dev_turns: corpus.active_turn_count(crate::corpus::SplitName::Dev),
        test_turns: corpus.active_turn_count(crate::corpus::SplitName::Test),
        ksv_pct: pct(counts[0]),
        usv_o_pct: pct(counts[1]),
        usv_m_pct: pct(counts[2]),
        test_values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyConfig};

    fn toy() -> Corpus {
        generate_toy_corpus(&ToyConfig::default(), 42).unwrap()
    }

    #[test]
    fn select_zero_and_full_ratio() {
        let corpus = toy();
        let empty = select_oov_words(&corpus, 0.0, 1).unwrap();
        assert!(empty.oov_words.is_empty());
        let full = select_oov_words(&corpus, 1.0, 1).unwrap();
        assert_eq!(full.oov_words, value_word_types(&corpus));
    }

    #[test]
    fn select_ratio_size_matches_round_rule() {
        let corpus = toy();
        let w = value_word_types(&corpus);
        let plan = select_oov_words(&corpus, 0.7, 3).unwrap();
        assert_eq!(plan.oov_words.len(), (0.7 * w.len() as f64).round() as usize);
        assert!(plan.oov_words.iter().all(|x| w.contains(x)));
    }

    #[test]
    fn masking_empty_plan_is_identity() {
        let corpus = toy();
        let plan = OovPlan { ratio: 0.0, seed: 0, oov_words: BTreeSet::new() };
        let masked = apply_oov_masking(&corpus, &plan).unwrap();
        assert_eq!(
            serde_json::to_string(&corpus).unwrap(),
            serde_json::to_string(&masked).unwrap()
        );
    }

    #[test]
    fn masking_rewrites_train_tokens() {
        let corpus = toy();
        let plan = select_oov_words(&corpus, 0.5, 7).unwrap();
        let masked = apply_oov_masking(&corpus, &plan).unwrap();
        // exhaustive scan: no plan word anywhere in train
        for d in &masked.train {
            for t in &d.turns {
                let utter = t.system.iter().flat_map(|u| u.tokens.iter()).chain(&t.user.tokens);
                for tok in utter {
                    assert!(!plan.oov_words.contains(tok));
                }
                for v in t.gold_state.entries.values() {
                    if let SlotValue::Words(ws) = v {
                        assert!(ws.iter().all(|w| !plan.oov_words.contains(w)));
                    }
                }
            }
        }
    }

    #[test]
    fn masking_is_idempotent_and_leaves_dev_test_untouched() {
        let corpus = toy();
        let plan = select_oov_words(&corpus, 0.6, 2).unwrap();
        let once = apply_oov_masking(&corpus, &plan).unwrap();
        let twice = apply_oov_masking(&once, &plan).unwrap();
        assert_eq!(serde_json::to_string(&once).unwrap(), serde_json::to_string(&twice).unwrap());
        assert_eq!(serde_json::to_string(&corpus.dev).unwrap(), serde_json::to_string(&once.dev).unwrap());
        assert_eq!(serde_json::to_string(&corpus.test).unwrap(), serde_json::to_string(&once.test).unwrap());
    }

    #[test]
    fn masking_rejects_foreign_plan_word() {
        let corpus = toy();
        let mut words = BTreeSet::new();
        words.insert("not-a-value-word".to_string());
        let plan = OovPlan { ratio: 0.1, seed: 0, oov_words: words };
        assert!(matches!(apply_oov_masking(&corpus, &plan), Err(CsgError::Consistency(_))));
    }

    #[test]
    fn drop_negatives_matches_brute_force_filter() {
        let corpus = toy();
        let (dropped, counts) = drop_negative_samples(&corpus);
        let expected: usize = [&corpus.train, &corpus.dev, &corpus.test]
            .into_iter()
            .flatten()
            .flat_map(|d| &d.turns)
            .filter(|t| !t.gold_state.is_all_none())
            .count();
        assert_eq!(counts.turns_after, expected);
        let active: usize = [&dropped.train, &dropped.dev, &dropped.test]
            .into_iter()
            .flatten()
            .map(|d| d.active_turns().count())
            .sum();
        assert_eq!(active, expected);
        // history shape untouched
        assert_eq!(dropped.train[0].turns.len(), corpus.train[0].turns.len());
    }

    #[test]
    fn drop_negatives_identity_when_all_positive() {
        let mut corpus = toy();
        for split in [&mut corpus.train, &mut corpus.dev, &mut corpus.test] {
            for d in split {
                d.turns.retain(|t| !t.gold_state.is_all_none());
            }
        }
        let (_, counts) = drop_negative_samples(&corpus);
        assert_eq!(counts.turns_before, counts.turns_after);
    }

    #[test]
    fn value_type_labels_match_brute_force() {
        let corpus = toy();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let words = value_word_types(&corpus);
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(5);
        let pool: Vec<&String> = words.iter().collect();
        for _ in 0..100 {
            let len = rand::Rng::gen_range(&mut rng, 1..=4usize);
            let value: Vec<String> = (0..len)
                .map(|_| {
                    if rand::Rng::gen_bool(&mut rng, 0.4) {
                        format!("oov-{}", rand::Rng::gen_range(&mut rng, 0..50u32))
                    } else {
                        (*pool[rand::Rng::gen_range(&mut rng, 0..pool.len())]).clone()
                    }
                })
                .collect();
            let k = value.iter().filter(|w| !vocab.contains(w)).count();
            let expected = match k {
                0 => ValueType::Ksv,
                1 => ValueType::UsvO,
                _ => ValueType::UsvM,
            };
            assert_eq!(label_value_type(&value, &vocab).unwrap(), expected);
        }
        assert!(label_value_type(&[], &vocab).is_err());
    }

    #[test]
    fn ksv_monotone_under_nested_plans() {
        let corpus = toy();
        let small = select_oov_words(&corpus, 0.3, 9).unwrap();
        let mut big = select_oov_words(&corpus, 0.3, 9).unwrap();
        // grow the plan by adding more words; selection with same seed is a
        // prefix of the shuffled pool so the 0.6 plan nests the 0.3 plan
        let large = select_oov_words(&corpus, 0.6, 9).unwrap();
        assert!(small.oov_words.is_subset(&large.oov_words));
        big.oov_words = large.oov_words.clone();
        big.ratio = 0.6;

        let vocab_small =
            Vocabulary::build(&apply_oov_masking(&corpus, &small).unwrap(), 1).unwrap();
        let vocab_big = Vocabulary::build(&apply_oov_masking(&corpus, &big).unwrap(), 1).unwrap();
        for d in &corpus.test {
            for t in &d.turns {
                for v in t.gold_state.entries.values() {
                    if let SlotValue::Words(ws) = v {
                        if label_value_type(ws, &vocab_big).unwrap() == ValueType::Ksv {
                            assert_eq!(label_value_type(ws, &vocab_small).unwrap(), ValueType::Ksv);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn stats_percentages_partition() {
        let corpus = toy();
        for ratio in [0.0, 0.5, 1.0] {
            let plan = select_oov_words(&corpus, ratio, 3).unwrap();
            let masked = apply_oov_masking(&corpus, &plan).unwrap();
            let vocab = Vocabulary::build(&masked, 1).unwrap();
            let stats = oov_stats(&masked, &plan, &vocab);
            let total = stats.ksv_pct + stats.usv_o_pct + stats.usv_m_pct;
            assert!((total - 100.0).abs() < 1e-9, "percentages sum to {total}");
            if ratio == 0.0 {
                assert_eq!(stats.usv_o_pct, 0.0);
                assert_eq!(stats.usv_m_pct, 0.0);
            }
        }
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
