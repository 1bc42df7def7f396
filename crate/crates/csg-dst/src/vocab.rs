//! Training vocabulary with special tokens, per-slot tokens and the word
//! embedding initializer.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SlotValue};
use crate::error::{CsgError, Result};
use crate::nn::{Real, Tensor};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["PAD", "UNK", "SOS", "EOS"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    index_to_word: Vec<String>,
    #[serde(skip)]
    word_to_index: HashMap<String, usize>,
    n_slots: usize,
}

impl Vocabulary {
    /// Specials, then one token per schema slot, then train-split words
    /// (utterances and gold values) with frequency >= `min_freq`, ordered
    /// by frequency descending then lexicographic. Masked plan words never
    /// enter the vocabulary.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Result<Self> {
        if corpus.train.is_empty() {
            return Err(CsgError::Config("cannot build vocabulary from empty train split".into()));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for d in &corpus.train {
            for t in &d.turns {
                let utter_tokens = t
                    .system
                    .iter()
                    .flat_map(|u| u.tokens.iter())
                    .chain(t.user.tokens.iter());
                for tok in utter_tokens {
                    *freq.entry(tok.clone()).or_default() += 1;
                }
                for v in t.gold_state.entries.values() {
                    if let SlotValue::Words(ws) = v {
                        for w in ws {
                            *freq.entry(w.clone()).or_default() += 1;
                        }
                    }
                }
            }
        }

        let mut index_to_word: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for slot in &corpus.schema {
            if !index_to_word.contains(slot) {
                index_to_word.push(slot.clone());
            }
        }
        let n_slots = index_to_word.len() - SPECIALS.len();

        let mut words: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(w, c)| {
                *c >= min_freq && !index_to_word.contains(w) && !corpus.masked_words.contains(w)
            })
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        index_to_word.extend(words.into_iter().map(|(w, _)| w));

        Ok(Self::from_words(index_to_word, n_slots))
    }

    fn from_words(index_to_word: Vec<String>, n_slots: usize) -> Self {
        let word_to_index =
            index_to_word.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { index_to_word, word_to_index, n_slots }
    }

    pub fn len(&self) -> usize {
        self.index_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_word.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_index.contains_key(word)
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.word_to_index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, index: usize) -> Result<&str> {
        self.index_to_word
            .get(index)
            .map(|s| s.as_str())
            .ok_or_else(|| CsgError::Range(format!("vocab index {index} out of range")))
    }

    /// Index of a schema slot's reserved token.
    pub fn slot_index(&self, slot: &str) -> Result<usize> {
        let idx = self.index_of(slot);
        if idx == UNK {
            return Err(CsgError::Config(format!("slot '{slot}' has no vocabulary token")));
        }
        Ok(idx)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_of(t)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Result<Vec<String>> {
        indices.iter().map(|i| self.word(*i).map(String::from)).collect()
    }

    pub fn words(&self) -> &[String] {
        &self.index_to_word
    }

    /// Number of reserved per-slot tokens (right after the specials).
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "words": self.index_to_word, "n_slots": self.n_slots })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let words: Vec<String> = serde_json::from_value(v["words"].clone())
            .map_err(|e| CsgError::Parse { path: "vocab".into(), msg: e.to_string() })?;
        let n_slots = v["n_slots"].as_u64().unwrap_or(0) as usize;
        Ok(Self::from_words(words, n_slots))
    }
}

/// Fresh embedding table: uniform in [-0.1, 0.1], PAD row frozen at zero.
pub fn init_embedding<F: Real>(vocab_size: usize, d_emb: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::uniform(vocab_size, d_emb, 0.1, &mut rng);
    t.row_mut(PAD).iter_mut().for_each(|v| *v = F::zero());
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyConfig};
    use crate::oov::{apply_oov_masking, select_oov_words};

    #[test]
    fn vocab_counts_specials_slots_and_words() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train.json"),
            r#"{"schema": ["area"], "dialogues": [{"id": "d", "turns": [{"user": "a b", "state": {"area": "a"}}]}]}"#,
        )
        .unwrap();
        let corpus =
            crate::corpus::load_corpus(dir.path(), crate::corpus::CorpusFormat::MultiwozLike)
                .unwrap();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        // 4 specials + 1 slot + {a, b}
        assert_eq!(vocab.len(), 7);
    }

    #[test]
    fn vocab_build_is_deterministic_and_excludes_masked_words() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 4).unwrap();
        let plan = select_oov_words(&corpus, 0.5, 1).unwrap();
        let masked = apply_oov_masking(&corpus, &plan).unwrap();
        let a = Vocabulary::build(&masked, 1).unwrap();
        let b = Vocabulary::build(&masked, 1).unwrap();
        assert_eq!(a.words(), b.words());
        for w in &plan.oov_words {
            assert!(!a.contains(w), "masked word {w} leaked into vocabulary");
        }
    }

    #[test]
    fn encode_decode_contracts() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 4).unwrap();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(vocab.encode(&["zzz-not-a-word".to_string()]), vec![UNK]);
        let sent: Vec<String> = vec!["v001".into(), "d001".into()];
        assert_eq!(vocab.decode(&vocab.encode(&sent)).unwrap(), sent);
        assert!(vocab.decode(&[vocab.len()]).is_err());
    }

    #[test]
    fn embedding_pad_row_is_zero_and_bounded() {
        let t: Tensor<f64> = init_embedding(10, 8, 3);
        assert!(t.row(PAD).iter().all(|v| *v == 0.0));
        assert!(t.data.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn vocab_size_invariant_to_dev_test_content() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 4).unwrap();
        let mut stripped = corpus.clone();
        stripped.dev.clear();
        stripped.test.clear();
        let a = Vocabulary::build(&corpus, 1).unwrap();
        let b = Vocabulary::build(&stripped, 1).unwrap();
        assert_eq!(a.len(), b.len());
    }
}
