//! Dialogue data model, JSON loaders and the synthetic toy-corpus
//! generator used for desk-scale experiments.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CsgError, Result};

pub const NONE_VALUE: &str = "none";
pub const DONTCARE_VALUE: &str = "dontcare";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

/// A tracked slot value. Slots absent from a [`BeliefState`] are NONE.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotValue {
    Dontcare,
    Words(Vec<String>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefState {
    pub entries: std::collections::BTreeMap<String, SlotValue>,
}

impl BeliefState {
    pub fn get(&self, slot: &str) -> Option<&SlotValue> {
        self.entries.get(slot)
    }

    pub fn is_all_none(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set(&mut self, slot: &str, value: SlotValue) {
        self.entries.insert(slot.to_string(), value);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub turn_index: usize,
    pub system: Option<Utterance>,
    pub user: Utterance,
    pub gold_state: BeliefState,
    /// Cleared by negative-sample dropping: inactive turns no longer act as
    /// supervision or evaluation samples but still contribute history.
    #[serde(default = "default_true")]
    pub active: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    pub fn active_turns(&self) -> impl Iterator<Item = &DialogueTurn> {
        self.turns.iter().filter(|t| t.active)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub schema: Vec<String>,
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub provenance: String,
    /// Words UNK-rewritten out of the train split; vocabulary construction
    /// must not resurrect them.
    #[serde(default)]
    pub masked_words: BTreeSet<String>,
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> &[Dialogue] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn active_turn_count(&self, name: SplitName) -> usize {
        self.split(name).iter().map(|d| d.active_turns().count()).sum()
    }
}

/// Where a flattened-history token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    pub turn: usize,
    pub speaker: Speaker,
    pub offset: usize,
}

/// Load-time token rule: lowercase, whitespace split, punctuation other
/// than '-' stripped. Fixed here so gold-span search stays well defined.
/// The literal mask token "UNK" survives verbatim so a masked corpus
/// written back to disk re-parses to itself.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            if w == crate::oov::UNK_TOKEN {
                return Some(w.to_string());
            }
            let t: String = w
                .chars()
                .flat_map(|c| c.to_lowercase())
                .filter(|c| !c.is_ascii_punctuation() || *c == '-')
                .collect();
            if t.is_empty() {
                None
            } else {
                Some(t)
            }
        })
        .collect()
}

/// Concatenation of all system and user tokens from turn 0 through
/// `turn_index` (system before user within a turn), with an origin map.
pub fn flatten_history(dialogue: &Dialogue, turn_index: usize) -> Result<(Vec<String>, Vec<Origin>)> {
    if turn_index >= dialogue.turns.len() {
        return Err(CsgError::Range(format!(
            "turn_index {turn_index} out of range for dialogue '{}' with {} turns",
            dialogue.id,
            dialogue.turns.len()
        )));
    }
    let mut tokens = Vec::new();
    let mut origins = Vec::new();
    for turn in &dialogue.turns[..=turn_index] {
        if let Some(sys) = &turn.system {
            for (off, tok) in sys.tokens.iter().enumerate() {
                tokens.push(tok.clone());
                origins.push(Origin { turn: turn.turn_index, speaker: Speaker::System, offset: off });
            }
        }
        for (off, tok) in turn.user.tokens.iter().enumerate() {
            tokens.push(tok.clone());
            origins.push(Origin { turn: turn.turn_index, speaker: Speaker::User, offset: off });
        }
    }
    Ok((tokens, origins))
}

// ---------------------------------------------------------------------------
// JSON loading
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    MultiwozLike,
    Dstc2Like,
}

impl std::str::FromStr for CorpusFormat {
    type Err = CsgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiwoz_like" => Ok(CorpusFormat::MultiwozLike),
            "dstc2_like" => Ok(CorpusFormat::Dstc2Like),
            other => Err(CsgError::Config(format!("unknown corpus format '{other}'"))),
        }
    }
}

#[derive(Deserialize)]
struct CorpusFile {
    schema: Vec<String>,
    dialogues: Vec<DialogueFile>,
}

#[derive(Deserialize)]
struct DialogueFile {
    id: String,
    turns: Vec<TurnFile>,
}

#[derive(Deserialize)]
struct TurnFile {
    #[serde(default)]
    system: String,
    user: String,
    // DSTC2-style exports label the state "goal-labels".
    #[serde(default)]
    state: Option<std::collections::BTreeMap<String, String>>,
    #[serde(default, rename = "goal-labels")]
    goal_labels: Option<std::collections::BTreeMap<String, String>>,
}

fn parse_split(path: &Path, schema_out: &mut Option<Vec<String>>) -> Result<Vec<Dialogue>> {
    let text = std::fs::read_to_string(path)?;
    let file: CorpusFile = serde_json::from_str(&text).map_err(|e| CsgError::Parse {
        path: path.display().to_string(),
        msg: format!("{e} (line {}, column {})", e.line(), e.column()),
    })?;
    match schema_out.as_ref() {
        Some(existing) => {
            if *existing != file.schema {
                return Err(CsgError::Parse {
                    path: path.display().to_string(),
                    msg: "schema differs between split files".into(),
                });
            }
        }
        None => *schema_out = Some(file.schema.clone()),
    }
    let schema = schema_out.as_ref().unwrap();

    let mut dialogues = Vec::with_capacity(file.dialogues.len());
    for d in file.dialogues {
        let mut turns = Vec::with_capacity(d.turns.len());
        for (i, t) in d.turns.into_iter().enumerate() {
            let sys_tokens = tokenize(&t.system);
            let system = if sys_tokens.is_empty() {
                None
            } else {
                Some(Utterance { speaker: Speaker::System, tokens: sys_tokens })
            };
            let user = Utterance { speaker: Speaker::User, tokens: tokenize(&t.user) };
            let mut gold_state = BeliefState::default();
            let raw_state = t.state.or(t.goal_labels).unwrap_or_default();
            for (slot, value) in raw_state {
                if !schema.contains(&slot) {
                    return Err(CsgError::Schema { slot });
                }
                let value = value.trim();
                let lowered = value.to_lowercase();
                if lowered == NONE_VALUE || lowered.is_empty() {
                    continue;
                }
                if lowered == DONTCARE_VALUE {
                    gold_state.set(&slot, SlotValue::Dontcare);
                } else {
                    // tokenize handles case folding itself and keeps the
                    // mask token "UNK" intact
                    gold_state.set(&slot, SlotValue::Words(tokenize(value)));
                }
            }
            turns.push(DialogueTurn { turn_index: i, system, user, gold_state, active: true });
        }
        dialogues.push(Dialogue { id: d.id, turns });
    }
    Ok(dialogues)
}

/// Load a corpus from `path`. A directory is expected to hold
/// `train.json` plus optional `dev.json`/`test.json`; a single file loads
/// as the train split. Both formats share the normalized schema; the
/// DSTC2-like variant additionally accepts `goal-labels` as the state key.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let mut schema = None;
    let (train, dev, test) = if path.is_dir() {
        let load = |name: &str, schema: &mut Option<Vec<String>>| -> Result<Vec<Dialogue>> {
            let p = path.join(name);
            if p.exists() {
                parse_split(&p, schema)
            } else {
                Ok(Vec::new())
            }
        };
        let train = parse_split(&path.join("train.json"), &mut schema)?;
        let dev = load("dev.json", &mut schema)?;
        let test = load("test.json", &mut schema)?;
        (train, dev, test)
    } else {
        (parse_split(path, &mut schema)?, Vec::new(), Vec::new())
    };
    Ok(Corpus {
        schema: schema.unwrap_or_default(),
        train,
        dev,
        test,
        provenance: format!(
            "{} ({})",
            path.display(),
            match format {
                CorpusFormat::MultiwozLike => "multiwoz_like",
                CorpusFormat::Dstc2Like => "dstc2_like",
            }
        ),
        masked_words: BTreeSet::new(),
    })
}

/// Write one split back out in the normalized JSON schema.
pub fn write_split_json(schema: &[String], dialogues: &[Dialogue]) -> serde_json::Value {
    let dlgs: Vec<serde_json::Value> = dialogues
        .iter()
        .map(|d| {
            let turns: Vec<serde_json::Value> = d
                .turns
                .iter()
                .map(|t| {
                    let mut state = serde_json::Map::new();
                    for (slot, value) in &t.gold_state.entries {
                        let v = match value {
                            SlotValue::Dontcare => DONTCARE_VALUE.to_string(),
                            SlotValue::Words(ws) => ws.join(" "),
                        };
                        state.insert(slot.clone(), serde_json::Value::String(v));
                    }
                    serde_json::json!({
                        "system": t.system.as_ref().map(|u| u.tokens.join(" ")).unwrap_or_default(),
                        "user": t.user.tokens.join(" "),
                        "state": state,
                        "active": t.active,
                    })
                })
                .collect();
            serde_json::json!({ "id": d.id, "turns": turns })
        })
        .collect();
    serde_json::json!({ "schema": schema, "dialogues": dlgs })
}

// ---------------------------------------------------------------------------
// Toy corpus generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_dialogues: usize,
    pub n_slots: usize,
    /// Inclusive bounds on value word counts, within [1, 5].
    pub value_len_range: (usize, usize),
    pub vocab_size: usize,
    /// Inclusive bounds on distractor runs around each value mention.
    pub distractor_len_range: (usize, usize),
    pub multiword_value_fraction: f64,
    /// Probability that a distractor run also carries a short sequence of
    /// value-pool words mentioned in passing (never part of the gold state).
    pub decoy_value_fraction: f64,
    /// Inclusive bounds on turns per dialogue.
    pub n_turns_range: (usize, usize),
    /// Probability that a turn restates an already-mentioned slot with a
    /// fresh value instead of introducing a random slot.
    pub restate_fraction: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_dialogues: 200,
            n_slots: 3,
            value_len_range: (1, 3),
            vocab_size: 120,
            distractor_len_range: (1, 3),
            multiword_value_fraction: 0.5,
            decoy_value_fraction: 0.0,
            n_turns_range: (2, 4),
            restate_fraction: 0.35,
        }
    }
}

const SLOT_NAME_POOL: [&str; 7] = ["area", "food", "pricerange", "name", "stars", "type", "day"];
const MAX_UTTERANCE_LEN: usize = 30;
const DONTCARE_FRACTION: f64 = 0.08;

fn slot_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            if i < SLOT_NAME_POOL.len() {
                SLOT_NAME_POOL[i].to_string()
            } else {
                format!("slot{i}")
            }
        })
        .collect()
}

/// Deterministic synthetic corpus: every active slot's gold value occurs
/// verbatim as a contiguous span in the user utterance that introduced it,
/// preceded by the slot's cue word and surrounded by distractor tokens.
pub fn generate_toy_corpus(config: &ToyConfig, seed: u64) -> Result<Corpus> {
    if config.vocab_size < 20 {
        return Err(CsgError::Config("toy vocab_size must be >= 20".into()));
    }
    let (vlo, vhi) = config.value_len_range;
    if vlo < 1 || vhi > 5 || vlo > vhi {
        return Err(CsgError::Config(format!(
            "value_len_range ({vlo}, {vhi}) must sit inside [1, 5]"
        )));
    }
    let (dlo, dhi) = config.distractor_len_range;
    if dlo > dhi {
        return Err(CsgError::Config("distractor_len_range inverted".into()));
    }
    if !(0.0..=1.0).contains(&config.decoy_value_fraction) {
        return Err(CsgError::Config("decoy_value_fraction must lie in [0, 1]".into()));
    }
    let decoy_budget = if config.decoy_value_fraction > 0.0 { 4 } else { 0 };
    let (tlo, thi) = config.n_turns_range;
    if tlo < 1 || tlo > thi {
        return Err(CsgError::Config(format!("n_turns_range ({tlo}, {thi}) invalid")));
    }
    if !(0.0..=1.0).contains(&config.restate_fraction) {
        return Err(CsgError::Config("restate_fraction must lie in [0, 1]".into()));
    }
    if vhi + 2 * dhi + 1 + decoy_budget > MAX_UTTERANCE_LEN {
        return Err(CsgError::Config(format!(
            "value + distractor budget exceeds the {MAX_UTTERANCE_LEN}-token utterance limit"
        )));
    }

    let schema = slot_names(config.n_slots);
    let n_value_words = config.vocab_size / 2;
    let n_distractors = config.vocab_size - n_value_words;
    let value_pool: Vec<String> = (0..n_value_words).map(|i| format!("v{i:03}")).collect();
    let distractor_pool: Vec<String> = (0..n_distractors).map(|i| format!("d{i:03}")).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(config.n_dialogues);

    for di in 0..config.n_dialogues {
        let n_turns = rng.gen_range(tlo..=thi);
        // One slot mention per turn; a slot may be restated with a fresh
        // value, making the most-recent occurrence the gold span.
        let mut mentioned: Vec<usize> = Vec::new();
        let mut state = BeliefState::default();
        let mut turns = Vec::with_capacity(n_turns);
        for ti in 0..n_turns {
            let slot_idx = if !mentioned.is_empty() && rng.gen_bool(config.restate_fraction) {
                *mentioned.choose(&mut rng).unwrap()
            } else {
                rng.gen_range(0..config.n_slots)
            };
            if !mentioned.contains(&slot_idx) {
                mentioned.push(slot_idx);
            }
            let slot = &schema[slot_idx];

            let mut user_tokens: Vec<String> = Vec::new();
            // A passing mention of value-like words that belongs to no slot;
            // it reads just like a value run but must not be extracted.
            let decoy: Vec<String> = if rng.gen_bool(config.decoy_value_fraction) {
                (0..rng.gen_range(2..=4usize))
                    .map(|_| value_pool.choose(&mut rng).unwrap().clone())
                    .collect()
            } else {
                Vec::new()
            };
            let decoy_leads = rng.gen_bool(0.5);
            if decoy_leads {
                user_tokens.extend(decoy.iter().cloned());
            }
            for _ in 0..rng.gen_range(dlo..=dhi) {
                user_tokens.push(distractor_pool.choose(&mut rng).unwrap().clone());
            }
            user_tokens.push(slot.clone());
            if rng.gen_bool(DONTCARE_FRACTION) {
                user_tokens.push(DONTCARE_VALUE.to_string());
                state.set(slot, SlotValue::Dontcare);
            } else {
                let len = if rng.gen_bool(config.multiword_value_fraction) {
                    rng.gen_range(vlo.max(2)..=vhi.max(2))
                } else {
                    vlo
                };
                let value: Vec<String> = (0..len)
                    .map(|_| value_pool.choose(&mut rng).unwrap().clone())
                    .collect();
                user_tokens.extend(value.iter().cloned());
                state.set(slot, SlotValue::Words(value));
            }
            for _ in 0..rng.gen_range(dlo..=dhi) {
                user_tokens.push(distractor_pool.choose(&mut rng).unwrap().clone());
            }
            if !decoy_leads {
                user_tokens.extend(decoy.iter().cloned());
            }

            let system = if ti == 0 {
                None
            } else {
                Some(Utterance {
                    speaker: Speaker::System,
                    tokens: vec![distractor_pool.choose(&mut rng).unwrap().clone()],
                })
            };
            turns.push(DialogueTurn {
                turn_index: ti,
                system,
                user: Utterance { speaker: Speaker::User, tokens: user_tokens },
                gold_state: state.clone(),
                active: true,
            });
        }
        dialogues.push(Dialogue { id: format!("toy-{di:05}"), turns });
    }

    // 70/15/15 split by dialogue position.
    let n = dialogues.len();
    let train_end = (n * 70) / 100;
    let dev_end = train_end + (n * 15) / 100;
    let test = dialogues.split_off(dev_end.min(n));
    let dev = dialogues.split_off(train_end.min(dialogues.len()));
    Ok(Corpus {
        schema,
        train: dialogues,
        dev,
        test,
        provenance: format!("toy(seed={seed})"),
        masked_words: BTreeSet::new(),
    })
}

/// Keep ceil(fraction * N) uniformly chosen train dialogues; dev and test
/// are untouched.
pub fn subsample_training(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CsgError::Config(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let n = corpus.train.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    if keep == 0 {
        return Err(CsgError::Config("subsampled train split would be empty".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut chosen: Vec<usize> = idx.into_iter().take(keep).collect();
    chosen.sort_unstable();
    let mut out = corpus.clone();
    out.train = chosen.into_iter().map(|i| corpus.train[i].clone()).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dialogue() -> Dialogue {
        Dialogue {
            id: "d0".into(),
            turns: vec![
                DialogueTurn {
                    turn_index: 0,
                    system: None,
                    user: Utterance { speaker: Speaker::User, tokens: vec!["a".into(), "b".into()] },
                    gold_state: BeliefState::default(),
                    active: true,
                },
                DialogueTurn {
                    turn_index: 1,
                    system: Some(Utterance { speaker: Speaker::System, tokens: vec!["c".into()] }),
                    user: Utterance { speaker: Speaker::User, tokens: vec!["d".into()] },
                    gold_state: BeliefState::default(),
                    active: true,
                },
            ],
        }
    }

    #[test]
    fn flatten_single_utterance() {
        let d = Dialogue {
            id: "x".into(),
            turns: vec![DialogueTurn {
                turn_index: 0,
                system: None,
                user: Utterance { speaker: Speaker::User, tokens: vec!["hi".into()] },
                gold_state: BeliefState::default(),
                active: true,
            }],
        };
        let (toks, origins) = flatten_history(&d, 0).unwrap();
        assert_eq!(toks, vec!["hi"]);
        assert_eq!(origins.len(), 1);
    }

    #[test]
    fn flatten_concatenation_order() {
        let (toks, _) = flatten_history(&fixture_dialogue(), 1).unwrap();
        assert_eq!(toks, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn flatten_out_of_range() {
        assert!(matches!(flatten_history(&fixture_dialogue(), 2), Err(CsgError::Range(_))));
    }

    #[test]
    fn flatten_is_prefix_of_next_turn() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 11).unwrap();
        for d in corpus.train.iter().take(20) {
            for t in 1..d.turns.len() {
                let (prev, _) = flatten_history(d, t - 1).unwrap();
                let (cur, _) = flatten_history(d, t).unwrap();
                assert_eq!(&cur[..prev.len()], &prev[..]);
            }
        }
    }

    #[test]
    fn origin_map_recovers_tokens() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 5).unwrap();
        let d = &corpus.train[0];
        let t = d.turns.len() - 1;
        let (toks, origins) = flatten_history(d, t).unwrap();
        assert_eq!(toks.len(), origins.len());
        for (tok, o) in toks.iter().zip(&origins) {
            let turn = &d.turns[o.turn];
            let src = match o.speaker {
                Speaker::System => &turn.system.as_ref().unwrap().tokens,
                Speaker::User => &turn.user.tokens,
            };
            assert_eq!(&src[o.offset], tok);
        }
    }

    #[test]
    fn flatten_length_matches_token_count_sum() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 23).unwrap();
        let d = &corpus.train[1];
        let t = d.turns.len() - 1;
        let (toks, _) = flatten_history(d, t).unwrap();
        let expected: usize = d.turns[..=t]
            .iter()
            .map(|t| t.system.as_ref().map_or(0, |s| s.tokens.len()) + t.user.tokens.len())
            .sum();
        assert_eq!(toks.len(), expected);
    }

    #[test]
    fn toy_corpus_is_deterministic() {
        let cfg = ToyConfig::default();
        let a = generate_toy_corpus(&cfg, 7).unwrap();
        let b = generate_toy_corpus(&cfg, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn toy_multiword_fraction_one_forces_multiword_values() {
        let cfg = ToyConfig {
            multiword_value_fraction: 1.0,
            value_len_range: (2, 3),
            ..ToyConfig::default()
        };
        let corpus = generate_toy_corpus(&cfg, 3).unwrap();
        for split in [&corpus.train, &corpus.dev, &corpus.test] {
            for d in split {
                for t in &d.turns {
                    for v in t.gold_state.entries.values() {
                        if let SlotValue::Words(ws) = v {
                            assert!(ws.len() >= 2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn toy_values_occur_contiguously_in_history() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 99).unwrap();
        for d in corpus.train.iter().take(30) {
            for t in &d.turns {
                let (toks, _) = flatten_history(d, t.turn_index).unwrap();
                for v in t.gold_state.entries.values() {
                    if let SlotValue::Words(ws) = v {
                        let found = toks
                            .windows(ws.len())
                            .any(|w| w.iter().zip(ws).all(|(a, b)| a == b));
                        assert!(found, "value {ws:?} not contiguous in history");
                    }
                }
            }
        }
    }

    #[test]
    fn toy_mean_value_length_within_bounds() {
        let cfg = ToyConfig { n_dialogues: 100, ..ToyConfig::default() };
        let corpus = generate_toy_corpus(&cfg, 1).unwrap();
        let mut lens = Vec::new();
        for split in [&corpus.train, &corpus.dev, &corpus.test] {
            for d in split {
                if let Some(t) = d.turns.last() {
                    for v in t.gold_state.entries.values() {
                        if let SlotValue::Words(ws) = v {
                            lens.push(ws.len() as f64);
                        }
                    }
                }
            }
        }
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        let (lo, hi) = cfg.value_len_range;
        assert!(mean >= lo as f64 && mean <= hi as f64, "mean value length {mean}");
    }

    #[test]
    fn toy_infeasible_config_rejected() {
        let cfg = ToyConfig {
            value_len_range: (5, 5),
            distractor_len_range: (13, 13),
            ..ToyConfig::default()
        };
        assert!(matches!(generate_toy_corpus(&cfg, 0), Err(CsgError::Config(_))));
    }

    #[test]
    fn subsample_identity_and_determinism() {
        let corpus = generate_toy_corpus(&ToyConfig::default(), 2).unwrap();
        let full = subsample_training(&corpus, 1.0, 9).unwrap();
        assert_eq!(full.train.len(), corpus.train.len());
        let a = subsample_training(&corpus, 0.25, 9).unwrap();
        let b = subsample_training(&corpus, 0.25, 9).unwrap();
        let ids = |c: &Corpus| c.train.iter().map(|d| d.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn subsample_ceil_rule() {
        // ceil(0.01 * 1612) = 17
        let mut corpus = generate_toy_corpus(&ToyConfig::default(), 2).unwrap();
        let d = corpus.train[0].clone();
        corpus.train = (0..1612)
            .map(|i| {
                let mut d = d.clone();
                d.id = format!("d{i}");
                d
            })
            .collect();
        let sub = subsample_training(&corpus, 0.01, 0).unwrap();
        assert_eq!(sub.train.len(), 17);
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("I'm looking, for CHEAP food!"), vec!["im", "looking", "for", "cheap", "food"]);
        assert_eq!(tokenize("da Vinci pizzeria"), vec!["da", "vinci", "pizzeria"]);
        assert_eq!(tokenize("hotel-stars"), vec!["hotel-stars"]);
    }

    #[test]
    fn load_corpus_minimal_fixture() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train.json"),
            r#"{"schema": ["area"], "dialogues": [{"id": "d1", "turns": [{"user": "the centre please", "state": {"area": "centre"}}]}]}"#,
        )
        .unwrap();
        let corpus = load_corpus(dir.path(), CorpusFormat::MultiwozLike).unwrap();
        assert_eq!(corpus.train.len(), 1);
        assert_eq!(corpus.train[0].turns.len(), 1);
        assert_eq!(
            corpus.train[0].turns[0].gold_state.get("area"),
            Some(&SlotValue::Words(vec!["centre".into()]))
        );
    }

    #[test]
    fn load_corpus_dstc2_fixture_three_slots() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train.json"),
            r#"{"schema": ["food", "area", "pricerange"], "dialogues": [{"id": "d1", "turns": [{"system": "how may i help", "user": "cheap food", "goal-labels": {"pricerange": "cheap"}}]}]}"#,
        )
        .unwrap();
        let corpus = load_corpus(dir.path(), CorpusFormat::Dstc2Like).unwrap();
        assert_eq!(corpus.schema, vec!["food", "area", "pricerange"]);
    }

    #[test]
    fn load_corpus_unknown_slot_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("train.json"),
            r#"{"schema": ["area"], "dialogues": [{"id": "d1", "turns": [{"user": "x", "state": {"hotel-stars": "4"}}]}]}"#,
        )
        .unwrap();
        match load_corpus(dir.path(), CorpusFormat::MultiwozLike) {
            Err(CsgError::Schema { slot }) => assert_eq!(slot, "hotel-stars"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_corpus_malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.json"), "{\n  \"schema\": [,]\n}").unwrap();
        match load_corpus(dir.path(), CorpusFormat::MultiwozLike) {
            Err(CsgError::Parse { msg, .. }) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
