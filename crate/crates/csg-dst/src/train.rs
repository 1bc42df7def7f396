//! Training loop: Adam with gradient clipping, per-step teacher forcing,
//! early stopping on dev joint accuracy, per-epoch JSONL logging, and the
//! checkpoint wire format.
//!
//! Batch gradients are computed sample-parallel (rayon, unless the
//! `parallel` feature is off) but always reduced in sample order, so the
//! result is bit-identical to the sequential path.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, Corpus, Dialogue};
use crate::decoder::Instrumentation;
use crate::error::{CsgError, Result};
use crate::eval::joint_accuracy;
use crate::model::{DstModel, ModelConfig};
use crate::nn::{Adam, ParamId, Params, Tensor};
use crate::vocab::{Vocabulary, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub teacher_forcing_ratio: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop as soon as dev joint accuracy reaches this value, if set.
    pub target_dev_metric: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            teacher_forcing_ratio: 0.5,
            patience: 6,
            clip_norm: 10.0,
            seed: 0,
            target_dev_metric: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.teacher_forcing_ratio) {
            return Err(CsgError::Config(format!(
                "teacher forcing ratio {} outside [0, 1]",
                self.teacher_forcing_ratio
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CsgError::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(CsgError::Config("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_joint_accuracy: f64,
    pub best_dev_joint_accuracy: f64,
    pub forced_steps: usize,
    pub free_steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_dev_joint_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub logs: Vec<EpochLog>,
}

/// (dialogue index, turn index) into a split.
type SampleRef = (usize, usize);

fn active_samples(dialogues: &[Dialogue]) -> Vec<SampleRef> {
    let mut out = Vec::new();
    for (di, d) in dialogues.iter().enumerate() {
        for (ti, t) in d.turns.iter().enumerate() {
            if t.active {
                out.push((di, ti));
            }
        }
    }
    out
}

/// RNG for one training sample, derived so results do not depend on batch
/// partitioning or thread scheduling.
fn sample_rng(seed: u64, epoch: usize, sample: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(sample as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Predicted states for every active turn of a split, in order.
pub fn predict_split(model: &DstModel<f32>, dialogues: &[Dialogue]) -> Result<Vec<BeliefState>> {
    let samples = active_samples(dialogues);
    map_ordered(&samples, |&(di, ti)| model.predict_state(&dialogues[di], ti))
        .into_iter()
        .collect()
}

/// Gold states for every active turn of a split, in order.
pub fn gold_split(dialogues: &[Dialogue]) -> Vec<BeliefState> {
    active_samples(dialogues)
        .iter()
        .map(|&(di, ti)| dialogues[di].turns[ti].gold_state.clone())
        .collect()
}

pub fn dev_joint_accuracy(model: &DstModel<f32>, corpus: &Corpus) -> Result<f64> {
    let pred = predict_split(model, &corpus.dev)?;
    let gold = gold_split(&corpus.dev);
    joint_accuracy(&corpus.schema, &pred, &gold)
}

/// Run the optimization loop. The model is left holding the best-dev
/// parameters. `on_epoch` sees each epoch's log line as it is produced.
pub fn train(
    model: &mut DstModel<f32>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = active_samples(&corpus.train);
    if samples.is_empty() {
        return Err(CsgError::Config("no active training turns".into()));
    }
    if corpus.dev.is_empty() {
        return Err(CsgError::Config("empty dev split".into()));
    }

    let mut opt = Adam::new(&model.params, cfg.lr, cfg.clip_norm);
    opt.freeze_row(model.embedding_param_index(), PAD);

    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Params<f32>> = None;
    let mut since_best = 0usize;
    let mut logs = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order = samples.clone();
        let mut shuffle_rng = sample_rng(cfg.seed, epoch, usize::MAX);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_slots = 0usize;
        let mut forced_steps = 0usize;
        let mut free_steps = 0usize;

        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            // global sample index keyed by position in the shuffled order,
            // so the per-sample RNG stream is batch-partition independent
            let base = batch_index * cfg.batch_size;
            let indexed: Vec<(usize, SampleRef)> =
                batch.iter().enumerate().map(|(i, &s)| (base + i, s)).collect();
            let results = map_ordered(&indexed, |&(gi, (di, ti))| {
                let mut rng = sample_rng(cfg.seed, epoch, gi);
                let mut instr = Instrumentation::default();
                model
                    .turn_loss(&corpus.train[di], ti, cfg.teacher_forcing_ratio, &mut rng, &mut instr)
                    .map(|(loss, grads, slots)| (loss, grads, slots, instr))
            });

            let mut batch_grads = model.params.zero_grads();
            let mut n = 0usize;
            for r in results {
                let (loss, grads, slots, instr) = r.map_err(|e| {
                    CsgError::Numeric(format!("epoch {epoch} batch {batch_index}: {e}"))
                })?;
                epoch_loss += loss;
                epoch_slots += slots;
                forced_steps += instr.forced_steps;
                free_steps += instr.free_steps;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    acc.add_assign(g);
                }
                n += 1;
            }
            let inv = 1.0 / n as f32;
            for g in &mut batch_grads {
                g.data.iter_mut().for_each(|v| *v *= inv);
            }
            opt.apply(&mut model.params, &mut batch_grads);
        }

        let dev = dev_joint_accuracy(model, corpus)?;
        if dev > best_metric {
            best_metric = dev;
            best_epoch = epoch;
            best_params = Some(model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }

        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_slots.max(1) as f64,
            dev_joint_accuracy: dev,
            best_dev_joint_accuracy: best_metric,
            forced_steps,
            free_steps,
        };
        on_epoch(&log);
        logs.push(log);

        if let Some(target) = cfg.target_dev_metric {
            if best_metric >= target {
                break;
            }
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutcome {
        best_dev_joint_accuracy: best_metric,
        best_epoch,
        epochs_run,
        logs,
    })
}

// --- checkpoint wire format -------------------------------------------------
//
// magic "CSGD", u32 LE version, then three length-prefixed (u64 LE)
// sections: config JSON, vocabulary JSON, named tensors. Tensors are
// row-major little-endian float32 with a (name, rows, cols) header each.

const MAGIC: &[u8; 4] = b"CSGD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub best_dev_joint_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn encode_tensors(params: &Params<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CsgError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { buf, pos: 0 };
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| CsgError::Checkpoint("non-utf8 tensor name".into()))?;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let raw = c.take(rows * cols * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if c.pos != buf.len() {
        return Err(CsgError::Checkpoint("trailing bytes in tensor section".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    model: &DstModel<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let config = serde_json::to_vec(meta)
        .map_err(|e| CsgError::Checkpoint(format!("config serialization: {e}")))?;
    let vocab = serde_json::to_vec(&model.vocab.to_json())
        .map_err(|e| CsgError::Checkpoint(format!("vocab serialization: {e}")))?;
    let tensors = encode_tensors(&model.params);

    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    for section in [&config, &vocab, &tensors] {
        f.write_all(&(section.len() as u64).to_le_bytes())?;
        f.write_all(section)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DstModel<f32>, CheckpointMeta)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CsgError::Checkpoint("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CsgError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut sections = Vec::with_capacity(3);
    for _ in 0..3 {
        let len = c.u64()? as usize;
        sections.push(c.take(len)?);
    }

    let meta: CheckpointMeta = serde_json::from_slice(sections[0])
        .map_err(|e| CsgError::Checkpoint(format!("config section: {e}")))?;
    let vocab_json: serde_json::Value = serde_json::from_slice(sections[1])
        .map_err(|e| CsgError::Checkpoint(format!("vocab section: {e}")))?;
    let vocab = Vocabulary::from_json(&vocab_json)?;
    let tensors = decode_tensors(sections[2])?;

    let mut model = DstModel::new(meta.model.clone(), vocab, meta.train.seed)?;
    if tensors.len() != model.params.len() {
        return Err(CsgError::Checkpoint(format!(
            "tensor count mismatch: {} stored vs {} expected",
            tensors.len(),
            model.params.len()
        )));
    }
    for (name, t) in tensors {
        let id: ParamId = model.params.by_name(&name).ok_or_else(|| {
            CsgError::Checkpoint(format!("unexpected tensor '{name}' in checkpoint"))
        })?;
        let dst = model.params.get_mut(id);
        if (dst.rows, dst.cols) != (t.rows, t.cols) {
            return Err(CsgError::Checkpoint(format!(
                "shape mismatch for '{name}': stored {}x{}, expected {}x{}",
                t.rows, t.cols, dst.rows, dst.cols
            )));
        }
        *dst = t;
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyConfig};
    use crate::csg::Scheme;
    use crate::model::ModelVariant;

    fn tiny_corpus() -> Corpus {
        let cfg = ToyConfig { n_dialogues: 24, n_slots: 2, vocab_size: 40, ..Default::default() };
        generate_toy_corpus(&cfg, 9).unwrap()
    }

    fn tiny_model(corpus: &Corpus, variant: ModelVariant, seed: u64) -> DstModel<f32> {
        let vocab = Vocabulary::build(corpus, 1).unwrap();
        let mcfg = ModelConfig::new(variant, Scheme::Sum).with_dims(16);
        DstModel::new(mcfg, vocab, seed).unwrap()
    }

    fn quick_train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig { max_epochs: epochs, batch_size: 8, ..Default::default() }
    }

    #[test]
    fn seed_reproducibility_epoch1_loss() {
        let corpus = tiny_corpus();
        let cfg = quick_train_cfg(1);
        let run = || {
            let mut model = tiny_model(&corpus, ModelVariant::SpanPtr, 3);
            let out = train(&mut model, &corpus, &cfg, |_| {}).unwrap();
            out.logs[0].train_loss
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn teacher_forcing_boundaries_and_rate() {
        let corpus = tiny_corpus();
        // ratio 0 -> no forced steps
        let mut model = tiny_model(&corpus, ModelVariant::SeqPtr, 1);
        let cfg = TrainConfig {
            teacher_forcing_ratio: 0.0,
            ..quick_train_cfg(1)
        };
        let out = train(&mut model, &corpus, &cfg, |_| {}).unwrap();
        assert_eq!(out.logs[0].forced_steps, 0);

        // ratio 0.5 -> forced fraction concentrates
        let big = {
            let cfg = ToyConfig {
                n_dialogues: 80,
                n_slots: 2,
                vocab_size: 40,
                multiword_value_fraction: 1.0,
                ..Default::default()
            };
            generate_toy_corpus(&cfg, 9).unwrap()
        };
        let mut model = tiny_model(&big, ModelVariant::SeqPtr, 1);
        let cfg = TrainConfig {
            teacher_forcing_ratio: 0.5,
            patience: 50,
            ..quick_train_cfg(6)
        };
        let out = train(&mut model, &big, &cfg, |_| {}).unwrap();
        let forced: usize = out.logs.iter().map(|l| l.forced_steps).sum();
        let free: usize = out.logs.iter().map(|l| l.free_steps).sum();
        let total = forced + free;
        assert!(total > 2000, "too few decoding steps ({total}) for a rate check");
        let frac = forced as f64 / total as f64;
        assert!((0.47..=0.53).contains(&frac), "forced fraction {frac} over {total} steps");
    }

    #[test]
    fn early_stopping_respects_patience() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(&corpus, ModelVariant::SpanPtr, 5);
        // patience 1: training may stop well before max_epochs
        let cfg = TrainConfig { patience: 1, ..quick_train_cfg(50) };
        let out = train(&mut model, &corpus, &cfg, |_| {}).unwrap();
        assert!(out.epochs_run <= 50);
        // stopping rule: last epoch is either max_epochs or best_epoch + patience
        if out.epochs_run < 50 && cfg.target_dev_metric.is_none() {
            assert_eq!(out.epochs_run, out.best_epoch + cfg.patience);
        }
    }

    #[test]
    fn loss_decreases_early_in_training() {
        let corpus = tiny_corpus();
        let mut deltas = Vec::new();
        for seed in [0u64, 1, 2] {
            let mut model = tiny_model(&corpus, ModelVariant::SpanPtr, seed);
            let cfg = TrainConfig { patience: 50, ..quick_train_cfg(5) };
            let out = train(&mut model, &corpus, &cfg, |_| {}).unwrap();
            deltas.push(out.logs[0].train_loss - out.logs.last().unwrap().train_loss);
        }
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(mean > 0.0, "loss failed to decrease over 5 epochs: deltas {deltas:?}");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(&corpus, ModelVariant::Hybrid, 2);
        let cfg = quick_train_cfg(1);
        let out = train(&mut model, &corpus, &cfg, |_| {}).unwrap();

        let before = predict_split(&model, &corpus.test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = CheckpointMeta {
            model: model.cfg.clone(),
            train: cfg,
            best_dev_joint_accuracy: out.best_dev_joint_accuracy,
            best_epoch: out.best_epoch,
            epochs_run: out.epochs_run,
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2.best_epoch, meta.best_epoch);
        for ((n1, t1), (n2, t2)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2, "tensor {n1} changed across round trip");
        }
        let after = predict_split(&loaded, &corpus.test).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::write(&path, b"CSGD\xff\xff\xff\xff").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CsgError::Checkpoint(_))));
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let corpus = tiny_corpus();
        let mut model = tiny_model(&corpus, ModelVariant::SpanPtr, 0);
        // poison a parameter to force a non-finite loss
        let id = model.params.by_name("dec.wz").unwrap();
        model.params.get_mut(id).fill(f32::NAN);
        let err = train(&mut model, &corpus, &quick_train_cfg(1), |_| {}).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epoch 1"), "missing context in '{msg}'");
    }
}
