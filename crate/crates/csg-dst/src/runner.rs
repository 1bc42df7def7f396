//! Experiment orchestration: dataset preparation, single training cells,
//! evaluation from checkpoints, and the OOV-ratio sweep grid. The CLI is a
//! thin wrapper over these functions so tests can drive them directly.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::corpus::{
    generate_toy_corpus, load_corpus, subsample_training, write_split_json, Corpus, CorpusFormat,
    ToyConfig,
};
use crate::csg::Scheme;
use crate::error::{CsgError, Result};
use crate::eval::{evaluate, sweep_report, EvalReport, SweepReport};
use crate::model::{DstModel, ModelConfig, ModelVariant};
use crate::oov::{apply_oov_masking, drop_negative_samples, oov_stats, select_oov_words, OovPlan};
use crate::train::{
    load_checkpoint, predict_split, save_checkpoint, train, CheckpointMeta, TrainConfig,
};
use crate::vocab::Vocabulary;

/// Where the dialogues come from.
#[derive(Clone, Debug)]
pub enum SourceSpec {
    Toy { config: ToyConfig, seed: u64 },
    OnDisk { path: PathBuf, format: CorpusFormat },
}

impl SourceSpec {
    pub fn load(&self) -> Result<Corpus> {
        match self {
            SourceSpec::Toy { config, seed } => generate_toy_corpus(config, *seed),
            SourceSpec::OnDisk { path, format } => load_corpus(path, *format),
        }
    }
}

/// Cap rayon's worker count from CSG_NUM_THREADS. A no-op when the pool is
/// already initialized or the crate is built without the parallel feature.
pub fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("CSG_NUM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// A masked, negatives-dropped corpus plus everything derived from it.
pub struct Prepared {
    pub corpus: Corpus,
    pub plan: OovPlan,
    pub vocab: Vocabulary,
}

/// Run the full preparation pipeline at one OOV ratio.
pub fn prepare(raw: &Corpus, ratio: f64, seed: u64, subsample: Option<f64>) -> Result<Prepared> {
    let mut raw = raw.clone();
    if let Some(f) = subsample {
        raw = subsample_training(&raw, f, seed)?;
    }
    let plan = select_oov_words(&raw, ratio, seed)?;
    let masked = apply_oov_masking(&raw, &plan)?;
    let (corpus, _counts) = drop_negative_samples(&masked);
    let vocab = Vocabulary::build(&corpus, 1)?;
    Ok(Prepared { corpus, plan, vocab })
}

/// Write the prepared dataset to `dir`: normalized splits, the OOV plan,
/// the vocabulary and the stats table. Byte-deterministic for fixed inputs.
pub fn cmd_prepare(
    raw: &Corpus,
    ratio: f64,
    seed: u64,
    subsample: Option<f64>,
    dir: &Path,
) -> Result<Prepared> {
    let prepared = prepare(raw, ratio, seed, subsample)?;
    std::fs::create_dir_all(dir)?;
    let c = &prepared.corpus;
    let write = |name: &str, v: &serde_json::Value| -> Result<()> {
        std::fs::write(dir.join(name), serde_json::to_string_pretty(v).unwrap() + "\n")?;
        Ok(())
    };
    write("train.json", &write_split_json(&c.schema, &c.train))?;
    write("dev.json", &write_split_json(&c.schema, &c.dev))?;
    write("test.json", &write_split_json(&c.schema, &c.test))?;
    write("oov_plan.json", &serde_json::to_value(&prepared.plan).unwrap())?;
    write("vocab.json", &prepared.vocab.to_json())?;
    let stats = oov_stats(c, &prepared.plan, &prepared.vocab);
    write("stats.json", &serde_json::to_value(&stats).unwrap())?;
    std::fs::write(dir.join("stats.txt"), stats.render_text())?;
    Ok(prepared)
}

/// Load a directory previously written by [`cmd_prepare`].
pub fn load_prepared(dir: &Path) -> Result<Corpus> {
    if !dir.join("train.json").exists() {
        return Err(CsgError::Config(format!(
            "'{}' is not a prepared dataset directory (no train.json)",
            dir.display()
        )));
    }
    let mut corpus = load_corpus(dir, CorpusFormat::MultiwozLike)?;
    let plan_path = dir.join("oov_plan.json");
    if plan_path.exists() {
        let text = std::fs::read_to_string(&plan_path)?;
        let plan: OovPlan = serde_json::from_str(&text).map_err(|e| CsgError::Parse {
            path: plan_path.display().to_string(),
            msg: e.to_string(),
        })?;
        corpus.masked_words = plan.oov_words;
    }
    Ok(corpus)
}

/// One sweep cell: a (model, scheme) pair trained at one ratio.
#[derive(Clone, Debug)]
pub struct CellSpec {
    pub variant: ModelVariant,
    pub scheme: Scheme,
    pub d_model: usize,
    pub train: TrainConfig,
}

pub fn cell_dir(out: &Path, ratio: f64, variant: ModelVariant, scheme: Scheme) -> PathBuf {
    out.join(format!("{ratio:.2}")).join(format!("{variant}_{scheme}"))
}

#[derive(Debug)]
pub struct CellOutcome {
    pub report: EvalReport,
    pub skipped: bool,
    pub dir: PathBuf,
}

/// Prepare, train and evaluate one cell, writing
/// `{checkpoint, report.json, report.txt, log.jsonl}` into its directory.
/// A cell whose report.json already exists is skipped (resume support).
pub fn run_cell(raw: &Corpus, ratio: f64, spec: &CellSpec, out: &Path) -> Result<CellOutcome> {
    let dir = cell_dir(out, ratio, spec.variant, spec.scheme);
    let report_path = dir.join("report.json");
    if report_path.exists() {
        let text = std::fs::read_to_string(&report_path)?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| CsgError::Parse {
            path: report_path.display().to_string(),
            msg: e.to_string(),
        })?;
        return Ok(CellOutcome { report, skipped: true, dir });
    }
    std::fs::create_dir_all(&dir)?;

    let prepared = prepare(raw, ratio, spec.train.seed, None)?;
    let mcfg = ModelConfig::new(spec.variant, spec.scheme).with_dims(spec.d_model);
    let mut model: DstModel<f32> = DstModel::new(mcfg, prepared.vocab.clone(), spec.train.seed)?;

    let mut log = std::fs::File::create(dir.join("log.jsonl"))?;
    let outcome = train(&mut model, &prepared.corpus, &spec.train, |line| {
        use std::io::Write;
        let _ = writeln!(log, "{}", serde_json::to_string(line).unwrap());
    })?;

    let meta = CheckpointMeta {
        model: model.cfg.clone(),
        train: spec.train.clone(),
        best_dev_joint_accuracy: outcome.best_dev_joint_accuracy,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
    };
    save_checkpoint(&dir.join("checkpoint"), &model, &meta)?;

    let report = eval_model(&model, &prepared.corpus, config_echo(ratio, spec))?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap() + "\n")?;
    std::fs::write(dir.join("report.txt"), report.render_text())?;
    Ok(CellOutcome { report, skipped: false, dir })
}

fn config_echo(ratio: f64, spec: &CellSpec) -> serde_json::Value {
    json!({
        "ratio": ratio,
        "model": spec.variant.to_string(),
        "scheme": spec.scheme.to_string(),
        "d_model": spec.d_model,
        "seed": spec.train.seed,
    })
}

/// Evaluate a model on the test split of a prepared corpus.
pub fn eval_model(
    model: &DstModel<f32>,
    corpus: &Corpus,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if corpus.test.is_empty() {
        return Err(CsgError::Eval("empty test split".into()));
    }
    let predictions = predict_split(model, &corpus.test)?;
    let gold = crate::train::gold_split(&corpus.test);
    evaluate(&corpus.schema, &predictions, &gold, &model.vocab, config)
}

/// Evaluate a stored checkpoint against a prepared dataset directory.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let corpus = load_prepared(data_dir)?;
    let report = eval_model(
        &model,
        &corpus,
        json!({
            "checkpoint": checkpoint.display().to_string(),
            "model": meta.model,
            "best_dev_joint_accuracy": meta.best_dev_joint_accuracy,
        }),
    )?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report).unwrap() + "\n",
        )?;
        std::fs::write(dir.join("report.txt"), report.render_text())?;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub table: SweepReport,
    pub failures: Vec<(f64, String, String)>,
}

/// Run the full ratio × cell grid. Failed cells are recorded and the sweep
/// continues; completed cells (report.json present) are skipped.
pub fn cmd_sweep(
    raw: &Corpus,
    ratios: &[f64],
    cells: &[CellSpec],
    out: &Path,
) -> Result<SweepOutcome> {
    {
        let mut sorted = ratios.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CsgError::Config("sweep ratios must be distinct".into()));
        }
    }
    let mut failures = Vec::new();
    let mut per_cell: Vec<(String, Vec<(f64, EvalReport)>)> = cells
        .iter()
        .map(|c| (format!("{}_{}", c.variant, c.scheme), Vec::new()))
        .collect();
    for &ratio in ratios {
        for (spec, slot) in cells.iter().zip(per_cell.iter_mut()) {
            match run_cell(raw, ratio, spec, out) {
                Ok(outcome) => slot.1.push((ratio, outcome.report)),
                Err(e) => failures.push((ratio, slot.0.clone(), e.to_string())),
            }
        }
    }

    // grid artifacts: one sweep table per cell plus a combined CSV
    std::fs::create_dir_all(out)?;
    let mut tables = serde_json::Map::new();
    let mut csv = String::from("ratio,cell,joint_accuracy,slot_accuracy,slot_f1\n");
    let mut last_table = SweepReport { rows: Vec::new() };
    for (name, entries) in &per_cell {
        let table = sweep_report(entries)?;
        for r in &table.rows {
            csv.push_str(&format!(
                "{:.2},{name},{:.6},{:.6},{:.6}\n",
                r.ratio, r.joint_accuracy, r.slot_accuracy, r.slot_f1
            ));
        }
        tables.insert(name.clone(), serde_json::to_value(&table).unwrap());
        last_table = table;
    }
    std::fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(tables)).unwrap() + "\n",
    )?;
    std::fs::write(out.join("sweep.csv"), csv)?;
    Ok(SweepOutcome { table: last_table, failures })
}
