//! `csg-dst` command line: prepare datasets, train, evaluate, and sweep
//! across OOV ratios. Exit codes: 0 ok, 2 config error, 3 artifact
//! (checkpoint/report) error, 4 sweep completed with failed cells.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csg_dst::corpus::{CorpusFormat, ToyConfig};
use csg_dst::csg::Scheme;
use csg_dst::model::ModelVariant;
use csg_dst::runner::{
    self, cell_dir, cmd_eval, cmd_prepare, cmd_sweep, run_cell, CellSpec, SourceSpec,
};
use csg_dst::train::TrainConfig;
use csg_dst::CsgError;

#[derive(Parser)]
#[command(name = "csg-dst", about = "Dialogue state tracking with context-sensitive decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Corpus file or directory (train.json/dev.json/test.json)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus format: multiwoz_like or dstc2_like
    #[arg(long, default_value = "multiwoz_like")]
    format: String,
    /// Generate the synthetic toy corpus instead of loading one
    #[arg(long)]
    toy: bool,
    #[arg(long, default_value_t = 200)]
    toy_dialogues: usize,
    #[arg(long, default_value_t = 3)]
    toy_slots: usize,
    #[arg(long, default_value_t = 120)]
    toy_vocab: usize,
    /// Fraction of toy values with more than one word
    #[arg(long, default_value_t = 0.5)]
    multiword_fraction: f64,
    /// Keep only this fraction of training dialogues
    #[arg(long)]
    subsample_fraction: Option<f64>,
}

impl SourceArgs {
    fn spec(&self, seed: u64) -> Result<SourceSpec, CsgError> {
        match (&self.corpus, self.toy) {
            (Some(_), true) => {
                Err(CsgError::Config("--corpus and --toy are mutually exclusive".into()))
            }
            (Some(path), false) => Ok(SourceSpec::OnDisk {
                path: path.clone(),
                format: self.format.parse::<CorpusFormat>()?,
            }),
            (None, true) => Ok(SourceSpec::Toy {
                config: ToyConfig {
                    n_dialogues: self.toy_dialogues,
                    n_slots: self.toy_slots,
                    vocab_size: self.toy_vocab,
                    multiword_value_fraction: self.multiword_fraction,
                    ..Default::default()
                },
                seed,
            }),
            (None, false) => Err(CsgError::Config("pass either --corpus or --toy".into())),
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    tf_ratio: f64,
    #[arg(long, default_value_t = 6)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Embedding and hidden width
    #[arg(long, default_value_t = 64)]
    d_model: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            teacher_forcing_ratio: self.tf_ratio,
            patience: self.patience,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mask an OOV ratio into a corpus and write the prepared dataset
    Prepare {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 0.0)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model/scheme cell and write its artifacts
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 0.0)]
        ratio: f64,
        /// span_ptr, seq_ptr or hybrid
        #[arg(long)]
        model: String,
        /// baseline, enc, sum or cat
        #[arg(long, default_value = "baseline")]
        scheme: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a prepared dataset directory
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory previously written by `prepare`
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full ratio x model x scheme grid and emit the sweep table
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated OOV ratios, e.g. 0.0,0.3,0.7,1.0
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
        /// Comma-separated model list
        #[arg(long, value_delimiter = ',', default_value = "seq_ptr")]
        models: Vec<String>,
        /// Comma-separated scheme list
        #[arg(long, value_delimiter = ',', default_value = "baseline,sum")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(e: &CsgError) -> u8 {
    match e {
        CsgError::Checkpoint(_) => 3,
        _ => 2,
    }
}

fn run() -> Result<u8, CsgError> {
    runner::init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { source, ratio, seed, out } => {
            let raw = source.spec(seed)?.load()?;
            let prepared = cmd_prepare(&raw, ratio, seed, source.subsample_fraction, &out)?;
            let stats = csg_dst::oov::oov_stats(&prepared.corpus, &prepared.plan, &prepared.vocab);
            print!("{}", stats.render_text());
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Train { source, ratio, model, scheme, seed, train, out } => {
            let raw = source.spec(seed)?.load()?;
            let spec = CellSpec {
                variant: model.parse::<ModelVariant>()?,
                scheme: scheme.parse::<Scheme>()?,
                d_model: train.d_model,
                train: train.config(seed),
            };
            let outcome = run_cell(&raw, ratio, &spec, &out)?;
            if outcome.skipped {
                println!("cell already complete: {}", outcome.dir.display());
            } else {
                print!("{}", outcome.report.render_text());
                println!("artifacts in {}", cell_dir(&out, ratio, spec.variant, spec.scheme).display());
            }
            Ok(0)
        }
        Command::Eval { checkpoint, data, out } => {
            let report = cmd_eval(&checkpoint, &data, out.as_deref())?;
            print!("{}", report.render_text());
            Ok(0)
        }
        Command::Sweep { source, ratios, models, schemes, seed, train, out } => {
            if ratios.is_empty() {
                return Err(CsgError::Config("--ratios must list at least one ratio".into()));
            }
            let raw = source.spec(seed)?.load()?;
            let mut cells = Vec::new();
            for m in &models {
                for s in &schemes {
                    cells.push(CellSpec {
                        variant: m.parse::<ModelVariant>()?,
                        scheme: s.parse::<Scheme>()?,
                        d_model: train.d_model,
                        train: train.config(seed),
                    });
                }
            }
            let outcome = cmd_sweep(&raw, &ratios, &cells, &out)?;
            print!("{}", outcome.table.render_text());
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                for (ratio, cell, msg) in &outcome.failures {
                    eprintln!("cell failed: ratio {ratio:.2} {cell}: {msg}");
                }
                Ok(4)
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
