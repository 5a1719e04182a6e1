//! `repsense`: generate, train, eval, predict and serve from one binary.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use repsense_core::landmarks::{read_landmark_file, write_landmark_file, LandmarkFile};
use repsense_core::model::{load_model, save_model, SavedModel};
use repsense_core::training::{dataset_split, train_with};
use repsense_core::{
    evaluate, forward, generate, render_report, Mode, PoseSequence, ReportFormat, FRAME_FEATURES,
};
use repsense_serve::{run_blocking, AppState, ServeOptions};
use serde::Serialize;

use crate::config::{render, FileConfig, ModelFlags, SynthFlags, TrainFlags};

#[derive(Parser)]
#[command(
    name = "repsense",
    version,
    about = "Exercise classification from body landmark sequences"
)]
struct Cli {
    /// TOML file with [synth], [model], [train] and [serve] sections. Flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled landmark file.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Train a model on a labeled landmark file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        /// Per-epoch JSON lines. Defaults to `<model-out>.history.jsonl`.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Accuracy report for a labeled landmark file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which part of the training split to score, rebuilt from the train seed.
        #[arg(long, value_enum, default_value_t = SplitChoice::All)]
        split: SplitChoice,
        /// Directory for `report.txt` and `report.json`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Label every sequence of a landmark file, one JSON line each.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stream live classifications over WebSocket.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
        #[arg(long)]
        window: Option<usize>,
        /// Must match the model file.
        #[arg(long)]
        max_seq_len: Option<usize>,
        /// Append one JSON line per classification.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Val,
}

/// Bad input is a usage error (exit 2); anything else fails with exit 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = FileConfig::load(cli.config.as_deref()).usage()?;
    match cli.command {
        Command::Generate { out, synth } => {
            synth.apply(&mut cfg.synth);
            cfg.synth.validate().usage()?;
            announce(&render("synth", &cfg.synth));
            let file = generate(&cfg.synth).usage()?;
            write_landmark_file(&out, &file).runtime()?;
            eprintln!(
                "wrote {} sequences to {}",
                file.sequences.len(),
                out.display()
            );
        }
        Command::Train {
            data,
            model_out,
            history,
            quiet,
            model,
            train,
        } => {
            model.apply(&mut cfg.model);
            train.apply(&mut cfg.train);
            let file = read_landmark_file(&data).usage()?;
            reconcile_model(&mut cfg.model, &file).usage()?;
            cfg.model.validate().usage()?;
            cfg.train.validate().usage()?;
            announce(&(render("model", &cfg.model) + &render("train", &cfg.train)));
            let seqs = file.to_sequences(cfg.model.max_seq_len).usage()?;
            let outcome = train_with(&seqs, &cfg.model, &cfg.train, |r| {
                if !quiet {
                    eprintln!(
                        "epoch {:3}  loss {:.4}  acc {:.4}  val_loss {}  val_acc {}",
                        r.epoch,
                        r.train_loss,
                        r.train_acc,
                        opt(r.val_loss),
                        opt(r.val_acc)
                    );
                }
            })
            .usage()?;
            let registry = file.header.class_registry.clone();
            save_model(&model_out, &outcome.params, &cfg.model, &registry).runtime()?;
            let history = history.unwrap_or_else(|| sibling(&model_out, "history.jsonl"));
            std::fs::write(&history, outcome.history.to_jsonl())
                .with_context(|| format!("writing {}", history.display()))
                .runtime()?;
            eprintln!("wrote {} and {}", model_out.display(), history.display());
        }
        Command::Eval {
            model,
            data,
            split,
            out_dir,
            train,
        } => {
            train.apply(&mut cfg.train);
            cfg.train.validate().usage()?;
            announce(&render("train", &cfg.train));
            let saved = load_model(&model).usage()?;
            let file = read_landmark_file(&data).usage()?;
            check_registry(&saved, &file).usage()?;
            let seqs = file.to_sequences(saved.config.max_seq_len).usage()?;
            let (name, chosen) = match split {
                SplitChoice::All => ("All", seqs),
                SplitChoice::Train | SplitChoice::Val => {
                    let s = dataset_split(&seqs, saved.config.num_classes, &cfg.train).usage()?;
                    let idx = if split == SplitChoice::Val {
                        s.val
                    } else {
                        s.train
                    };
                    let name = if split == SplitChoice::Val {
                        "Validation"
                    } else {
                        "Training"
                    };
                    (name, idx.iter().map(|&i| seqs[i].clone()).collect())
                }
            };
            let report =
                evaluate(&saved.params, &saved.config, &saved.registry, &chosen, name).usage()?;
            let table = render_report(&report, ReportFormat::Table);
            println!("{table}");
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).runtime()?;
                std::fs::write(dir.join("report.txt"), &table).runtime()?;
                std::fs::write(
                    dir.join("report.json"),
                    render_report(&report, ReportFormat::Json),
                )
                .runtime()?;
            }
        }
        Command::Predict { model, data, out } => {
            let saved = load_model(&model).usage()?;
            let file = read_landmark_file(&data).usage()?;
            check_registry(&saved, &file).usage()?;
            let seqs = file.to_sequences(saved.config.max_seq_len).usage()?;
            let sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(
                    File::create(p)
                        .with_context(|| format!("creating {}", p.display()))
                        .runtime()?,
                ),
                None => Box::new(std::io::stdout().lock()),
            };
            predict(&saved, &file, &seqs, BufWriter::new(sink)).runtime()?;
        }
        Command::Serve {
            model,
            listen,
            window,
            max_seq_len,
            log,
        } => {
            let s = &mut cfg.serve;
            s.listen = listen.unwrap_or(s.listen);
            s.window = window.unwrap_or(s.window);
            s.max_seq_len = max_seq_len.or(s.max_seq_len);
            s.log = log.or(s.log.take());
            announce(&render("serve", &cfg.serve));
            let opts = ServeOptions {
                listen: cfg.serve.listen,
                model,
                window: cfg.serve.window,
                max_seq_len: cfg.serve.max_seq_len,
                log: cfg.serve.log.clone(),
            };
            let state = AppState::load(&opts).usage()?;
            run_blocking(state, opts.listen).runtime()?;
        }
    }
    Ok(())
}

fn announce(effective: &str) {
    eprintln!("# effective config\n{effective}");
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

/// The class count always comes from the data file's registry.
fn reconcile_model(
    model: &mut repsense_core::ModelConfig,
    file: &LandmarkFile,
) -> anyhow::Result<()> {
    if model.input_dim != FRAME_FEATURES {
        return Err(anyhow!(
            "model input_dim must be {FRAME_FEATURES}, config says {}",
            model.input_dim
        ));
    }
    model.num_classes = file.header.class_registry.len();
    Ok(())
}

fn check_registry(saved: &SavedModel, file: &LandmarkFile) -> anyhow::Result<()> {
    if saved.registry != file.header.class_registry {
        return Err(anyhow!(
            "class registry of the data {:?} differs from the model's {:?}",
            file.header.class_registry.names(),
            saved.registry.names()
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    sequence_id: &'a str,
    label: &'a str,
    probs: BTreeMap<&'a str, f64>,
}

fn predict(
    saved: &SavedModel,
    file: &LandmarkFile,
    seqs: &[PoseSequence],
    mut w: impl Write,
) -> anyhow::Result<()> {
    for (rec, seq) in file.sequences.iter().zip(seqs) {
        let (p, _) = forward(seq, &saved.params, &saved.config, Mode::Infer)?;
        let names = saved.registry.names();
        let line = Prediction {
            sequence_id: &rec.sequence_id,
            label: saved.registry.name(p.label),
            probs: names
                .iter()
                .map(String::as_str)
                .zip(p.probs.iter().copied())
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
