//! The `adast` command-line tool.

mod config;

pub use config::{DecodeConfig, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::decoding::{bleu, decode_utterance, format_hypotheses, parse_hypotheses, sequence_token_accuracy};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::model::{load_checkpoint, Model, Variant};
use crate::numerics::{gradient_check, seeded_rng, Precision, Scalar, Tape, Tensor};
use crate::probe::{run_probe, ProbeResult};
use crate::synthdata::{generate, read_corpus, write_corpus, Corpus, Utterance};
use crate::training::{cross_entropy, load_training_checkpoint, train, Batch, TrainState};

#[derive(Debug, Parser)]
#[command(name = "adast", version, about = "Speech translation with acoustic states in the decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set model.d_model=32` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    /// Directory for run artifacts (default: <runs-root>/<timestamp>-seed<seed>).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs_root: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint written by `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode a corpus split with a trained model.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Cached incremental decoding (default).
        #[arg(long, conflicts_with = "full")]
        incremental: bool,
        /// Recompute the full forward pass at every step.
        #[arg(long)]
        full: bool,
        /// Hypothesis file (default: <run-dir>/hyp-<split>.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a hypothesis file against a corpus split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train a linear class probe on a frozen encoder.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint; a freshly initialized model when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter count of each component.
    Params {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        d_model: Option<usize>,
    },
    /// Compare analytic and central-difference gradients at 64-bit.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        d_model: Option<usize>,
        /// Elements probed per parameter tensor.
        #[arg(long, default_value_t = 8)]
        per_tensor: usize,
    },
}

/// Maps library errors to exit codes: 2 for configuration errors, 1 for
/// everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(|e| match e {
            Error::Io { path, source } => Error::config(format!("cannot read {}: {source}", path.display())),
            other => other,
        })?;
    }
    for s in &common.settings {
        cfg.apply_setting(s)?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &common.precision {
        cfg.precision = p.parse()?;
    }
    cfg.finish()
}

fn run_dir(common: &Common, seed: u64) -> Result<PathBuf> {
    let dir = match &common.run_dir {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            common.runs_root.join(format!("{stamp}-seed{seed}"))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split<'c>(corpus: &'c Corpus, name: &str) -> Result<&'c [Utterance]> {
    corpus
        .splits()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, u)| u)
        .ok_or_else(|| Error::config(format!("unknown split `{name}` (expected train, dev or test)")))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, mode, out } => {
            let cfg = resolve(&common, &[("data.mode", mode)])?;
            let corpus = generate(&cfg.data)?;
            write_corpus(&corpus, &out)?;
            println!(
                "wrote {} train, {} dev, {} test utterances ({}) to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.test.len(),
                cfg.data.mode,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            common,
            data,
            variant,
            steps,
            resume,
        } => {
            let cfg = resolve(
                &common,
                &[("model.variant", variant), ("train.steps", steps.map(|s| s.to_string()))],
            )?;
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&common, cfg, &data, resume.as_deref()),
                Precision::F64 => cmd_train::<f64>(&common, cfg, &data, resume.as_deref()),
            }
        }
        Command::Decode {
            common,
            checkpoint,
            data,
            split,
            beam,
            max_len,
            incremental: _,
            full,
            out,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("decode.beam", beam.map(|b| b.to_string())),
                    ("decode.max_len", max_len.map(|m| m.to_string())),
                    ("decode.mode", full.then(|| "full".to_string())),
                ],
            )?;
            match cfg.precision {
                Precision::F32 => cmd_decode::<f32>(&common, &cfg, &checkpoint, &data, &split, out),
                Precision::F64 => cmd_decode::<f64>(&common, &cfg, &checkpoint, &data, &split, out),
            }
        }
        Command::Eval {
            common,
            hyp,
            data,
            split: name,
        } => {
            resolve(&common, &[])?;
            let corpus = read_corpus(&data)?;
            let utts = split(&corpus, &name)?;
            let text = fs::read_to_string(&hyp).map_err(|e| Error::io(&hyp, e))?;
            let hyps = parse_hypotheses(&text, &hyp)?;
            let by_id: std::collections::HashMap<&str, &Vec<usize>> =
                hyps.iter().map(|(id, t)| (id.as_str(), t)).collect();
            if by_id.len() != utts.len() {
                return Err(Error::validation(format!(
                    "{} hypotheses for {} utterances in `{name}`",
                    by_id.len(),
                    utts.len()
                )));
            }
            let mut h = Vec::with_capacity(utts.len());
            for u in utts {
                let t = by_id
                    .get(u.utt_id.as_str())
                    .ok_or_else(|| Error::validation(format!("no hypothesis for {}", u.utt_id)))?;
                h.push((*t).clone());
            }
            let refs: Vec<Vec<usize>> = utts.iter().map(|u| u.tgt.clone()).collect();
            println!("bleu = {:.4}", bleu(&h, &refs)?);
            println!("token_acc = {:.6}", sequence_token_accuracy(&h, &refs)?);
            Ok(())
        }
        Command::Probe {
            common,
            data,
            checkpoint,
            out,
        } => {
            let cfg = resolve(&common, &[])?;
            match cfg.precision {
                Precision::F32 => cmd_probe::<f32>(&cfg, &data, checkpoint.as_deref(), out.as_deref()),
                Precision::F64 => cmd_probe::<f64>(&cfg, &data, checkpoint.as_deref(), out.as_deref()),
            }
        }
        Command::Params {
            common,
            variant,
            d_model,
        } => {
            let cfg = resolve(
                &common,
                &[("model.variant", variant), ("model.d_model", d_model.map(|d| d.to_string()))],
            )?;
            let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
            let counts = model.param_count();
            println!("variant = {}", cfg.variant());
            println!("{:<14}{:>12}", "component", "params");
            for (name, n) in counts.rows() {
                println!("{name:<14}{n:>12}");
            }
            println!("{:<14}{:>12}", "total", counts.total());
            Ok(())
        }
        Command::Gradcheck {
            common,
            variant,
            d_model,
            per_tensor,
        } => {
            let cfg = resolve(
                &common,
                &[("model.variant", variant), ("model.d_model", d_model.map(|d| d.to_string()))],
            )?;
            cmd_gradcheck(&cfg, per_tensor)
        }
    }
}

fn cmd_train<T: Scalar>(common: &Common, mut cfg: RunConfig, data: &Path, resume: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(data)?;
    cfg.model.vocab_size = corpus.info.vocab_size;
    cfg.model.feature_dim = corpus.info.feature_dim;
    let (mut model, mut state) = match resume {
        Some(ckpt) => {
            let (model, state) = load_training_checkpoint::<T>(ckpt, &cfg.train)?;
            cfg.model = model.config.clone();
            (model, state)
        }
        None => {
            let model = Model::<T>::new(cfg.model.clone(), cfg.seed)?;
            let state = TrainState::new(&model, &cfg.train);
            (model, state)
        }
    };
    let dir = run_dir(common, cfg.seed)?;
    write_file(&dir.join("config.txt"), &cfg.to_text())?;
    let report = train(&mut model, &mut state, &corpus.train, &corpus.dev, &cfg.train, Some(&dir))?;
    println!("run_dir = {}", dir.display());
    println!("final_step = {}", report.final_step);
    println!("best_dev_acc = {:.6} (step {})", report.best_dev_acc, report.best_step);
    Ok(())
}

fn cmd_decode<T: Scalar>(
    common: &Common,
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    split_name: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = load_checkpoint::<T>(checkpoint)?;
    let corpus = read_corpus(data)?;
    if corpus.info.feature_dim != model.config.feature_dim {
        return Err(Error::config(format!(
            "corpus has {} features per frame, model expects {}",
            corpus.info.feature_dim, model.config.feature_dim
        )));
    }
    let utts = split(&corpus, split_name)?;
    let max_len = (cfg.decode.max_len > 0).then_some(cfg.decode.max_len);
    let mut rows = Vec::with_capacity(utts.len());
    for u in utts {
        let f = Tensor::<T>::new(
            vec![u.frames, u.feature_dim],
            u.features.iter().map(|&v| T::from_f64_lossy(v as f64)).collect(),
        )?;
        let toks = decode_utterance(&model, &f, cfg.decode.beam, max_len, cfg.decode.length_penalty, cfg.decode.mode)?;
        rows.push((u.utt_id.clone(), toks));
    }
    let path = match out {
        Some(p) => p,
        None => run_dir(common, cfg.seed)?.join(format!("hyp-{split_name}.txt")),
    };
    write_file(&path, &format_hypotheses(&rows))?;
    println!("wrote {} hypotheses to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_probe<T: Scalar>(cfg: &RunConfig, data: &Path, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let corpus = read_corpus(data)?;
    let model = match checkpoint {
        Some(c) => load_checkpoint::<T>(c)?,
        None => {
            let mut m = cfg.model.clone();
            m.vocab_size = corpus.info.vocab_size;
            m.feature_dim = corpus.info.feature_dim;
            Model::<T>::new(m, cfg.seed)?
        }
    };
    if corpus.info.feature_dim != model.config.feature_dim {
        return Err(Error::config("corpus and model feature dimensions differ"));
    }
    let r = run_probe(&model, &corpus.train, &corpus.dev, &corpus.test, corpus.info.n_classes, &cfg.probe)?;
    let text = format!("{}\n{}\n", ProbeResult::CSV_HEADER, r.csv());
    print!("{text}");
    if let Some(p) = out {
        write_file(p, &text)?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, per_tensor: usize) -> Result<()> {
    let mut model = Model::<f64>::new(cfg.model.clone(), cfg.seed)?;
    let mut rng = seeded_rng(cfg.seed);
    let f = cfg.model.feature_dim;
    let v = cfg.model.vocab_size;
    let utts: Vec<Utterance> = [13usize, 9]
        .iter()
        .enumerate()
        .map(|(i, &frames)| {
            use rand::Rng;
            let n = rng.gen_range(2..5);
            Utterance {
                utt_id: format!("g{i}"),
                features: (0..frames * f).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                frames,
                feature_dim: f,
                src: vec![],
                tgt: (0..n).map(|_| rng.gen_range(crate::tokens::FIRST_CONTENT..v)).collect(),
                class_id: None,
            }
        })
        .collect();
    let refs: Vec<&Utterance> = utts.iter().collect();
    let batch = Batch::<f64>::new(&refs)?;
    let ids: Vec<_> = model.store.ids().collect();
    let mut store = std::mem::take(&mut model.store);
    let shell = model;
    let smoothing = cfg.train.label_smoothing;
    let report = gradient_check(&mut store, &ids, 1e-5, per_tensor, cfg.seed, |tape: &mut Tape<'_, f64>| {
        let mut drop = Dropout::off();
        let enc = shell.encode(tape, &batch.features, &batch.feature_pad, &mut drop)?;
        let logits = shell.decode_train(tape, &enc, &batch.tgt_in, &batch.tgt_pad, &mut drop)?;
        cross_entropy(tape, logits, &batch.tgt_out, &batch.tgt_pad, smoothing)
    })?;
    let variant: Variant = cfg.variant();
    println!("variant = {variant}");
    println!("checked = {}", report.checked);
    println!("max_abs_err = {:.3e}", report.max_abs_err);
    println!("max_rel_err = {:.3e}", report.max_rel_err);
    std::io::stdout().flush().ok();
    if report.max_rel_err < 1e-4 {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "max relative error {:.3e} at element {} (analytic {}, numeric {})",
            report.max_rel_err, report.worst_index, report.analytic, report.numeric
        )))
    }
}
