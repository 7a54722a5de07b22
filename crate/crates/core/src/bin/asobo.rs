//! Command-line front-end. Settings come from the built-in defaults, then
//! `--config`, then each `--set key=value` in order, then `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asobo::config::PipelineConfig;
use asobo::pipeline::{self, EvalMode, EvalReport};
use asobo::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "asobo", version, about = "Beamformer-bank front-end for voice activity and overlap detection")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted `key=value` override, e.g. `--set array.filters=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design the super-directive filter bank.
    Design,
    /// Simulate spatialized scenarios with labels and a manifest.
    Simulate {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train the attention combinator and classifier.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run a checkpoint over WAV files or directories of WAV files.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Filter bank; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// `seg` (VAD/OSD) or `loc` (attention-weight localization).
        #[arg(long, default_value = "seg")]
        mode: EvalMode,
        /// Score even when config hashes differ.
        #[arg(long)]
        force: bool,
    },
}

fn wav_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "wav"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no WAV inputs found".into()));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let out: &Path = &cli.out;
    match cli.command {
        Command::Design => {
            let path = pipeline::cmd_design(&cfg, out)?;
            println!("wrote {}", path.display());
        }
        Command::Simulate { count } => {
            let path = pipeline::cmd_simulate(&cfg, count, out, cli.jobs)?;
            println!("wrote {count} scenarios, manifest {}", path.display());
        }
        Command::Train { manifest, bank, init } => {
            let res = pipeline::cmd_train(&cfg, &manifest, &bank, init.as_deref(), out, cli.jobs)?;
            match (res.losses.first(), res.losses.last()) {
                (Some(a), Some(b)) => println!("{} steps, loss {a:.4} -> {b:.4}", res.losses.len()),
                _ => println!("0 steps"),
            }
            println!("wrote {}", res.checkpoint.display());
        }
        Command::Infer {
            checkpoint,
            bank,
            inputs,
        } => {
            let wavs = wav_inputs(&inputs)?;
            let res = pipeline::cmd_infer(&cfg, &checkpoint, bank.as_deref(), &wavs, out, cli.jobs)?;
            for r in res {
                println!("{} ({} frames)", r.rttm.display(), r.frames);
            }
        }
        Command::Eval {
            pred,
            reference,
            mode,
            force,
        } => match pipeline::cmd_eval(&cfg, &pred, &reference, mode, force, out)? {
            EvalReport::Segmentation(r) => {
                let pct = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.2}"));
                println!(
                    "VAD FA {} Miss {} SER {}; OSD P {} R {} F1 {:.2} ({} files)",
                    pct(r.vad.fa_rate),
                    pct(r.vad.miss_rate),
                    pct(r.vad.ser),
                    pct(r.osd.precision),
                    pct(r.osd.recall),
                    r.osd.f1,
                    r.files
                );
            }
            EvalReport::Localization(r) => {
                println!(
                    "localization P {:.2} R {:.2} F1 {:.2} (tau {:.3}, {} scenarios)",
                    r.score.precision, r.score.recall, r.score.f1, r.tau, r.scenarios
                );
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
