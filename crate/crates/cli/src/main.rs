use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use asrnn::run::{self, DiagSample, ModelKind, RunConfig, OUT_DIR_ENV};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asrnn", version, about = "Adaptive-saturated RNN laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleKind {
    /// First held-out sequence of the checkpoint's task.
    Task,
    /// All-zero input of length `--steps`.
    Zero,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set optim.lr=1e-3`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Continue from `<out_dir>/checkpoint.json`.
        #[arg(long)]
        resume: bool,
    },
    /// Finite-difference check of a cell's analytic gradients.
    Gradcheck {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        dh: usize,
        #[arg(long)]
        dx: usize,
        #[arg(long = "T", value_name = "T")]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Plant an error in the analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Jacobian and saturation diagnostics of an asRNN checkpoint, as JSON.
    Diag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        t1: usize,
        #[arg(long)]
        t2: usize,
        #[arg(long, value_enum, default_value_t = SampleKind::Task)]
        sample: SampleKind,
        /// Sequence length for `--sample zero` (defaults to t2).
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn train(config: PathBuf, set: Vec<String>, resume: bool) -> Result<ExitCode> {
    let mut overrides = set;
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        overrides.push(format!("run.out_dir={}", toml_string(&dir)));
    }
    let cfg = RunConfig::load(&config, &overrides)?;
    let summary =
        run::train(&cfg, resume).with_context(|| format!("training {}", config.display()))?;
    if let Some(last) = summary.rows.last() {
        eprintln!(
            "iteration {}/{}: train {:.6} eval {:.6} acc {:.4}",
            summary.iteration,
            summary.total_iterations,
            last.train_loss,
            last.eval_loss,
            last.accuracy
        );
    }
    eprintln!("outputs in {}", summary.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn toml_string(s: &str) -> String {
    format!("{:?}", s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            set,
            resume,
        } => train(config, set, resume),
        Command::Gradcheck {
            model,
            dh,
            dx,
            steps,
            seed,
            corrupt,
        } => run::gradcheck(model, dh, dx, steps, seed, corrupt)
            .map_err(Into::into)
            .map(|r| {
                for t in &r.per_tensor {
                    println!(
                        "{:<8} {:>6} coords  max rel err {:.3e}",
                        t.name, t.coordinates, t.max_rel_error
                    );
                }
                println!(
                    "worst {:.3e} (threshold {:.0e}): {}",
                    r.worst,
                    r.threshold,
                    if r.pass { "PASS" } else { "FAIL" }
                );
                if r.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }),
        Command::Diag {
            checkpoint,
            t1,
            t2,
            sample,
            steps,
        } => {
            let sample = match sample {
                SampleKind::Task => DiagSample::Task,
                SampleKind::Zero => DiagSample::Zero {
                    steps: steps.unwrap_or(t2.max(1)),
                },
            };
            run::diag_from_checkpoint(&checkpoint, t1, t2, &sample)
                .map_err(anyhow::Error::from)
                .and_then(|r| Ok(serde_json::to_string_pretty(&r)?))
                .map(|json| {
                    println!("{json}");
                    ExitCode::SUCCESS
                })
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
