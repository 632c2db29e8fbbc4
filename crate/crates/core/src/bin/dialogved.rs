use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use dialogved::cli::{cmd_chat, cmd_evaluate, cmd_finetune, cmd_generate, cmd_pretrain, RunConfig};

#[derive(Parser)]
#[command(
    name = "dialogved",
    version,
    about = "Train and run a latent-variable dialog response generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; unset fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set optim.learning_rate=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> anyhow::Result<RunConfig> {
        self.resolve_with(None, extra)
    }

    /// The model section defaults to the architecture stored in `ckpt`.
    fn resolve_with(
        &self,
        ckpt: Option<&Path>,
        extra: &[(&str, Option<String>)],
    ) -> anyhow::Result<RunConfig> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("optim.seed={s}"));
            sets.push(format!("decode.seed={s}"));
        }
        for (key, value) in extra {
            if let Some(v) = value {
                sets.push(format!("{key}={v}"));
            }
        }
        Ok(match ckpt {
            Some(c) => RunConfig::resolve_for_checkpoint(c, self.config.as_deref(), &sets)?,
            None => RunConfig::resolve(self.config.as_deref(), &sets)?,
        })
    }
}

fn path_json(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref()
        .map(|p| serde_json::Value::String(p.display().to_string()).to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train from scratch with span masking.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint; keeps the epoch with the lowest validation loss.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode one response per input dialog.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// greedy, beam or topk.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Score hypotheses against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interactive session on standard input.
    Chat {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stderr = std::io::stderr();
    match cli.command {
        Command::Pretrain { cfg, train, out } => {
            let run = cfg.resolve(&[
                ("data.train", path_json(&train)),
                ("data.output", path_json(&out)),
            ])?;
            let outcome = cmd_pretrain(&run, &mut stderr)?;
            println!(
                "{}",
                serde_json::json!({"checkpoint": run.data.output, "steps": outcome.steps, "epoch_losses": outcome.epoch_losses})
            );
        }
        Command::Finetune {
            cfg,
            init,
            train,
            valid,
            out,
        } => {
            let run = cfg.resolve_with(
                Some(&init),
                &[
                    ("data.train", path_json(&train)),
                    ("data.valid", path_json(&valid)),
                    ("data.output", path_json(&out)),
                ],
            )?;
            let outcome = cmd_finetune(&run, &init, &mut stderr)?;
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": run.data.output,
                    "steps": outcome.steps,
                    "selected_epoch": outcome.selected_epoch,
                    "valid_losses": outcome.valid_losses,
                })
            );
        }
        Command::Generate {
            cfg,
            ckpt,
            input,
            out,
            strategy,
        } => {
            let strategy = strategy.map(|s| serde_json::Value::String(s).to_string());
            let run = cfg.resolve_with(Some(&ckpt), &[("decode.strategy", strategy)])?;
            let n = cmd_generate(&run, &ckpt, &input, &out)?;
            println!("{}", serde_json::json!({"output": out, "responses": n}));
        }
        Command::Evaluate {
            hyp,
            reference,
            out,
        } => {
            let report = serde_json::to_string(&cmd_evaluate(&hyp, &reference)?)?;
            match out {
                Some(p) => std::fs::write(&p, format!("{report}\n"))
                    .with_context(|| p.display().to_string())?,
                None => println!("{report}"),
            }
        }
        Command::Chat { cfg, ckpt } => {
            let run = cfg.resolve_with(Some(&ckpt), &[])?;
            cmd_chat(&run, &ckpt)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
