use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphmatch::commands;
use graphmatch::config::RunConfig;
use graphmatch::{Error, Result};

/// Instance-label graph matching for multi-label classification.
///
/// Settings resolve in order: built-in defaults, `--config` file, `--set`
/// overrides, command flags, `--seed`. Every command writes the result to
/// `<out>/config.resolved`.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset to score.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label embedding file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test splits and label embeddings.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes model.ckpt and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation set, scored after every epoch.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a dataset and write the metric report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Per-label scores, predicted labels and responsible instances.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Only this record.
        #[arg(long)]
        id: Option<String>,
    },
    /// Compare analytic and finite-difference gradients on a seeded micro graph.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn set_path(cfg: &mut RunConfig, key: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(p) => cfg.set(key, &p.to_string_lossy()),
        None => Ok(()),
    }
}

fn resolve(common: &Common, flags: &[(&str, &Option<PathBuf>)]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    for (key, p) in flags {
        set_path(&mut cfg, key, p)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn model_flags(m: &ModelArgs) -> [(&'static str, &Option<PathBuf>); 3] {
    [("checkpoint", &m.checkpoint), ("data.test", &m.data), ("data.embeddings", &m.embeddings)]
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = resolve(&common, &[])?;
            let out = commands::cmd_synth(&cfg, &common.out)?;
            println!(
                "wrote {} train and {} test records over {} labels to {}",
                out.train.len(),
                out.test.len(),
                out.vocab.len(),
                common.out.display()
            );
        }
        Command::Train {
            common,
            train,
            val,
            embeddings,
            resume,
        } => {
            let flags = [
                ("data.train", &train),
                ("data.val", &val),
                ("data.embeddings", &embeddings),
                ("train.resume", &resume),
            ];
            let cfg = resolve(&common, &flags)?;
            let out = commands::cmd_train(&cfg, &common.out)?;
            if let Some(last) = out.history.last() {
                println!("epoch {} mean loss {}", last.epoch, last.mean_loss);
            }
            println!("wrote {}", out.checkpoint.display());
        }
        Command::Eval { common, model } => {
            let cfg = resolve(&common, &model_flags(&model))?;
            print!("{}", commands::cmd_eval(&cfg, &common.out)?.report);
        }
        Command::Predict { common, model, id } => {
            let mut cfg = resolve(&common, &model_flags(&model))?;
            if let Some(id) = id {
                cfg.predict_id = Some(id);
            }
            print!("{}", commands::cmd_predict(&cfg, &common.out)?.jsonl);
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = resolve(&common, &[])?;
            let report = commands::cmd_gradcheck(&cfg, &common.out, corrupt.as_deref())?;
            print!("{}", report.to_text());
            let failed = report.failures();
            if !failed.is_empty() {
                return Err(Error::Numeric(format!("gradient mismatch in {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
