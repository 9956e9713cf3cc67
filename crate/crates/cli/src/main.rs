mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, EXIT_CONFIG};
use crate::config::{parse_pairs, resolve, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "difftsp", version, about = "Triple set prediction with discrete diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a denoiser and write a checkpoint plus a per-epoch log.
    Train(Common),
    /// Generate predicted triples with a trained checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (default: OUT/checkpoint.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a predictions file against the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Predictions file (default: OUT/predictions.tsv).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "CSV")]
    snapshot_steps: Option<String>,
    #[arg(long, value_parser = ["cwa", "rs-powa"])]
    assumption: Option<String>,
    /// `default` or a similarity file.
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long, value_parser = ["standard", "repaint"])]
    mode: Option<String>,
    /// Override any config key, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

const PATH_KEYS: &[&str] = &["data.train", "data.valid", "data.test", "out", "eval.similarity"];

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("sample.snapshot_steps", self.snapshot_steps.clone());
        push("eval.assumption", self.assumption.clone());
        push("eval.similarity", self.similarity.clone());
        push("mode", self.mode.clone());
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| ConfigError { field: item.clone(), message: "expected KEY=VALUE".into() })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn load(&self) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| {
            CliError::Config(ConfigError { field: "--config".into(), message: format!("{}: {e}", self.config.display()) })
        })?;
        let mut pairs = parse_pairs(&text).map_err(CliError::Config)?;
        rebase_paths(&mut pairs, self.config.parent().unwrap_or(Path::new(".")));
        let cfg = resolve(pairs, &self.overrides().map_err(CliError::Config)?, true).map_err(CliError::Config)?;
        Ok(cfg)
    }
}

/// Relative paths in a config file are taken relative to the file's directory.
fn rebase_paths(pairs: &mut BTreeMap<String, String>, base: &Path) {
    for key in PATH_KEYS {
        if let Some(v) = pairs.get_mut(*key) {
            if *key == "eval.similarity" && v == "default" {
                continue;
            }
            if !v.is_empty() && Path::new(v.as_str()).is_relative() {
                *v = base.join(v.as_str()).display().to_string();
            }
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("DIFFTSP_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(ConfigError { field: "DIFFTSP_THREADS".into(), message: format!("expected a positive integer, got {v:?}") })
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Train(common) => commands::train(&common.load()?),
        Command::Sample { common, checkpoint } => commands::sample(&common.load()?, checkpoint),
        Command::Eval { common, predictions } => commands::eval(&common.load()?, predictions),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
