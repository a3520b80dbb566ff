//! `zed`: fit topics, prune, train, embed, retrieve and evaluate.

mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "zed", version, about = "Zero-exemplar event retrieval with joint text and video embeddings")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides; overrides win.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set learning_rate=0.05` or `--set classifier.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn all_overrides(&self) -> Vec<String> {
        let mut out = self.overrides.clone();
        if let Some(seed) = self.seed {
            out.push(format!("seed={seed}"));
        }
        out
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a topic model on a plain-text corpus (one document per line).
    LsiTrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Also fit on the event articles of this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Project texts into topic space, or into the embedding space with `--model`.
    TextEmbed {
        #[arg(long)]
        lsi: PathBuf,
        /// JSON lines of `{"query_id", "text"}`.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        queries: Option<PathBuf>,
        /// Embed the event articles of a manifest instead, keyed by event id.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove videos that a cross-validated classifier keeps misclassifying.
    Prune {
        #[arg(long)]
        manifest: PathBuf,
        /// Pruned manifest.
        #[arg(long)]
        out: PathBuf,
        /// Full report with per-round flags.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        lsi: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Embed the videos of a manifest with a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the videos of a manifest for each text query.
    Retrieve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lsi: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the best `N` videos per query.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Score rankings against ground truth (per-query AP and mAP).
    Eval {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// JSON report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-query CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Similarity matrix between two embedding files.
    Simmatrix {
        #[arg(long)]
        a: PathBuf,
        /// Defaults to `--a`.
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long, default_value = "cosine")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    let numeric = err
        .chain()
        .any(|e| e.downcast_ref::<zed_core::Error>().is_some_and(zed_core::Error::is_numeric));
    if numeric {
        4
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
