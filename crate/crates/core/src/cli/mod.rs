//! Command-line front end.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::Preset;

pub use commands::{
    cmd_eval, cmd_finetune, cmd_inspect_codebook, cmd_interpret, cmd_pretrain, cmd_synth, cmd_tokenize, holdout_split,
    manifest_path, read_token_dir, tokens_path, IndexedGrid, InterpretSummary,
};
pub use config::{AnalysisConfig, Overrides, RunConfig, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(
    name = "eegformer",
    version,
    about = "Vector-quantized Transformer pretraining, fine-tuning and token analysis for EEG windows",
    after_help = "Settings come from --config (flat `key = value` lines) and are overridden by flags.\n\
                  All randomness derives from the root seed (default 7)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed (overrides `seed`)
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted spike-and-wave bursts.
    #[command(after_help = "Writes under --out: manifest.csv, records/*.eegr, masks/*.eegr, config.txt")]
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the tokenizer on unlabelled windows.
    #[command(after_help = "Writes under --out: checkpoint.eegc, loss.csv, val_loss.csv, config.txt, \
                            checkpoints/step_NNNNNN.eegc (when train.checkpoint_interval > 0)")]
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest.csv
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Model size preset
        #[arg(long, value_parser = ["small", "base", "large"])]
        preset: Option<String>,
        /// Subtract the commitment term instead of adding it
        #[arg(long)]
        paper_sign: bool,
    },
    /// Write each window's token grid.
    #[command(after_help = "Writes under --out: tokens/index.csv, tokens/<window>.csv, \
                            tokens/truth_spans.csv, tokens/geometry.txt")]
    Tokenize {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset directory or manifest.csv
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Train a classification head under a downstream regime and evaluate it on the holdout split.
    #[command(after_help = "Writes under --out: model.eegc, finetune_loss.csv, eval.csv, eval.txt, config.txt")]
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint (required except for supervised)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory or manifest.csv
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Training regime
        #[arg(long, value_parser = ["supervised", "linear_probe", "finetune"])]
        regime: Option<String>,
        /// Model size preset (supervised runs without a checkpoint)
        #[arg(long, value_parser = ["small", "base", "large"])]
        preset: Option<String>,
        /// Subtract the commitment term in the auxiliary objective
        #[arg(long)]
        paper_sign: bool,
    },
    /// Evaluate a checkpoint with a head on every window of a dataset.
    #[command(after_help = "Writes under --out: eval.csv, eval.txt")]
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint with a classification head
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset directory or manifest.csv
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Fit naive Bayes on token n-grams, rank features and localize them.
    #[command(after_help = "Writes under --out: nb_summary.txt, top_features.csv, nb_scores.csv, \
                            localization.csv, localization.txt")]
    Interpret {
        #[command(flatten)]
        common: Common,
        /// Token directory written by `tokenize` (or its --out)
        #[arg(long, value_name = "DIR")]
        tokens: PathBuf,
        /// Comma-separated n-gram orders, each in 2..=4
        #[arg(long, value_name = "LIST")]
        ngrams: Option<String>,
        /// Number of top features to rank and localize
        #[arg(long, value_name = "N")]
        topk: Option<usize>,
    },
    /// Report codebook usage, perplexity and nearest-neighbor distances.
    #[command(after_help = "Writes under --out: codebook_usage.csv, codebook_neighbors.csv, codebook_summary.txt")]
    InspectCodebook {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to inspect
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset for usage counts (defaults to the configured synthetic set)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
}

fn config_for(common: &Common, mut overrides: Overrides) -> Result<RunConfig> {
    overrides.seed = common.seed;
    if let Some(p) = &common.config {
        if !p.is_file() {
            return Err(Error::InvalidInput(format!("{}: no such config file", p.display())));
        }
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn preset(p: &Option<String>) -> Result<Option<Preset>> {
    p.as_deref().map(str::parse).transpose()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{}: {what} not found", path.display())))
    }
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = config_for(&common, Overrides::default())?;
            cmd_synth(&cfg, &common.out)?;
        }
        Command::Pretrain {
            common,
            data,
            preset: p,
            paper_sign,
        } => {
            let o = Overrides {
                preset: preset(&p)?,
                paper_sign,
                ..Overrides::default()
            };
            let cfg = config_for(&common, o)?;
            require(&data, "dataset")?;
            cmd_pretrain(&cfg, &data, &common.out)?;
        }
        Command::Tokenize { common, checkpoint, data } => {
            let cfg = config_for(&common, Overrides::default())?;
            require(&checkpoint, "checkpoint")?;
            require(&data, "dataset")?;
            cmd_tokenize(&cfg, &checkpoint, &data, &common.out)?;
        }
        Command::Finetune {
            common,
            checkpoint,
            data,
            regime,
            preset: p,
            paper_sign,
        } => {
            let o = Overrides {
                preset: preset(&p)?,
                regime,
                paper_sign,
                ..Overrides::default()
            };
            let cfg = config_for(&common, o)?;
            if let Some(c) = &checkpoint {
                require(c, "checkpoint")?;
            }
            require(&data, "dataset")?;
            cmd_finetune(&cfg, checkpoint.as_deref(), &data, &common.out)?;
        }
        Command::Eval { common, checkpoint, data } => {
            let cfg = config_for(&common, Overrides::default())?;
            require(&checkpoint, "checkpoint")?;
            require(&data, "dataset")?;
            cmd_eval(&cfg, &checkpoint, &data, &common.out)?;
        }
        Command::Interpret {
            common,
            tokens,
            ngrams,
            topk,
        } => {
            let o = Overrides {
                ngrams,
                topk,
                ..Overrides::default()
            };
            let cfg = config_for(&common, o)?;
            require(&tokens, "token directory")?;
            cmd_interpret(&cfg, &tokens, &common.out)?;
        }
        Command::InspectCodebook {
            common,
            checkpoint,
            data,
        } => {
            let cfg = config_for(&common, Overrides::default())?;
            require(&checkpoint, "checkpoint")?;
            if let Some(d) = &data {
                require(d, "dataset")?;
            }
            cmd_inspect_codebook(&cfg, &checkpoint, data.as_deref(), &common.out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flags_fail() {
        assert!(Cli::try_parse_from(["eegformer", "synth", "--out", "x", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["eegformer", "synth", "--out", "x"]).is_ok());
        assert!(Cli::try_parse_from(["eegformer", "finetune", "--out", "x", "--data", "d", "--regime", "lp"]).is_err());
    }
}
