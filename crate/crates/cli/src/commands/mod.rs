//! Subcommand implementations and the flag groups they share.

pub mod ablate;
pub mod bound;
pub mod eval;
pub mod gen;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use statelens::objective::LossConfig;
use statelens::probe::EncoderConfig;
use statelens::store::{read_dataset, split, ChannelSet, LayerRange, SplitFractions, StateDataset};
use statelens::trainer::{Optimizer, TrainConfig};

use crate::error::{Category, CategoryExt};

/// Output directory flag, defaulting to `$STATELENS_OUT_DIR`.
#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Directory for artifacts and the manifest.
    #[arg(long, env = "STATELENS_OUT_DIR", value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    /// Encoder plus classifier on the selected states.
    Full,
    /// Classifier on the final layer's activation only, no contrastive term.
    LastHidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

/// Probe architecture and optimisation flags.
#[derive(Clone, Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// Encoder preset: cnn, transformer, transformer-full or flat.
    #[arg(long, default_value = "cnn")]
    pub encoder: String,
    #[arg(long, value_enum, default_value = "full")]
    pub probe: ProbeKind,
    /// Length of the embedding z (encoder presets only).
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// State channels read by the probe, e.g. `ff,attn` or `all`.
    #[arg(long)]
    pub channels: Option<String>,
    /// Inclusive layer band read by the probe, e.g. `2-4`.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Contrastive temperature τ.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Negatives per anchor.
    #[arg(long, default_value_t = 8)]
    pub negatives: usize,
    /// Put the positive pair in the contrastive denominator.
    #[arg(long)]
    pub include_positive: bool,
    #[arg(long, default_value_t = 1.0)]
    pub contrastive_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub classification_weight: f64,
    /// Seed for the split, initialisation, batching and dropout.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ProbeArgs {
    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let mut encoder =
            EncoderConfig::preset(&self.encoder).ok_or_else(|| crate::error::fail(Category::Config, format!("unknown encoder preset {:?}", self.encoder)))?;
        if let Some(e) = self.embed_dim {
            encoder.embed_dim = e;
        }
        let channels = self.channels.as_deref().map(str::parse::<ChannelSet>).transpose().category(Category::Config)?;
        let layers = self.layers.as_deref().map(str::parse::<LayerRange>).transpose().category(Category::Config)?;
        let config = TrainConfig {
            learning_rate: self.lr,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => Optimizer::Adam,
                OptimizerArg::Sgd => Optimizer::Sgd,
            },
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            loss: LossConfig {
                temperature: self.temperature,
                negatives_per_anchor: self.negatives,
                include_positive_in_denominator: self.include_positive,
                contrastive_weight: self.contrastive_weight,
                classification_weight: self.classification_weight,
            },
            encoder,
            channels,
            layers,
        };
        config.validate().category(Category::Config)?;
        Ok(config)
    }
}

pub fn load_dataset(path: &Path) -> anyhow::Result<StateDataset> {
    read_dataset(path).map_err(|e| format!("{}: {e}", path.display())).category(Category::Data)
}

/// Seeded 70/10/20 train/validation/test split.
pub fn standard_split(ds: &StateDataset, seed: u64) -> anyhow::Result<(StateDataset, StateDataset, StateDataset)> {
    let fractions = SplitFractions::new(0.7, 0.1, 0.2).category(Category::Config)?;
    split(ds, fractions, seed).category(Category::Data)
}

/// Human label of a model tag in reports.
pub fn report_label(tag: &str) -> &str {
    match tag {
        "cls-only" => "w/o contrastive",
        "last-hidden" => "last hidden state",
        other => other,
    }
}
