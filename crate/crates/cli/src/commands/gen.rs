//! `gen synthetic` and `gen toylm-corpus`.

use std::time::Instant;

use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use statelens::store::{encode_dataset, Channel, LayerRange};
use statelens::toylm::{generate_kv_corpus, generate_synthetic, table_accuracy, train_toy_lm, KvTask, SyntheticTaskSpec, TaskKind, ToyLmConfig, VocabLayout};

use super::OutArgs;
use crate::error::{Category, CategoryExt};
use crate::output::OutputDir;

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Gaussian state corpus with a planted or clustered class structure.
    #[command(args_override_self = true)]
    Synthetic(SyntheticArgs),
    /// Train a toy LM on a key-value table and record its states on queries.
    #[command(name = "toylm-corpus", args_override_self = true)]
    ToylmCorpus(ToylmArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Planted,
    Cluster,
}

#[derive(Debug, Args, Serialize)]
pub struct SyntheticArgs {
    #[arg(long, value_enum, default_value = "planted")]
    pub preset: Preset,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Class separation in units of the noise scale.
    #[arg(long, default_value_t = 1.5)]
    pub strength: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Channel carrying the planted direction.
    #[arg(long, default_value = "ff")]
    pub signal_channel: String,
    /// Layers carrying the planted direction; the middle third by default.
    #[arg(long)]
    pub signal_layers: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base name of the ISTD file.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ToylmArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Probability that a query's key is in the trained table.
    #[arg(long, default_value_t = 0.5)]
    pub coverage: f64,
    #[arg(long, default_value_t = 32)]
    pub table_size: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub context: usize,
    /// Optimisation steps for the toy LM.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(cmd: GenCommand) -> anyhow::Result<()> {
    match cmd {
        GenCommand::Synthetic(a) => synthetic(a),
        GenCommand::ToylmCorpus(a) => toylm(a),
    }
}

fn synthetic(a: SyntheticArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let spec = SyntheticTaskSpec {
        kind: match a.preset {
            Preset::Planted => TaskKind::PlantedSignal,
            Preset::Cluster => TaskKind::ClusterStructured,
        },
        n: a.n,
        signal_strength: a.strength,
        signal_channel: a.signal_channel.parse::<Channel>().category(Category::Config)?,
        signal_layers: a.signal_layers.as_deref().map(str::parse::<LayerRange>).transpose().category(Category::Config)?,
        noise_scale: a.noise,
        seed: a.seed,
        ..SyntheticTaskSpec::default()
    };
    let ds = generate_synthetic(&spec, a.layers, a.dim).category(Category::Config)?;
    let mut out = OutputDir::create(&a.out.out)?;
    let file = format!("{}.istd", a.name);
    out.write(&file, encode_dataset(&ds).category(Category::Data)?)?;
    out.write_timing(started.elapsed().as_secs_f64(), serde_json::Value::Null)?;
    out.finish("gen synthetic", Some(a.seed), &a)?;
    println!("wrote {} instances {} positive rate {:.3} to {}", ds.len(), ds.shape(), ds.positive_rate(), a.out.out.join(file).display());
    Ok(())
}

#[derive(Serialize)]
struct LmReport {
    in_table_accuracy: f64,
    out_of_table_accuracy: f64,
    chance: f64,
    positive_rate: f64,
}

fn toylm(a: ToylmArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let config = ToyLmConfig { vocab_size: 64, layers: a.layers, dim: a.dim, heads: a.heads, context: a.context, seed: a.seed };
    config.validate().category(Category::Config)?;
    let layout = VocabLayout::new(config.vocab_size).category(Category::Config)?;
    let task = KvTask::generate(layout, a.table_size, a.seed).category(Category::Config)?;
    let lm = train_toy_lm(config, &task.known, a.steps).category(Category::Training)?;
    let spec = SyntheticTaskSpec { kind: TaskKind::KvRecall, n: a.n, coverage: a.coverage, seed: a.seed, ..SyntheticTaskSpec::default() };
    let ds = generate_kv_corpus(&lm, &task, &spec).category(Category::Config)?;
    let report = LmReport {
        in_table_accuracy: table_accuracy(&lm, &task.known, 8, a.seed).category(Category::Training)?,
        out_of_table_accuracy: if task.unknown.is_empty() { f64::NAN } else { table_accuracy(&lm, &task.unknown, 8, a.seed).category(Category::Training)? },
        chance: 1.0 / layout.value_count() as f64,
        positive_rate: ds.positive_rate(),
    };

    let mut out = OutputDir::create(&a.out.out)?;
    out.write("corpus.istd", encode_dataset(&ds).category(Category::Data)?)?;
    out.write("kv_table.txt", task.known.to_text())?;
    out.write("kv_heldout.txt", task.unknown.to_text())?;
    out.write("lm_report.json", serde_json::to_string_pretty(&report)? + "\n")?;
    out.write_timing(started.elapsed().as_secs_f64(), serde_json::Value::Null)?;
    out.finish("gen toylm-corpus", Some(a.seed), &a)?;
    println!(
        "toy LM in-table accuracy {:.3}, out-of-table {:.3} (chance {:.3}); wrote {} instances, positive rate {:.3}",
        report.in_table_accuracy,
        report.out_of_table_accuracy,
        report.chance,
        ds.len(),
        report.positive_rate
    );
    Ok(())
}
