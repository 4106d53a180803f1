//! `train`: fit a probe on the training part of a corpus and report on its
//! held-out test part.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;
use statelens::calib::{DEFAULT_BINS, DEFAULT_THRESHOLD};
use statelens::probe::encode_checkpoint;
use statelens::store::encode_dataset;
use statelens::trainer::{train, train_last_hidden_baseline};

use super::eval::{print_summary, score, write_report};
use super::{load_dataset, standard_split, OutArgs, ProbeArgs, ProbeKind};
use crate::error::{Category, CategoryExt};
use crate::output::OutputDir;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// ISTD corpus; split 70/10/20 into train, validation and test.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(a: TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let config = a.probe.train_config()?;
    let ds = load_dataset(&a.data)?;
    let (train_set, val_set, test_set) = standard_split(&ds, a.probe.seed)?;
    let (model, log) = match a.probe.probe {
        ProbeKind::Full => train(&config, &train_set, &val_set),
        ProbeKind::LastHidden => train_last_hidden_baseline(&config, &train_set, &val_set),
    }
    .category(Category::Training)?;
    let scored = score(&model, &test_set, DEFAULT_THRESHOLD, DEFAULT_BINS)?;

    let mut out = OutputDir::create(&a.out.out)?;
    out.write("model.ckpt", encode_checkpoint(&model).category(Category::Io)?)?;
    out.write("train_log.json", log.to_json() + "\n")?;
    out.write("train_log.csv", log.to_csv())?;
    out.write("test.istd", encode_dataset(&test_set).category(Category::Data)?)?;
    write_report(&mut out, &scored, &test_set)?;
    let detail: serde_json::Value = serde_json::from_str(&log.timing_json()).category(Category::Io)?;
    out.write_timing(started.elapsed().as_secs_f64(), detail)?;
    out.finish("train", Some(a.probe.seed), &a)?;
    println!("selected epoch {} of {}{}", log.selected_epoch, log.epochs.len(), if log.stopped_early { " (stopped early)" } else { "" });
    print_summary(&scored.report);
    Ok(())
}
