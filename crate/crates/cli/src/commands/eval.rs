//! `eval`: calibration report of a trained probe on a corpus.
//!
//! `report.json` layout:
//!
//! ```text
//! {
//!   "label": "full" | "w/o contrastive" | "last hidden state",
//!   "model": { "tag", "encoder", "channels", "layers", "config_hash", "selected_epoch" },
//!   "data": { "n", "positive_rate" },
//!   "probe": CalibrationReport,
//!   "logit_baseline": CalibrationReport | null
//! }
//! ```
//!
//! `logit_baseline` is null unless every instance carries an answer
//! log-probability.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use statelens::calib::{box_plot_svg, confidence_distribution, logit_confidence, reliability_diagram_svg, CalibrationReport, DEFAULT_BINS, DEFAULT_THRESHOLD};
use statelens::probe::{read_checkpoint, ProbeModel};
use statelens::store::StateDataset;
use statelens::trainer::predict_dataset;

use super::{load_dataset, report_label, OutArgs};
use crate::error::{fail, Category, CategoryExt};
use crate::output::OutputDir;

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// ISTD corpus to score.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Confidence at or above which a prediction counts as "correct".
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub tag: String,
    pub encoder: String,
    pub channels: String,
    pub layers: String,
    pub config_hash: String,
    pub selected_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub model: ModelSummary,
    pub data: DataSummary,
    pub probe: CalibrationReport,
    pub logit_baseline: Option<CalibrationReport>,
}

/// Scores plus the report built from them.
pub struct Scored {
    pub confidences: Vec<f64>,
    pub labels: Vec<bool>,
    pub report: EvalReport,
}

pub fn summarize(model: &ProbeModel) -> ModelSummary {
    let meta = model.metadata();
    let selection = model.selection();
    ModelSummary {
        tag: meta.tag.clone(),
        encoder: model.config().kind.to_string(),
        channels: selection.channels.to_string(),
        layers: selection.layers.to_string(),
        config_hash: meta.config_hash.clone(),
        selected_epoch: meta.selected_epoch,
    }
}

pub fn score(model: &ProbeModel, ds: &StateDataset, threshold: f64, bins: usize) -> anyhow::Result<Scored> {
    if ds.shape() != model.input_shape() {
        return Err(fail(Category::Data, format!("model expects tensors {} but the data holds {}", model.input_shape(), ds.shape())));
    }
    let labels = ds.binary_labels().ok_or_else(|| fail(Category::Data, "evaluation data has unlabeled instances"))?;
    let confidences = predict_dataset(model, ds).category(Category::Data)?;
    let probe = CalibrationReport::with_options(&confidences, &labels, threshold, bins).category(Category::Data)?;
    let logprobs: Option<Vec<f64>> = ds.instances().iter().map(|i| i.answer_logprob()).collect();
    let logit_baseline = match logprobs {
        Some(lp) => {
            let conf = lp.into_iter().map(logit_confidence).collect::<Result<Vec<_>, _>>().category(Category::Data)?;
            Some(CalibrationReport::with_options(&conf, &labels, threshold, bins).category(Category::Data)?)
        }
        None => None,
    };
    let summary = summarize(model);
    let report = EvalReport {
        label: report_label(&summary.tag).to_string(),
        model: summary,
        data: DataSummary { n: ds.len(), positive_rate: ds.positive_rate() },
        probe,
        logit_baseline,
    };
    Ok(Scored { confidences, labels, report })
}

fn confidences_csv(s: &Scored, ds: &StateDataset) -> String {
    let mut out = String::from("id,label,confidence\n");
    for ((inst, c), y) in ds.instances().iter().zip(&s.confidences).zip(&s.labels) {
        out.push_str(&format!("{},{},{}\n", inst.id(), *y as u8, c));
    }
    out
}

/// Writes the report, CSVs and plots for `scored` into `out`.
pub fn write_report(out: &mut OutputDir, s: &Scored, ds: &StateDataset) -> anyhow::Result<()> {
    let r = &s.report;
    out.write("report.json", serde_json::to_string_pretty(r).category(Category::Io)? + "\n")?;
    let mut csv = r.probe.to_csv();
    if let Some(b) = &r.logit_baseline {
        csv.push_str(&b.to_csv().lines().skip(1).map(|l| format!("logit_{l}\n")).collect::<String>());
    }
    out.write("report.csv", csv)?;
    out.write("confidences.csv", confidences_csv(s, ds))?;
    let dist = confidence_distribution(&s.confidences, &s.labels).category(Category::Data)?;
    out.write("box_plot.svg", box_plot_svg(&dist, &format!("Confidence by outcome ({})", r.label)))?;
    out.write("reliability.svg", reliability_diagram_svg(&r.probe.bins, &format!("Reliability ({})", r.label)))?;
    Ok(())
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    if a.bins == 0 {
        return Err(fail(Category::Config, "--bins must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(fail(Category::Config, format!("--threshold {} is outside [0, 1]", a.threshold)));
    }
    let model = read_checkpoint(&a.model).map_err(|e| format!("{}: {e}", a.model.display())).category(Category::Data)?;
    let ds = load_dataset(&a.data)?;
    let scored = score(&model, &ds, a.threshold, a.bins)?;
    let mut out = OutputDir::create(&a.out.out)?;
    write_report(&mut out, &scored, &ds)?;
    out.write_timing(started.elapsed().as_secs_f64(), serde_json::Value::Null)?;
    out.finish("eval", Some(model.metadata().seed), &a)?;
    print_summary(&scored.report);
    Ok(())
}

pub fn print_summary(r: &EvalReport) {
    println!("{:<20} {:>8} {:>8} {:>6}", "method", "accuracy", "ece", "n");
    println!("{:<20} {:>8.4} {:>8.4} {:>6}", r.label, r.probe.accuracy, r.probe.ece, r.probe.n);
    if let Some(b) = &r.logit_baseline {
        println!("{:<20} {:>8.4} {:>8.4} {:>6}", "logit baseline", b.accuracy, b.ece, b.n);
    }
}
