//! `ablate`: train one probe per variant on a shared split and tabulate the
//! test-set results.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Subcommand};
use serde::Serialize;
use statelens::calib::{DEFAULT_BINS, DEFAULT_THRESHOLD};
use statelens::store::{Channel, ChannelSet, LayerRange, StateDataset};
use statelens::trainer::{train, TrainConfig};

use super::eval::score;
use super::{load_dataset, report_label, standard_split, OutArgs, ProbeArgs};
use crate::error::{fail, Category, CategoryExt};
use crate::output::OutputDir;

#[derive(Debug, Subcommand)]
pub enum AblateCommand {
    /// The seven non-empty channel combinations.
    #[command(args_override_self = true)]
    States(AblateArgs),
    /// Shallow, middle, deep and full layer bands.
    #[command(args_override_self = true)]
    Layers(AblateArgs),
    /// Full objective against classification loss alone.
    #[command(args_override_self = true)]
    Loss(AblateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub channels: String,
    pub layers: String,
    pub contrastive_weight: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub high_conf_error_rate: f64,
    pub selected_epoch: usize,
}

struct Variant {
    name: String,
    config: TrainConfig,
}

/// Channel combinations in reporting order.
pub fn state_combinations() -> Vec<(&'static str, ChannelSet)> {
    use Channel::{Act, Attn, Ff};
    let set = |c: &[Channel]| ChannelSet::of(c).expect("non-empty channel list");
    vec![
        ("Full", ChannelSet::ALL),
        ("FF+Attn", set(&[Ff, Attn])),
        ("FF+Act", set(&[Ff, Act])),
        ("Attn+Act", set(&[Attn, Act])),
        ("Attn", set(&[Attn])),
        ("FF", set(&[Ff])),
        ("Act", set(&[Act])),
    ]
}

/// Shallow, middle, deep and full bands for a model of `layers` layers.
///
/// A 32-layer model gives 0-4, 13-17, 27-31 and 0-31; other depths scale the
/// window width and the middle band's start proportionally.
pub fn layer_bands(layers: usize) -> Vec<(&'static str, LayerRange)> {
    let scaled = |k: usize| ((k * layers) as f64 / 32.0).round() as usize;
    let w = scaled(5).clamp(1, layers);
    let mid = scaled(13).min(layers - w);
    vec![
        ("shallow", LayerRange::new(0, w - 1)),
        ("middle", LayerRange::new(mid, mid + w - 1)),
        ("deep", LayerRange::new(layers - w, layers - 1)),
        ("full", LayerRange::full(layers)),
    ]
}

fn variants(cmd: &AblateCommand, base: &TrainConfig, ds: &StateDataset) -> anyhow::Result<Vec<Variant>> {
    let shape = ds.shape();
    Ok(match cmd {
        AblateCommand::States(_) => {
            if shape.channels != ChannelSet::ALL {
                return Err(fail(Category::Data, format!("state ablation needs all three channels, the data holds {{{}}}", shape.channels)));
            }
            state_combinations()
                .into_iter()
                .map(|(name, channels)| Variant { name: name.into(), config: TrainConfig { channels: Some(channels), ..base.clone() } })
                .collect()
        }
        AblateCommand::Layers(_) => layer_bands(shape.layers)
            .into_iter()
            .map(|(name, band)| Variant { name: name.into(), config: TrainConfig { layers: Some(band), ..base.clone() } })
            .collect(),
        AblateCommand::Loss(_) => {
            let mut cls_only = base.clone();
            cls_only.loss.contrastive_weight = 0.0;
            vec![Variant { name: "full".into(), config: base.clone() }, Variant { name: report_label("cls-only").into(), config: cls_only }]
        }
    })
}

fn to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,channels,layers,contrastive_weight,accuracy,ece,high_conf_error_rate,selected_epoch\n");
    for r in rows {
        out.push_str(&format!(
            "{},\"{}\",{},{},{},{},{},{}\n",
            r.variant, r.channels, r.layers, r.contrastive_weight, r.accuracy, r.ece, r.high_conf_error_rate, r.selected_epoch
        ));
    }
    out
}

pub fn run(cmd: AblateCommand) -> anyhow::Result<()> {
    let started = Instant::now();
    let (name, a) = match &cmd {
        AblateCommand::States(a) => ("ablate states", a),
        AblateCommand::Layers(a) => ("ablate layers", a),
        AblateCommand::Loss(a) => ("ablate loss", a),
    };
    let base = a.probe.train_config()?;
    let ds = load_dataset(&a.data)?;
    let (train_set, val_set, test_set) = standard_split(&ds, a.probe.seed)?;
    let mut rows = Vec::new();
    let mut seconds = Vec::new();
    println!("{:<16} {:<12} {:<8} {:>8} {:>8}", "variant", "channels", "layers", "accuracy", "ece");
    for v in variants(&cmd, &base, &ds)? {
        let t = Instant::now();
        let (model, log) = train(&v.config, &train_set, &val_set).map_err(|e| format!("{}: {e}", v.name)).category(Category::Training)?;
        let scored = score(&model, &test_set, DEFAULT_THRESHOLD, DEFAULT_BINS)?;
        let sel = model.selection();
        let row = AblationRow {
            variant: v.name,
            channels: sel.channels.to_string(),
            layers: sel.layers.to_string(),
            contrastive_weight: v.config.loss.contrastive_weight,
            accuracy: scored.report.probe.accuracy,
            ece: scored.report.probe.ece,
            high_conf_error_rate: scored.report.probe.high_conf_error_rate,
            selected_epoch: log.selected_epoch,
        };
        println!("{:<16} {:<12} {:<8} {:>8.4} {:>8.4}", row.variant, row.channels, row.layers, row.accuracy, row.ece);
        rows.push(row);
        seconds.push(t.elapsed().as_secs_f64());
    }
    let mut out = OutputDir::create(&a.out.out)?;
    out.write("ablation.csv", to_csv(&rows))?;
    out.write("ablation.json", serde_json::to_string_pretty(&rows).category(Category::Io)? + "\n")?;
    out.write_timing(started.elapsed().as_secs_f64(), serde_json::json!({ "variant_seconds": seconds }))?;
    out.finish(name, Some(a.probe.seed), a)?;
    Ok(())
}
