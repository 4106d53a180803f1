//! Calibration metrics for correctness-confidence scores, plus the
//! non-learned baselines (answer log-probability and temperature scaling).
//!
//! Labels are `true` when the model's answer was correct. A prediction counts
//! as "correct" when its confidence is at least the threshold.

mod plot;
mod temperature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plot::{box_plot_svg, reliability_diagram_svg};
pub use temperature::{fit_temperature, temperature_grid, TemperatureFit, TemperatureObjective, GRID_MAX, GRID_MIN, GRID_POINTS};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_BINS: usize = 10;
pub const HIGH_CONFIDENCE_BAR: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{confidences} confidences but {labels} labels")]
    LengthMismatch { confidences: usize, labels: usize },
    #[error("no instances to score")]
    Empty,
    #[error("confidence {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("log-probability must be finite and <= 0, got {0}")]
    InvalidLogprob(f64),
    #[error("temperature fitting needs both classes in the validation set")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

fn validate(confidences: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if confidences.len() != labels.len() {
        return Err(MetricError::LengthMismatch { confidences: confidences.len(), labels: labels.len() });
    }
    if confidences.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(MetricError::OutOfRange(bad));
    }
    Ok(())
}

/// Fraction of instances whose thresholded confidence (`ĉ >= threshold` means
/// "predicted correct") matches the label.
pub fn accuracy_at_threshold(confidences: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricError> {
    validate(confidences, labels)?;
    let hits = confidences.iter().zip(labels).filter(|(&c, &y)| (c >= threshold) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// 1-based bin for a confidence under `((m-1)/M, m/M]`; zero goes to bin 1.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut idx = ((confidence * m).ceil() as usize).clamp(1, bins);
    // ceil can land one bin off when c·M rounds across a boundary.
    while idx > 1 && confidence <= (idx - 1) as f64 / m {
        idx -= 1;
    }
    while idx < bins && confidence > idx as f64 / m {
        idx += 1;
    }
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of label-1 instances in the bin (0 when empty).
    pub accuracy: f64,
    /// Mean confidence in the bin (0 when empty).
    pub confidence: f64,
}

pub fn reliability_bins(confidences: &[f64], labels: &[bool], bins: usize) -> Result<Vec<BinStats>, MetricError> {
    validate(confidences, labels)?;
    if bins == 0 {
        return Err(MetricError::ZeroBins);
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    for (&c, &y) in confidences.iter().zip(labels) {
        let b = bin_index(c, bins) - 1;
        count[b] += 1;
        correct[b] += y as usize;
        conf_sum[b] += c;
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            BinStats {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: n,
                accuracy: if n > 0 { correct[b] as f64 / n as f64 } else { 0.0 },
                confidence: if n > 0 { conf_sum[b] / n as f64 } else { 0.0 },
            }
        })
        .collect())
}

/// Bin-weighted mean |accuracy − confidence|; empty bins contribute 0.
pub fn ece_from_bins(bins: &[BinStats]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter().map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs()).sum()
}

pub fn ece(confidences: &[f64], labels: &[bool], bins: usize) -> Result<f64, MetricError> {
    reliability_bins(confidences, labels, bins).map(|b| ece_from_bins(&b))
}

/// Fraction of all instances that are incorrect yet scored above `bar`.
pub fn high_confidence_error_rate(confidences: &[f64], labels: &[bool], bar: f64) -> Result<f64, MetricError> {
    validate(confidences, labels)?;
    let bad = confidences.iter().zip(labels).filter(|(&c, &y)| !y && c > bar).count();
    Ok(bad as f64 / labels.len() as f64)
}

/// Logit baseline: confidence is the exponentiated mean answer log-probability.
pub fn logit_confidence(answer_logprob: f64) -> Result<f64, MetricError> {
    if !answer_logprob.is_finite() || answer_logprob > 0.0 {
        return Err(MetricError::InvalidLogprob(answer_logprob));
    }
    Ok(answer_logprob.exp())
}

/// Min, quartiles and max with linear interpolation between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite confidences"));
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            count: v.len(),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Per-class confidence summary; a class with no instances is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceDistribution {
    pub correct: Option<FiveNumber>,
    pub incorrect: Option<FiveNumber>,
}

impl ConfidenceDistribution {
    /// One row per class, suitable for box plots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,count,min,q1,median,q3,max\n");
        for (name, s) in [("correct", &self.correct), ("incorrect", &self.incorrect)] {
            match s {
                Some(s) => out.push_str(&format!("{name},{},{},{},{},{},{}\n", s.count, s.min, s.q1, s.median, s.q3, s.max)),
                None => out.push_str(&format!("{name},0,,,,,\n")),
            }
        }
        out
    }
}

pub fn confidence_distribution(confidences: &[f64], labels: &[bool]) -> Result<ConfidenceDistribution, MetricError> {
    validate(confidences, labels)?;
    let pick = |want: bool| -> Vec<f64> { confidences.iter().zip(labels).filter(|(_, &y)| y == want).map(|(&c, _)| c).collect() };
    Ok(ConfidenceDistribution { correct: FiveNumber::of(&pick(true)), incorrect: FiveNumber::of(&pick(false)) })
}

/// Everything reported for one set of confidence scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub accuracy: f64,
    pub ece: f64,
    pub bins: Vec<BinStats>,
    pub quartiles: ConfidenceDistribution,
    pub high_conf_error_rate: f64,
    pub threshold: f64,
    pub n: usize,
}

impl CalibrationReport {
    pub fn compute(confidences: &[f64], labels: &[bool]) -> Result<Self, MetricError> {
        Self::with_options(confidences, labels, DEFAULT_THRESHOLD, DEFAULT_BINS)
    }

    pub fn with_options(confidences: &[f64], labels: &[bool], threshold: f64, bins: usize) -> Result<Self, MetricError> {
        let bin_stats = reliability_bins(confidences, labels, bins)?;
        Ok(Self {
            accuracy: accuracy_at_threshold(confidences, labels, threshold)?,
            ece: ece_from_bins(&bin_stats),
            bins: bin_stats,
            quartiles: confidence_distribution(confidences, labels)?,
            high_conf_error_rate: high_confidence_error_rate(confidences, labels, HIGH_CONFIDENCE_BAR)?,
            threshold,
            n: labels.len(),
        })
    }

    /// Flat `metric,value` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: String| out.push_str(&format!("{k},{v}\n"));
        row("n", self.n.to_string());
        row("threshold", self.threshold.to_string());
        row("accuracy", self.accuracy.to_string());
        row("ece", self.ece.to_string());
        row("high_conf_error_rate", self.high_conf_error_rate.to_string());
        for (i, b) in self.bins.iter().enumerate() {
            row(&format!("bin{}_count", i + 1), b.count.to_string());
            row(&format!("bin{}_accuracy", i + 1), b.accuracy.to_string());
            row(&format!("bin{}_confidence", i + 1), b.confidence.to_string());
        }
        for (name, s) in [("correct", &self.quartiles.correct), ("incorrect", &self.quartiles.incorrect)] {
            if let Some(s) = s {
                for (k, v) in [("min", s.min), ("q1", s.q1), ("median", s.median), ("q3", s.q3), ("max", s.max)] {
                    row(&format!("{name}_{k}"), v.to_string());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
