//! Post-hoc temperature scaling by grid search.

use serde::{Deserialize, Serialize};

use super::{ece, MetricError};
use crate::graph::sigmoid;

pub const GRID_MIN: f64 = 0.05;
pub const GRID_MAX: f64 = 20.0;
pub const GRID_POINTS: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureObjective {
    /// Binary negative log-likelihood of `sigmoid(score / T)`.
    #[default]
    Nll,
    /// Expected calibration error with 10 bins.
    Ece,
}

/// The `GRID_POINTS` log-spaced temperatures spanning `[GRID_MIN, GRID_MAX]`.
pub fn temperature_grid() -> Vec<f64> {
    let ratio = (GRID_MAX / GRID_MIN).ln();
    (0..GRID_POINTS).map(|i| if i == GRID_POINTS - 1 { GRID_MAX } else { GRID_MIN * (ratio * i as f64 / (GRID_POINTS - 1) as f64).exp() }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub grid_index: usize,
    pub objective: TemperatureObjective,
    pub objective_value: f64,
    /// Validation confidences after rescaling.
    pub calibrated: Vec<f64>,
}

impl TemperatureFit {
    pub fn apply(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|s| sigmoid(s / self.temperature)).collect()
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn nll(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let z = s / t;
            if y {
                -log_sigmoid(z)
            } else {
                -log_sigmoid(-z)
            }
        })
        .sum();
    total / scores.len() as f64
}

/// Picks the grid temperature minimising `objective` on validation
/// pre-sigmoid scores; ties go to the smaller temperature.
pub fn fit_temperature(scores: &[f64], labels: &[bool], objective: TemperatureObjective) -> Result<TemperatureFit, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { confidences: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(bad));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(MetricError::SingleClass);
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, t) in temperature_grid().into_iter().enumerate() {
        let value = match objective {
            TemperatureObjective::Nll => nll(scores, labels, t),
            TemperatureObjective::Ece => {
                let conf: Vec<f64> = scores.iter().map(|s| sigmoid(s / t)).collect();
                ece(&conf, labels, 10)?
            }
        };
        if best.is_none_or(|(_, _, v)| value < v) {
            best = Some((i, t, value));
        }
    }
    let (grid_index, temperature, objective_value) = best.expect("non-empty grid");
    Ok(TemperatureFit { temperature, grid_index, objective, objective_value, calibrated: scores.iter().map(|s| sigmoid(s / temperature)).collect() })
}
