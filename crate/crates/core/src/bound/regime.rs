//! Closed-form regime model.
//!
//! Correctness C depends on a reasoning signal S_r and a knowledge signal S_k
//! with strengths α and β. Both signals depend on a binary summary Θ_b of
//! the internal states with strengths δ and ε_informativeness, and Θ_b is
//! uniform. The dataset is assumed balanced, so H(C) = log 2.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{binary_entropy, BoundError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    alpha: f64,
    beta: f64,
    delta: f64,
    epsilon_informativeness: f64,
}

fn check(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<f64, BoundError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(value)
    } else {
        Err(BoundError::ParamRange { name, value, lo, hi })
    }
}

impl RegimeParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, epsilon_informativeness: f64) -> Result<Self, BoundError> {
        Ok(Self {
            alpha: check("alpha", alpha, 0.5, 1.0)?,
            beta: check("beta", beta, 0.5, 1.0)?,
            delta: check("delta", delta, 0.0, 1.0)?,
            epsilon_informativeness: check("epsilon_informativeness", epsilon_informativeness, 0.0, 1.0)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn epsilon_informativeness(&self) -> f64 {
        self.epsilon_informativeness
    }

    pub fn gamma(&self) -> f64 {
        0.5 * (self.alpha + self.beta)
    }

    pub fn eta(&self) -> f64 {
        0.5 * (self.delta + self.epsilon_informativeness)
    }
}

/// `(P(C=1|Θ_b=1), P(C=1|Θ_b=0))`.
pub fn regime_conditionals(params: &RegimeParams) -> (f64, f64) {
    let RegimeParams { alpha: a, beta: b, delta: d, epsilon_informativeness: e } = *params;
    let both = 0.5 * (a + b);
    let reason_only = 0.5 * (a + 1.0 - b);
    let know_only = 0.5 * (1.0 - a + b);
    let neither = 1.0 - both;
    let p1 = d * e * both + d * (1.0 - e) * reason_only + (1.0 - d) * e * know_only + (1.0 - d) * (1.0 - e) * neither;
    let p0 = (1.0 - d) * (1.0 - e) * both + (1.0 - d) * e * reason_only + d * (1.0 - e) * know_only + d * e * neither;
    (p1, p0)
}

/// `I(C;Θ_b) = log 2 − H(C|Θ_b)` under the uniform Θ_b prior.
pub fn regime_mutual_information(params: &RegimeParams) -> f64 {
    let (p1, p0) = regime_conditionals(params);
    let mi = std::f64::consts::LN_2 - 0.5 * (binary_entropy(p1) + binary_entropy(p0));
    // Round-off can dip a hair below zero when p1 = p0 = 0.5.
    mi.max(0.0)
}

/// The four limiting regimes discussed for the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    /// δ = ε = 1: the latent summary pins down both signals.
    HighlyInformative,
    /// δ = ε = 0.5: the latent summary says nothing about either signal.
    LittleInformation,
    /// α = β = 1: both signals fully determine correctness.
    SignalsContribute,
    /// α = β = 0.5: neither signal relates to correctness.
    NotCorrelated,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::HighlyInformative, Corner::LittleInformation, Corner::SignalsContribute, Corner::NotCorrelated];

    pub fn name(self) -> &'static str {
        match self {
            Corner::HighlyInformative => "highly_informative",
            Corner::LittleInformation => "little_information",
            Corner::SignalsContribute => "signals_contribute",
            Corner::NotCorrelated => "not_correlated",
        }
    }

    /// Human-readable description of the regime.
    pub fn annotation(self) -> &'static str {
        match self {
            Corner::HighlyInformative => "theta_b highly informative about s_r and s_k",
            Corner::LittleInformation => "theta_b provides little information about s_r and s_k",
            Corner::SignalsContribute => "s_r and s_k contribute to c",
            Corner::NotCorrelated => "s_r and s_k not correlated to c",
        }
    }

    /// Representative parameters; the free pair is set away from its own limit.
    pub fn params(self) -> RegimeParams {
        let (a, b, d, e) = match self {
            Corner::HighlyInformative => (0.8, 0.9, 1.0, 1.0),
            Corner::LittleInformation => (0.8, 0.9, 0.5, 0.5),
            Corner::SignalsContribute => (1.0, 1.0, 0.7, 0.9),
            Corner::NotCorrelated => (0.5, 0.5, 0.7, 0.9),
        };
        RegimeParams::new(a, b, d, e).expect("corner parameters are in range")
    }
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub params: RegimeParams,
    pub p1: f64,
    pub p0: f64,
    pub mutual_information: f64,
    pub corner: Option<Corner>,
}

impl RegimeRow {
    pub fn evaluate(params: RegimeParams, corner: Option<Corner>) -> Self {
        let (p1, p0) = regime_conditionals(&params);
        Self { params, p1, p0, mutual_information: regime_mutual_information(&params), corner }
    }
}

/// Cartesian grid over the four parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub epsilon_informativeness: Vec<f64>,
}

impl RegimeGrid {
    /// `steps` evenly spaced points on each axis's full range.
    pub fn uniform(steps: usize) -> Self {
        let axis = |lo: f64, hi: f64| -> Vec<f64> {
            if steps <= 1 {
                return vec![lo];
            }
            (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
        };
        Self { alpha: axis(0.5, 1.0), beta: axis(0.5, 1.0), delta: axis(0.0, 1.0), epsilon_informativeness: axis(0.0, 1.0) }
    }

    pub fn points(&self) -> Result<Vec<RegimeParams>, BoundError> {
        for (name, axis) in [("alpha", &self.alpha), ("beta", &self.beta), ("delta", &self.delta), ("epsilon_informativeness", &self.epsilon_informativeness)] {
            if axis.is_empty() {
                return Err(BoundError::EmptyGrid(name));
            }
        }
        let mut out = Vec::new();
        for &a in &self.alpha {
            for &b in &self.beta {
                for &d in &self.delta {
                    for &e in &self.epsilon_informativeness {
                        out.push(RegimeParams::new(a, b, d, e)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeTable {
    pub rows: Vec<RegimeRow>,
}

impl RegimeTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("corner,annotation,alpha,beta,delta,epsilon_informativeness,gamma,eta,p1,p0,mutual_information\n");
        for r in &self.rows {
            let p = &r.params;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.corner.map_or("", Corner::name),
                r.corner.map_or("", Corner::annotation),
                p.alpha,
                p.beta,
                p.delta,
                p.epsilon_informativeness,
                p.gamma(),
                p.eta(),
                r.p1,
                r.p0,
                r.mutual_information
            ));
        }
        out
    }
}

/// The four annotated corner rows.
pub fn corner_rows() -> RegimeTable {
    RegimeTable { rows: Corner::ALL.iter().map(|&c| RegimeRow::evaluate(c.params(), Some(c))).collect() }
}

/// The corner rows followed by every grid point.
pub fn sweep_regimes(grid: &RegimeGrid) -> Result<RegimeTable, BoundError> {
    let mut table = corner_rows();
    table.rows.extend(grid.points()?.into_iter().map(|p| RegimeRow::evaluate(p, None)));
    Ok(table)
}
