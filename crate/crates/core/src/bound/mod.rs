//! Information-theoretic view of why internal states help confidence
//! estimation.
//!
//! Two tools live here. [`verify_main_bound`] checks, by exact enumeration on
//! a small discrete joint over (K, Y, Θ) with the input held fixed, that
//! `I(C;Θ|Y) ≥ Δ − ε` where `C = S(K, Y)`, `Δ = I(Θ;K) − I(Y;K)` and
//! `ε = H(K|Y,C)`. The regime model ([`RegimeParams`]) gives the closed-form
//! mutual information between correctness and a binary latent summary of
//! the internal states. All logarithms are natural.

mod regime;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use regime::{corner_rows, regime_conditionals, regime_mutual_information, sweep_regimes, Corner, RegimeGrid, RegimeParams, RegimeRow, RegimeTable};

/// Slack allowed when judging whether the bound holds.
pub const BOUND_TOLERANCE: f64 = 1e-9;
/// Allowed deviation of a joint table's total mass from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("support sizes must be positive, got {0:?}")]
    EmptySupport([usize; 3]),
    #[error("table has {found} entries, expected {expected}")]
    TableSize { expected: usize, found: usize },
    #[error("rule has {found} entries, expected {expected}")]
    RuleSize { expected: usize, found: usize },
    #[error("probability {0} is negative or not finite")]
    BadProbability(f64),
    #[error("table sums to {0}, not 1")]
    Unnormalized(f64),
    #[error("correctness rule value {0} is not 0 or 1")]
    BadRule(u8),
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    ParamRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("grid axis {0} is empty")]
    EmptyGrid(&'static str),
}

/// `-p log p` with `0 log 0 = 0`.
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Shannon entropy in nats of a (not necessarily normalised) mass vector.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().copied().map(plogp).sum()
}

/// Entropy of a Bernoulli(p) variable in nats.
pub fn binary_entropy(p: f64) -> f64 {
    plogp(p) + plogp(1.0 - p)
}

/// Joint distribution p(k, y, θ) for a fixed input, with a deterministic
/// correctness rule `S(k, y) ∈ {0, 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    sizes: [usize; 3],
    /// Row-major over (k, y, θ).
    table: Vec<f64>,
    /// Row-major over (k, y).
    rule: Vec<u8>,
}

impl DiscreteJoint {
    pub fn new(sizes: [usize; 3], table: Vec<f64>, rule: Vec<u8>) -> Result<Self, BoundError> {
        if sizes.contains(&0) {
            return Err(BoundError::EmptySupport(sizes));
        }
        let [nk, ny, nt] = sizes;
        if table.len() != nk * ny * nt {
            return Err(BoundError::TableSize { expected: nk * ny * nt, found: table.len() });
        }
        if rule.len() != nk * ny {
            return Err(BoundError::RuleSize { expected: nk * ny, found: rule.len() });
        }
        if let Some(&p) = table.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(BoundError::BadProbability(p));
        }
        if let Some(&r) = rule.iter().find(|r| **r > 1) {
            return Err(BoundError::BadRule(r));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(BoundError::Unnormalized(total));
        }
        Ok(Self { sizes, table, rule })
    }

    /// Builds a joint from a function of `(k, y, θ)` and a rule of `(k, y)`.
    pub fn from_fn(sizes: [usize; 3], p: impl Fn(usize, usize, usize) -> f64, s: impl Fn(usize, usize) -> bool) -> Result<Self, BoundError> {
        let [nk, ny, nt] = sizes;
        let mut table = Vec::with_capacity(nk * ny * nt);
        let mut rule = Vec::with_capacity(nk * ny);
        for k in 0..nk {
            for y in 0..ny {
                rule.push(s(k, y) as u8);
                for t in 0..nt {
                    table.push(p(k, y, t));
                }
            }
        }
        Self::new(sizes, table, rule)
    }

    /// Dirichlet-distributed table (concentration drawn per joint) with a
    /// uniformly random rule.
    pub fn random<R: Rng + ?Sized>(sizes: [usize; 3], rng: &mut R) -> Result<Self, BoundError> {
        if sizes.contains(&0) {
            return Err(BoundError::EmptySupport(sizes));
        }
        let concentration = [0.2, 0.5, 1.0, 2.0][rng.random_range(0..4)];
        let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
        let n = sizes.iter().product();
        let mut table: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = table.iter().sum();
        if total > 0.0 {
            table.iter_mut().for_each(|p| *p /= total);
        } else {
            table.iter_mut().for_each(|p| *p = 1.0 / n as f64);
        }
        // Renormalise once more so the sum is 1 to the last bit or two.
        let total: f64 = table.iter().sum();
        table.iter_mut().for_each(|p| *p /= total);
        let rule = (0..sizes[0] * sizes[1]).map(|_| rng.random_range(0..2u8)).collect();
        Self::new(sizes, table, rule)
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn p(&self, k: usize, y: usize, t: usize) -> f64 {
        let [_, ny, nt] = self.sizes;
        self.table[(k * ny + y) * nt + t]
    }

    pub fn correct(&self, k: usize, y: usize) -> bool {
        self.rule[k * self.sizes[1] + y] == 1
    }

    /// Entropy of the marginal over the coordinates picked by `key`.
    fn marginal_entropy(&self, cells: usize, key: impl Fn(usize, usize, usize, usize) -> usize) -> f64 {
        let [nk, ny, nt] = self.sizes;
        let mut mass = vec![0.0; cells];
        for k in 0..nk {
            for y in 0..ny {
                let c = self.correct(k, y) as usize;
                for t in 0..nt {
                    mass[key(k, y, t, c)] += self.p(k, y, t);
                }
            }
        }
        entropy(&mass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// I(C;Θ|Y).
    pub mutual_information: f64,
    /// I(Θ;K) − I(Y;K).
    pub delta: f64,
    /// H(K|Y,C).
    pub epsilon: f64,
    pub holds: bool,
    /// I(C;Θ|Y) − (Δ − ε).
    pub slack: f64,
}

pub fn verify_main_bound(joint: &DiscreteJoint) -> BoundReport {
    let [nk, ny, nt] = joint.sizes;
    let h = |cells, key: fn(usize, usize, usize, usize, [usize; 3]) -> usize| joint.marginal_entropy(cells, |k, y, t, c| key(k, y, t, c, [nk, ny, nt]));
    let h_k = h(nk, |k, _, _, _, _| k);
    let h_y = h(ny, |_, y, _, _, _| y);
    let h_t = h(nt, |_, _, t, _, _| t);
    let h_ky = h(nk * ny, |k, y, _, _, s| k * s[1] + y);
    let h_kt = h(nk * nt, |k, _, t, _, s| k * s[2] + t);
    let h_yt = h(ny * nt, |_, y, t, _, s| y * s[2] + t);
    let h_yc = h(ny * 2, |_, y, _, c, _| y * 2 + c);
    let h_yct = h(ny * 2 * nt, |_, y, t, c, s| (y * 2 + c) * s[2] + t);
    // C is a function of (K, Y), so H(K, Y, C) = H(K, Y).
    let h_kyc = h_ky;

    let i_tk = h_t + h_k - h_kt;
    let i_yk = h_y + h_k - h_ky;
    let delta = i_tk - i_yk;
    let epsilon = h_kyc - h_yc;
    let mutual_information = h_yc + h_yt - h_yct - h_y;
    let slack = mutual_information - (delta - epsilon);
    BoundReport { mutual_information, delta, epsilon, holds: slack >= -BOUND_TOLERANCE, slack }
}

/// Aggregate outcome of checking the bound on many random joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTrials {
    pub trials: usize,
    pub seed: u64,
    pub violations: usize,
    pub min_slack: f64,
    /// Index of the first violating trial, if any.
    pub first_violation: Option<usize>,
}

/// Checks the bound on `trials` random joints with supports of size 2 to
/// `max_support` on each axis.
pub fn verify_random_joints(trials: usize, seed: u64, max_support: usize) -> BoundTrials {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let hi = max_support.max(2);
    let mut out = BoundTrials { trials, seed, violations: 0, min_slack: f64::INFINITY, first_violation: None };
    for i in 0..trials {
        let sizes = [rng.random_range(2..=hi), rng.random_range(2..=hi), rng.random_range(2..=hi)];
        let joint = DiscreteJoint::random(sizes, &mut rng).expect("random joints are valid");
        let report = verify_main_bound(&joint);
        out.min_slack = out.min_slack.min(report.slack);
        if !report.holds {
            out.violations += 1;
            out.first_violation.get_or_insert(i);
        }
    }
    out
}

#[cfg(test)]
mod tests;
