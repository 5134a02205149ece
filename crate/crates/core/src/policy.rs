//! Cluster-partitioned adaptive action policy.
//!
//! Each context is assigned to the cluster of its greedy action. Within that
//! cluster, visit counts feed a UCB-style bonus
//! `U_a = f_a + C (Σ_k N_k)^β / sqrt(N_a)`. Non-greedy scores are decayed by
//! `s^ω` and the result is mixed with uniform exploration of total mass
//! `0.05 / s^{κ/2}`, so every action keeps probability at least
//! `0.05 / (K s^{κ/2})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BanditError, Result};

/// Total exploration mass at stage 1.
pub const EXPLORATION_MASS: f64 = 0.05;

/// Index of the largest entry; ties go to the lowest index. NaN entries never win.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `counts[a][c]`: visits of action `a` within cluster `c`. Starts at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitTable {
    k: usize,
    counts: Vec<u64>,
}

impl VisitTable {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![1; k * k],
        }
    }

    /// Builds a table from explicit rows `counts[a][c]`; every entry must be ≥ 1.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut counts = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(BanditError::Shape {
                    what: "visit table row",
                    expected: k,
                    actual: row.len(),
                });
            }
            if row.contains(&0) {
                return Err(BanditError::InvalidParameter("visit counts must be >= 1".into()));
            }
            counts.extend_from_slice(row);
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: usize, c: usize) -> u64 {
        self.counts[a * self.k + c]
    }

    /// Counts of every action within cluster `c`.
    pub fn column(&self, c: usize) -> Vec<u64> {
        (0..self.k).map(|a| self.get(a, c)).collect()
    }

    pub fn column_total(&self, c: usize) -> u64 {
        (0..self.k).map(|a| self.get(a, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn record_visit(&mut self, a: usize, c: usize) -> Result<()> {
        if a >= self.k {
            return Err(BanditError::ActionOutOfRange { index: a, k: self.k });
        }
        if c >= self.k {
            return Err(BanditError::ClusterOutOfRange { index: c, k: self.k });
        }
        self.counts[a * self.k + c] += 1;
        Ok(())
    }
}

/// Tuning parameters of the action policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub k: usize,
    pub kappa: f64,
    pub omega: f64,
    /// Exploration weight `C` of the visit bonus.
    pub c: f64,
    pub beta: f64,
}

impl PolicyParams {
    /// Validates `0 < κ < υ`, `ω > κ/2`, `0 < β < 0.5`, `C ≥ 0`, `K ≥ 1`.
    pub fn new(k: usize, kappa: f64, omega: f64, c: f64, beta: f64, upsilon: f64) -> Result<Self> {
        let fail = |msg: String| Err(BanditError::InvalidParameter(msg));
        if k == 0 {
            return fail("K must be at least 1".into());
        }
        if !(kappa > 0.0 && kappa < upsilon) {
            return fail(format!("kappa = {kappa} must lie in (0, upsilon = {upsilon})"));
        }
        if !(omega > kappa / 2.0) || !omega.is_finite() {
            return fail(format!("omega = {omega} must exceed kappa/2 = {}", kappa / 2.0));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return fail(format!("C = {c} must be >= 0"));
        }
        if !(beta > 0.0 && beta < 0.5) {
            return fail(format!("beta = {beta} must lie in (0, 0.5)"));
        }
        Ok(Self {
            k,
            kappa,
            omega,
            c,
            beta,
        })
    }

    /// Same parameters with a different exploration weight.
    pub fn with_c(self, c: f64) -> Self {
        Self { c, ..self }
    }
}

/// Minimum probability any action receives at stage `s`.
pub fn exploration_floor(k: usize, s: u64, kappa: f64) -> f64 {
    EXPLORATION_MASS / (k as f64 * (s as f64).powf(0.5 * kappa))
}

/// Visit count below which an action forces the most-visited action of
/// cluster `c` down to (roughly) the exploration floor.
pub fn visit_threshold(column_total: u64, params: &PolicyParams) -> f64 {
    let c = params.c;
    let k = params.k as f64;
    c * c * (column_total as f64).powf(2.0 * params.beta) / (c * c * k + 2.0 * c * k.sqrt() + 1.0)
}

/// A probability vector over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    /// Wraps a probability vector, checking it sums to one within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(BanditError::Empty("action distribution"));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(BanditError::InvalidParameter(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn propensity(&self, a: usize) -> f64 {
        self.probs[a]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Cluster of a context: the greedy action of its estimates.
pub fn assign_cluster(estimates: &[f64]) -> Result<usize> {
    argmax(estimates).ok_or(BanditError::EmptyEstimates)
}

/// `U_a = f_a + C (Σ_k N_{k,c})^β / sqrt(N_{a,c})`.
pub fn exploitation_scores(
    estimates: &[f64],
    visits: &VisitTable,
    c: usize,
    params: &PolicyParams,
) -> Result<Vec<f64>> {
    if estimates.len() != visits.k() {
        return Err(BanditError::Shape {
            what: "estimates",
            expected: visits.k(),
            actual: estimates.len(),
        });
    }
    if c >= visits.k() {
        return Err(BanditError::ClusterOutOfRange {
            index: c,
            k: visits.k(),
        });
    }
    if params.c == 0.0 {
        return Ok(estimates.to_vec());
    }
    let scale = params.c * (visits.column_total(c) as f64).powf(params.beta);
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(a, f)| f + scale / (visits.get(a, c) as f64).sqrt())
        .collect())
}

/// Keeps the argmax score and divides every other score by `s^ω`.
pub fn weight_vector(scores: &[f64], s: u64, omega: f64) -> Vec<f64> {
    let best = argmax(scores);
    let decay = (s as f64).powf(omega);
    scores
        .iter()
        .enumerate()
        .map(|(a, &u)| if Some(a) == best { u } else { u / decay })
        .collect()
}

/// `π_a = 0.05/(K s^{κ/2}) + (1 - 0.05/s^{κ/2}) W_a / Σ_k W_k`; uniform when `ΣW = 0`.
pub fn action_distribution(weights: &[f64], s: u64, params: &PolicyParams) -> Result<ActionDistribution> {
    let k = weights.len();
    if k != params.k {
        return Err(BanditError::Shape {
            what: "weights",
            expected: params.k,
            actual: k,
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(BanditError::InvalidParameter(format!(
            "negative or non-finite weight {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Ok(ActionDistribution {
            probs: vec![1.0 / k as f64; k],
        });
    }
    let mass = EXPLORATION_MASS / (s as f64).powf(0.5 * params.kappa);
    let floor = mass / k as f64;
    let probs = weights.iter().map(|w| floor + (1.0 - mass) * w / total).collect();
    Ok(ActionDistribution { probs })
}

/// Inverse-CDF draw, accumulating left to right.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = a;
        }
        acc += p;
        if u < acc {
            return a;
        }
    }
    // rounding left u above the accumulated total
    last_positive
}
