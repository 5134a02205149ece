//! Bandit environments over finite context pools.
//!
//! Every environment here draws contexts from a finite pool, so a context is
//! fully identified by its id and logs can refer to contexts by id alone.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BanditError, Result};
use crate::model::{ParamVector, RewardModel};

pub trait Environment: Send + Sync {
    /// Number of actions `K`.
    fn actions(&self) -> usize;

    fn context_dim(&self) -> usize;

    fn n_contexts(&self) -> usize;

    /// Feature vector of context `id`.
    fn context(&self, id: usize) -> Option<&[f64]>;

    /// Sampling probability of context `id`. Uniform unless overridden.
    fn context_probability(&self, id: usize) -> f64 {
        if id < self.n_contexts() {
            1.0 / self.n_contexts() as f64
        } else {
            0.0
        }
    }

    fn sample_context_id(&self, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..self.n_contexts())
    }

    /// Draws a reward in `[0, 1]` for action `a` at context `id`.
    fn sample_reward(&self, id: usize, a: usize, rng: &mut dyn RngCore) -> f64;

    /// `E[r | d, a]` when known analytically.
    fn mean_reward(&self, _id: usize, _a: usize) -> Option<f64> {
        None
    }

    /// `VAR[r | d, a]` when known analytically.
    fn reward_variance(&self, _id: usize, _a: usize) -> Option<f64> {
        None
    }

    /// Action with the largest mean reward (lowest index on ties).
    fn optimal_action(&self, id: usize) -> Option<usize> {
        let means: Option<Vec<f64>> = (0..self.actions()).map(|a| self.mean_reward(id, a)).collect();
        crate::policy::argmax(&means?)
    }

    fn has_analytic_means(&self) -> bool {
        self.mean_reward(0, 0).is_some()
    }
}

/// One round of bandit interaction: the context is visible, and exactly one
/// action's reward can be revealed.
pub struct Round<'e> {
    env: &'e dyn Environment,
    context_id: usize,
}

impl<'e> Round<'e> {
    pub fn context_id(&self) -> usize {
        self.context_id
    }

    pub fn features(&self) -> &'e [f64] {
        self.env.context(self.context_id).expect("sampled id is valid")
    }

    pub fn reveal(self, a: usize, rng: &mut dyn RngCore) -> Result<f64> {
        if a >= self.env.actions() {
            return Err(BanditError::ActionOutOfRange {
                index: a,
                k: self.env.actions(),
            });
        }
        Ok(self.env.sample_reward(self.context_id, a, rng))
    }
}

pub fn sample_round<'e>(env: &'e dyn Environment, rng: &mut dyn RngCore) -> Round<'e> {
    Round {
        env,
        context_id: env.sample_context_id(rng),
    }
}

/// Two contexts `d ∈ {2, 5}` drawn uniformly; each (context, action) pays a
/// uniform reward on a fixed interval.
#[derive(Debug, Clone)]
pub struct ToyEnvironment {
    contexts: [[f64; 1]; 2],
    ranges: [[(f64, f64); 2]; 2],
}

impl Default for ToyEnvironment {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyEnvironment {
    pub fn new() -> Self {
        Self {
            contexts: [[2.0], [5.0]],
            ranges: [[(0.2, 0.8), (0.55, 0.85)], [(0.3, 0.9), (0.0, 0.2)]],
        }
    }
}

impl Environment for ToyEnvironment {
    fn actions(&self) -> usize {
        2
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn n_contexts(&self) -> usize {
        2
    }

    fn context(&self, id: usize) -> Option<&[f64]> {
        self.contexts.get(id).map(|c| c.as_slice())
    }

    fn sample_reward(&self, id: usize, a: usize, rng: &mut dyn RngCore) -> f64 {
        let (lo, hi) = self.ranges[id][a];
        lo + (hi - lo) * rng.random::<f64>()
    }

    fn mean_reward(&self, id: usize, a: usize) -> Option<f64> {
        let (lo, hi) = *self.ranges.get(id)?.get(a)?;
        Some(0.5 * (lo + hi))
    }

    fn reward_variance(&self, id: usize, a: usize) -> Option<f64> {
        let (lo, hi) = *self.ranges.get(id)?.get(a)?;
        Some((hi - lo) * (hi - lo) / 12.0)
    }
}

/// Synthetic environment with linear mean rewards `μ_a(d) = θ_a·d + 0.5` and
/// Bernoulli feedback. Features lie in `[-1, 1]` and `|θ_a·d| ≤ 0.4`, so
/// every mean lies in `[0.1, 0.9]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearEnvironment {
    actions: usize,
    dim: usize,
    contexts: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl LinearEnvironment {
    pub fn generate(actions: usize, dim: usize, n_contexts: usize, seed: u64) -> Result<Self> {
        if actions == 0 || dim == 0 || n_contexts == 0 {
            return Err(BanditError::InvalidParameter(
                "linear environment needs positive actions, dim and contexts".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.4 / dim as f64;
        let weights = (0..actions)
            .map(|_| (0..dim).map(|_| rng.random_range(-bound..=bound)).collect())
            .collect();
        let contexts = (0..n_contexts)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        Ok(Self {
            actions,
            dim,
            contexts,
            weights,
        })
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    /// Bias of every mean reward.
    pub const BIAS: f64 = 0.5;
}

impl Environment for LinearEnvironment {
    fn actions(&self) -> usize {
        self.actions
    }

    fn context_dim(&self) -> usize {
        self.dim
    }

    fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    fn context(&self, id: usize) -> Option<&[f64]> {
        self.contexts.get(id).map(|c| c.as_slice())
    }

    fn sample_reward(&self, id: usize, a: usize, rng: &mut dyn RngCore) -> f64 {
        let mu = self.mean_reward(id, a).expect("valid id");
        if rng.random::<f64>() < mu {
            1.0
        } else {
            0.0
        }
    }

    fn mean_reward(&self, id: usize, a: usize) -> Option<f64> {
        let d = self.contexts.get(id)?;
        let w = self.weights.get(a)?;
        Some(crate::model::dot(w, d) + Self::BIAS)
    }

    fn reward_variance(&self, id: usize, a: usize) -> Option<f64> {
        self.mean_reward(id, a).map(|m| m * (1.0 - m))
    }
}

/// Multiclass rows turned into bandit feedback: reward 1 iff the chosen
/// action equals the (possibly corrupted) label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEnvironment {
    actions: usize,
    features: Vec<Vec<f64>>,
    clean_labels: Vec<usize>,
    labels: Vec<usize>,
    relabeled_rows: Vec<usize>,
    noise_fraction: f64,
}

impl DatasetEnvironment {
    /// Builds from in-memory rows with 0-based labels; exactly
    /// `⌊p·n⌋` rows get a uniformly re-drawn label.
    pub fn from_rows(rows: Vec<(Vec<f64>, usize)>, actions: usize, noise_fraction: f64, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(BanditError::Empty("dataset"));
        }
        if !(0.0..=1.0).contains(&noise_fraction) {
            return Err(BanditError::InvalidParameter(format!(
                "noise fraction {noise_fraction} outside [0, 1]"
            )));
        }
        let dim = rows[0].0.len();
        let mut features = Vec::with_capacity(rows.len());
        let mut clean_labels = Vec::with_capacity(rows.len());
        for (i, (f, l)) in rows.into_iter().enumerate() {
            if f.len() != dim {
                return Err(BanditError::Shape {
                    what: "dataset row",
                    expected: dim,
                    actual: f.len(),
                });
            }
            if l >= actions {
                return Err(BanditError::LabelOutOfRange {
                    label: l as i64 + 1,
                    line: i + 2,
                    k: actions,
                });
            }
            features.push(f);
            clean_labels.push(l);
        }
        let n = features.len();
        let n_noisy = (noise_fraction * n as f64).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut relabeled_rows = index::sample(&mut rng, n, n_noisy).into_vec();
        relabeled_rows.sort_unstable();
        let mut labels = clean_labels.clone();
        for &i in &relabeled_rows {
            labels[i] = rng.random_range(0..actions);
        }
        Ok(Self {
            actions,
            features,
            clean_labels,
            labels,
            relabeled_rows,
            noise_fraction,
        })
    }

    /// Labels the environment rewards against (0-based).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    /// Rows whose label was re-drawn at load time.
    pub fn relabeled_rows(&self) -> &[usize] {
        &self.relabeled_rows
    }

    pub fn noise_fraction(&self) -> f64 {
        self.noise_fraction
    }

    /// `(features, clean label)` pairs for out-of-sample evaluation.
    pub fn labeled_examples(&self) -> Vec<(Vec<f64>, usize)> {
        self.features
            .iter()
            .cloned()
            .zip(self.clean_labels.iter().copied())
            .collect()
    }
}

impl Environment for DatasetEnvironment {
    fn actions(&self) -> usize {
        self.actions
    }

    fn context_dim(&self) -> usize {
        self.features[0].len()
    }

    fn n_contexts(&self) -> usize {
        self.features.len()
    }

    fn context(&self, id: usize) -> Option<&[f64]> {
        self.features.get(id).map(|f| f.as_slice())
    }

    fn sample_reward(&self, id: usize, a: usize, _rng: &mut dyn RngCore) -> f64 {
        if self.labels[id] == a {
            1.0
        } else {
            0.0
        }
    }

    fn mean_reward(&self, id: usize, a: usize) -> Option<f64> {
        let l = *self.labels.get(id)?;
        (a < self.actions).then_some(if l == a { 1.0 } else { 0.0 })
    }

    fn reward_variance(&self, id: usize, a: usize) -> Option<f64> {
        self.mean_reward(id, a).map(|_| 0.0)
    }
}

/// Reads a headed CSV of numeric features with one integer label column
/// (labels `1..=K`). `actions = None` takes `K` as the largest label seen.
pub fn load_dataset_env(
    path: &Path,
    label_column: &str,
    noise_fraction: f64,
    seed: u64,
    actions: Option<usize>,
) -> Result<DatasetEnvironment> {
    let (rows, k) = read_labeled_csv(path, label_column, actions)?;
    DatasetEnvironment::from_rows(rows, k, noise_fraction, seed)
}

/// Feature rows with their 0-based labels.
pub type LabeledRows = Vec<(Vec<f64>, usize)>;

/// Parses a labeled CSV into `(features, 0-based label)` rows.
pub fn read_labeled_csv(path: &Path, label_column: &str, actions: Option<usize>) -> Result<(LabeledRows, usize)> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| BanditError::Config(format!("label column `{label_column}` not found in {display}")))?;
    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| BanditError::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| BanditError::Parse {
            path: display.clone(),
            line,
            message,
        };
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(record.len() - 1);
        let mut label = 0i64;
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                label = field
                    .parse::<i64>()
                    .map_err(|e| parse_err(format!("label `{field}`: {e}")))?;
            } else {
                let v = field
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("column `{}` value `{field}`: {e}", &headers[j])))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value in column `{}`", &headers[j])));
                }
                features.push(v);
            }
        }
        raw.push((features, label, line));
    }
    if raw.is_empty() {
        return Err(BanditError::Empty("dataset"));
    }
    let k = match actions {
        Some(k) => k,
        None => raw.iter().map(|r| r.1).max().unwrap_or(0).max(1) as usize,
    };
    let rows = raw
        .into_iter()
        .map(|(f, label, line)| {
            if label < 1 || label as usize > k {
                Err(BanditError::LabelOutOfRange { label, line, k })
            } else {
                Ok((f, label as usize - 1))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, k))
}

/// Full-feedback objective `F(x) = E_d Σ_a [(f_a(d;x) - μ_{d,a})² + VAR_{d,a}]`,
/// evaluated exactly by enumerating the context pool.
pub fn true_objective(env: &dyn Environment, model: &RewardModel, x: &ParamVector) -> Result<f64> {
    let mut total = 0.0;
    for id in 0..env.n_contexts() {
        let d = env.context(id).ok_or(BanditError::UnknownContext(id))?;
        let f = model.predict(x, d)?;
        let mut inner = 0.0;
        for (a, fa) in f.iter().enumerate() {
            let mu = env.mean_reward(id, a).ok_or(BanditError::NotAnalytic)?;
            let var = env.reward_variance(id, a).ok_or(BanditError::NotAnalytic)?;
            inner += (fa - mu) * (fa - mu) + var;
        }
        total += env.context_probability(id) * inner;
    }
    Ok(total)
}

/// `E_d Σ_a VAR_{d,a}`, the value `F` takes at a perfectly specified model.
pub fn variance_floor(env: &dyn Environment) -> Result<f64> {
    let mut total = 0.0;
    for id in 0..env.n_contexts() {
        let mut inner = 0.0;
        for a in 0..env.actions() {
            inner += env.reward_variance(id, a).ok_or(BanditError::NotAnalytic)?;
        }
        total += env.context_probability(id) * inner;
    }
    Ok(total)
}

/// A local minimizer located by grid scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMinimum {
    pub x: f64,
    pub value: f64,
}

/// Scans `F` over `[lo, hi]` at spacing `step` for a one-parameter model and
/// returns interior grid points lower than their left neighbour and no
/// higher than their right neighbour.
pub fn grid_scan_minima(
    env: &dyn Environment,
    model: &RewardModel,
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Vec<GridMinimum>> {
    if model.n_params() != 1 {
        return Err(BanditError::InvalidParameter(
            "grid scan needs a one-parameter model".into(),
        ));
    }
    if !(step > 0.0) || !(hi > lo) {
        return Err(BanditError::InvalidParameter(
            "grid scan needs lo < hi and step > 0".into(),
        ));
    }
    let n = ((hi - lo) / step).round() as usize + 1;
    let values = (0..n)
        .map(|i| {
            let x = lo + i as f64 * step;
            true_objective(env, model, &ParamVector::new(vec![x])?).map(|v| (x, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values
        .windows(3)
        .filter(|w| w[1].1 < w[0].1 && w[1].1 <= w[2].1)
        .map(|w| GridMinimum {
            x: w[1].0,
            value: w[1].1,
        })
        .collect())
}
