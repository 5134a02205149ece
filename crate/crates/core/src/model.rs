//! Parametric reward models `f(d; x)` mapping a context to `K` reward
//! estimates, with the squared bandit loss `(f_a(d; x) - r)^2` and its
//! analytic gradient.
//!
//! Three families are available:
//!
//! - `toy-trig`: the two-action, one-parameter model
//!   `f_1 = 0.2 sin²(dx) + 0.8 e^{-(dx)²}`, `f_2 = 0.8 sin²(dx) + 0.2 e^{-(dx)²}`.
//! - `linear`: one weight row plus bias per action over a shared feature
//!   vector, squashed by a logistic link (or left raw with the identity link).
//! - `mlp`: a fully connected network with `tanh` hidden layers and a
//!   logistic output layer; forward and backward passes are hand-written.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BanditError, Result};

/// Default central-difference step for [`fd_gradient_oracle`].
pub const FD_STEP: f64 = 1e-5;

/// Learnable parameters of a reward model. Length is fixed by the model
/// family and every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BanditError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// One value per line, shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.0.len() * 20);
        for v in &self.0 {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses whitespace-separated values written by [`ParamVector::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse::<f64>().map_err(|e| BanditError::Parse {
                    path: "<param vector>".into(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = BanditError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Output squashing for the linear family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputLink {
    Logistic,
    /// Raw `w·d + b`. Outputs are not confined to `[0, 1]`; this head exists
    /// for the strongly convex (ridge) objective.
    Identity,
}

impl FromStr for OutputLink {
    type Err = BanditError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "sigmoid" => Ok(Self::Logistic),
            "identity" => Ok(Self::Identity),
            other => Err(BanditError::Config(format!("unknown output link `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelFamily {
    ToyTrig,
    Linear { link: OutputLink },
    Mlp { hidden: Vec<usize> },
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::ToyTrig => write!(f, "toy-trig"),
            ModelFamily::Linear { .. } => write!(f, "linear"),
            ModelFamily::Mlp { .. } => write!(f, "mlp"),
        }
    }
}

/// A reward-model family together with its shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    family: ModelFamily,
    actions: usize,
    context_dim: usize,
    n_params: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl RewardModel {
    pub fn toy_trig() -> Self {
        Self {
            family: ModelFamily::ToyTrig,
            actions: 2,
            context_dim: 1,
            n_params: 1,
        }
    }

    pub fn linear(actions: usize, context_dim: usize, link: OutputLink) -> Result<Self> {
        if actions == 0 || context_dim == 0 {
            return Err(BanditError::InvalidParameter(
                "linear model needs at least one action and one feature".into(),
            ));
        }
        Ok(Self {
            family: ModelFamily::Linear { link },
            actions,
            context_dim,
            n_params: actions * (context_dim + 1),
        })
    }

    pub fn mlp(actions: usize, context_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if actions == 0 || context_dim == 0 || hidden.contains(&0) {
            return Err(BanditError::InvalidParameter("mlp widths must all be positive".into()));
        }
        let mut sizes = vec![context_dim];
        sizes.extend(&hidden);
        sizes.push(actions);
        let n_params = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            family: ModelFamily::Mlp { hidden },
            actions,
            context_dim,
            n_params,
        })
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    /// Number of actions `K`.
    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    /// Length `n_x` of the parameter vector.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// True when every prediction is guaranteed to lie in `[0, 1]`.
    pub fn bounded_output(&self) -> bool {
        !matches!(
            self.family,
            ModelFamily::Linear {
                link: OutputLink::Identity
            }
        )
    }

    /// Initial parameters: zeros for toy-trig and linear, scaled uniform
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for the MLP.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match &self.family {
            ModelFamily::ToyTrig | ModelFamily::Linear { .. } => ParamVector::zeros(self.n_params),
            ModelFamily::Mlp { .. } => {
                let mut values = Vec::with_capacity(self.n_params);
                for (fan_in, fan_out) in self.layer_sizes() {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..fan_out * (fan_in + 1) {
                        values.push(rng.random_range(-bound..bound));
                    }
                }
                ParamVector(values)
            }
        }
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        match &self.family {
            ModelFamily::Mlp { hidden } => {
                let mut sizes = vec![self.context_dim];
                sizes.extend(hidden);
                sizes.push(self.actions);
                sizes.windows(2).map(|w| (w[0], w[1])).collect()
            }
            _ => Vec::new(),
        }
    }

    fn check_inputs(&self, x: &ParamVector, d: &[f64]) -> Result<()> {
        if x.len() != self.n_params {
            return Err(BanditError::Shape {
                what: "parameter vector",
                expected: self.n_params,
                actual: x.len(),
            });
        }
        if d.len() != self.context_dim {
            return Err(BanditError::Shape {
                what: "context",
                expected: self.context_dim,
                actual: d.len(),
            });
        }
        Ok(())
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions {
            return Err(BanditError::ActionOutOfRange {
                index: a,
                k: self.actions,
            });
        }
        Ok(())
    }

    /// Reward estimates for every action (0-based indices).
    pub fn predict(&self, x: &ParamVector, d: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, d)?;
        let mut out = vec![0.0; self.actions];
        self.predict_into(x.as_slice(), d, &mut out);
        Ok(out)
    }

    /// Unchecked forward pass; `out.len() == K`.
    pub(crate) fn predict_into(&self, x: &[f64], d: &[f64], out: &mut [f64]) {
        match &self.family {
            ModelFamily::ToyTrig => {
                let u = d[0] * x[0];
                let s = u.sin().powi(2);
                let e = (-u * u).exp();
                out[0] = 0.2 * s + 0.8 * e;
                out[1] = 0.8 * s + 0.2 * e;
            }
            ModelFamily::Linear { link } => {
                let stride = self.context_dim + 1;
                for (a, o) in out.iter_mut().enumerate() {
                    let row = &x[a * stride..(a + 1) * stride];
                    let z = dot(&row[..self.context_dim], d) + row[self.context_dim];
                    *o = match link {
                        OutputLink::Logistic => sigmoid(z),
                        OutputLink::Identity => z,
                    };
                }
            }
            ModelFamily::Mlp { .. } => {
                let acts = self.mlp_forward(x, d);
                out.copy_from_slice(acts.last().expect("output layer"));
            }
        }
    }

    /// Activations of every layer, input first.
    fn mlp_forward(&self, x: &[f64], d: &[f64]) -> Vec<Vec<f64>> {
        let sizes = self.layer_sizes();
        let last = sizes.len() - 1;
        let mut acts = Vec::with_capacity(sizes.len() + 1);
        acts.push(d.to_vec());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in sizes.iter().enumerate() {
            let w = &x[offset..offset + fan_in * fan_out];
            let b = &x[offset + fan_in * fan_out..offset + fan_out * (fan_in + 1)];
            offset += fan_out * (fan_in + 1);
            let input = acts.last().expect("input layer");
            let next: Vec<f64> = (0..fan_out)
                .map(|j| {
                    let z = dot(&w[j * fan_in..(j + 1) * fan_in], input) + b[j];
                    if l == last {
                        sigmoid(z)
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(next);
        }
        acts
    }

    /// `f_a(d; x)` and its gradient with respect to `x`.
    pub fn output_gradient(&self, x: &ParamVector, d: &[f64], a: usize) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(x, d)?;
        self.check_action(a)?;
        let mut grad = vec![0.0; self.n_params];
        let f = self.output_gradient_into(x.as_slice(), d, a, &mut grad);
        Ok((f, grad))
    }

    /// Unchecked; writes `∇f_a` into `grad` (which must be zeroed) and returns `f_a`.
    pub(crate) fn output_gradient_into(&self, x: &[f64], d: &[f64], a: usize, grad: &mut [f64]) -> f64 {
        match &self.family {
            ModelFamily::ToyTrig => {
                let dd = d[0];
                let u = dd * x[0];
                let s = u.sin().powi(2);
                let e = (-u * u).exp();
                // d/dx sin²(dx) = d sin(2dx); d/dx e^{-(dx)²} = -2 d² x e^{-(dx)²}
                let ds = dd * (2.0 * u).sin();
                let de = -2.0 * dd * u * e;
                let (cs, ce) = if a == 0 { (0.2, 0.8) } else { (0.8, 0.2) };
                grad[0] = cs * ds + ce * de;
                cs * s + ce * e
            }
            ModelFamily::Linear { link } => {
                let stride = self.context_dim + 1;
                let row = &x[a * stride..(a + 1) * stride];
                let z = dot(&row[..self.context_dim], d) + row[self.context_dim];
                let (f, scale) = match link {
                    OutputLink::Logistic => {
                        let f = sigmoid(z);
                        (f, f * (1.0 - f))
                    }
                    OutputLink::Identity => (z, 1.0),
                };
                let g = &mut grad[a * stride..(a + 1) * stride];
                for (gi, di) in g.iter_mut().zip(d) {
                    *gi = scale * di;
                }
                g[self.context_dim] = scale;
                f
            }
            ModelFamily::Mlp { .. } => {
                let acts = self.mlp_forward(x, d);
                let sizes = self.layer_sizes();
                let out = acts.last().expect("output layer");
                let f = out[a];
                // delta = ∂f_a/∂z for the current layer
                let mut delta = vec![0.0; self.actions];
                delta[a] = f * (1.0 - f);
                let mut offset = self.n_params;
                for (l, &(fan_in, fan_out)) in sizes.iter().enumerate().rev() {
                    offset -= fan_out * (fan_in + 1);
                    let input = &acts[l];
                    let w_off = offset;
                    let b_off = offset + fan_in * fan_out;
                    for j in 0..fan_out {
                        if delta[j] == 0.0 {
                            continue;
                        }
                        for i in 0..fan_in {
                            grad[w_off + j * fan_in + i] = delta[j] * input[i];
                        }
                        grad[b_off + j] = delta[j];
                    }
                    if l > 0 {
                        let w = &x[w_off..b_off];
                        delta = (0..fan_in)
                            .map(|i| {
                                let back: f64 = (0..fan_out).map(|j| w[j * fan_in + i] * delta[j]).sum();
                                back * (1.0 - input[i] * input[i])
                            })
                            .collect();
                    }
                }
                f
            }
        }
    }

    /// Squared loss `(f_a(d; x) - r)^2`.
    pub fn loss(&self, x: &ParamVector, d: &[f64], a: usize, r: f64) -> Result<f64> {
        self.check_action(a)?;
        check_reward(r)?;
        let f = self.predict(x, d)?[a];
        Ok((f - r) * (f - r))
    }

    /// Gradient of [`RewardModel::loss`] with respect to `x`.
    pub fn loss_gradient(&self, x: &ParamVector, d: &[f64], a: usize, r: f64) -> Result<Vec<f64>> {
        check_reward(r)?;
        let (f, mut grad) = self.output_gradient(x, d, a)?;
        let factor = 2.0 * (f - r);
        grad.iter_mut().for_each(|g| *g *= factor);
        Ok(grad)
    }
}

fn check_reward(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(BanditError::RewardOutOfRange(r));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of an arbitrary scalar function.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of the loss, entry by entry. Used as the
/// independent check on [`RewardModel::loss_gradient`].
pub fn fd_gradient_oracle(
    model: &RewardModel,
    x: &ParamVector,
    d: &[f64],
    a: usize,
    r: f64,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(BanditError::InvalidParameter(format!("step h = {h} must be > 0")));
    }
    // validates shapes, action and reward once
    model.loss(x, d, a, r)?;
    Ok(central_difference(
        |p| {
            let probe = ParamVector(p.to_vec());
            model.loss(&probe, d, a, r).expect("validated above")
        },
        x.as_slice(),
        h,
    ))
}
