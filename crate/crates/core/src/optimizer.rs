//! Stage-wise schedules, IPS-corrected gradients, saddle-escape noise and
//! the SGD updates for both the stage-wise and the one-round-per-stage
//! (strongly convex) variants.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BanditError, Result};
use crate::model::ParamVector;

/// Stage lengths `T_0 s^{2υ}`, learning rates `η_0 / s^υ` and noise scale `𝒩_0 s^{κ/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub t0: u64,
    pub upsilon: f64,
    pub stages: u64,
    pub eta0: f64,
    pub noise0: f64,
    pub kappa: f64,
}

impl StageSchedule {
    pub fn new(t0: u64, upsilon: f64, stages: u64, eta0: f64, noise0: f64, kappa: f64) -> Result<Self> {
        if t0 == 0 || stages == 0 {
            return Err(BanditError::InvalidParameter("T0 and S must be positive".into()));
        }
        if !(upsilon > 0.0) || !(eta0 > 0.0) || !(noise0 >= 0.0) || !(kappa > 0.0) {
            return Err(BanditError::InvalidParameter(format!(
                "need upsilon > 0, eta0 > 0, noise0 >= 0, kappa > 0 (got {upsilon}, {eta0}, {noise0}, {kappa})"
            )));
        }
        Ok(Self {
            t0,
            upsilon,
            stages,
            eta0,
            noise0,
            kappa,
        })
    }

    /// `T_0 s^{2υ}` rounds, floored; exact integer arithmetic when `υ = 1`.
    pub fn stage_length(&self, s: u64) -> u64 {
        debug_assert!(s >= 1);
        if self.upsilon == 1.0 {
            self.t0 * s * s
        } else {
            (self.t0 as f64 * (s as f64).powf(2.0 * self.upsilon)).floor() as u64
        }
    }

    /// `η_0 / s^υ`.
    pub fn learning_rate(&self, s: u64) -> f64 {
        self.eta0 / (s as f64).powf(self.upsilon)
    }

    /// Rounds in stages `1..=s`.
    pub fn cumulative_rounds(&self, s: u64) -> u64 {
        (1..=s).map(|j| self.stage_length(j)).sum()
    }

    pub fn total_rounds(&self) -> u64 {
        self.cumulative_rounds(self.stages)
    }
}

/// Position in the run: stage `s`, index `n` within the stage, and global round `I(s, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCursor {
    pub stage: u64,
    pub n: u64,
    pub global: u64,
}

impl Default for RoundCursor {
    fn default() -> Self {
        Self::start()
    }
}

impl RoundCursor {
    pub fn start() -> Self {
        Self {
            stage: 1,
            n: 1,
            global: 1,
        }
    }

    /// Moves to the next round, rolling into stage `s + 1` after `stage_len` rounds.
    pub fn advance(&mut self, stage_len: u64) {
        self.global += 1;
        if self.n >= stage_len {
            self.stage += 1;
            self.n = 1;
        } else {
            self.n += 1;
        }
    }
}

/// `∇l / π`.
pub fn ips_gradient(loss_grad: &[f64], propensity: f64) -> Result<Vec<f64>> {
    if !(propensity > 0.0) {
        return Err(BanditError::NonPositivePropensity(propensity));
    }
    Ok(loss_grad.iter().map(|g| g / propensity).collect())
}

/// `s^{κ/2} 𝒩_0 w / ‖w‖` with `w` standard Gaussian. Zero when `𝒩_0 = 0`,
/// in which case the RNG is left untouched.
pub fn sample_noise<R: Rng + ?Sized>(dim: usize, s: u64, kappa: f64, noise0: f64, rng: &mut R) -> Vec<f64> {
    if noise0 == 0.0 || dim == 0 {
        return vec![0.0; dim];
    }
    let scale = (s as f64).powf(0.5 * kappa) * noise0;
    loop {
        let w: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return w.into_iter().map(|v| v / norm * scale).collect();
        }
    }
}

/// `x - η (g + noise)`.
pub fn sgd_step(x: &ParamVector, grad: &[f64], noise: &[f64], eta: f64) -> Result<ParamVector> {
    if grad.len() != x.len() || noise.len() != x.len() {
        return Err(BanditError::Shape {
            what: "gradient",
            expected: x.len(),
            actual: if grad.len() != x.len() { grad.len() } else { noise.len() },
        });
    }
    let values = x
        .as_slice()
        .iter()
        .zip(grad)
        .zip(noise)
        .map(|((xi, g), n)| xi - eta * (g + n))
        .collect();
    ParamVector::new(values)
}

/// Round offset `Δs = ⌈2^{1/υ} - 1⌉` of the one-round-per-stage variant.
pub fn sgdscb_offset(upsilon: f64) -> Result<u64> {
    if !(upsilon > 0.0) {
        return Err(BanditError::InvalidParameter(format!(
            "upsilon = {upsilon} must be > 0"
        )));
    }
    Ok((2f64.powf(1.0 / upsilon) - 1.0).ceil() as u64)
}

/// Step size `η_0 / (t + Δs)^υ`.
pub fn sgdscb_rate(t: u64, delta_s: u64, eta0: f64, upsilon: f64) -> f64 {
    eta0 / ((t + delta_s) as f64).powf(upsilon)
}

/// `x - η_0 / (t + Δs)^υ · g`, no noise.
pub fn sgdscb_step(
    x: &ParamVector,
    ips_grad: &[f64],
    t: u64,
    delta_s: u64,
    eta0: f64,
    upsilon: f64,
) -> Result<ParamVector> {
    if t == 0 {
        return Err(BanditError::InvalidParameter("round index t starts at 1".into()));
    }
    let zeros = vec![0.0; x.len()];
    sgd_step(x, ips_grad, &zeros, sgdscb_rate(t, delta_s, eta0, upsilon))
}
