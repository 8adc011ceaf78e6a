//! Linear actor and critic heads on top of the recurrent features.
//!
//! The actor emits `2A` preactivations: the first `A` are the pre-squash
//! means, the last `A` pass through `softplus(·) + SIGMA_FLOOR` to give the
//! pre-squash standard deviations. Actions are `scale · tanh(μ + σ z)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{dot, matvec, matvec_t, outer_acc, sigmoid, softplus};

pub const SIGMA_FLOOR: f64 = 1e-4;

/// Relative margin kept between an action and its bound.
const BOUND_MARGIN: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("action component {index} = {value} is not strictly inside ±{bound}")]
    OutOfBounds {
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action scale must be positive")]
    InvalidScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorHead {
    action_dim: usize,
    feature_dim: usize,
    /// Row-major `2A × F`.
    w_out: Vec<f64>,
    action_scale: Vec<f64>,
}

impl ActorHead {
    pub fn new(
        feature_dim: usize,
        w_out: Vec<f64>,
        action_scale: Vec<f64>,
    ) -> Result<Self, HeadError> {
        let action_dim = action_scale.len();
        if w_out.len() != 2 * action_dim * feature_dim {
            return Err(HeadError::Dimension {
                what: "W_out",
                expected: 2 * action_dim * feature_dim,
                got: w_out.len(),
            });
        }
        if action_scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(HeadError::InvalidScale);
        }
        Ok(Self {
            action_dim,
            feature_dim,
            w_out,
            action_scale,
        })
    }

    /// Mean rows uniform in `±1/√F`; σ rows start at zero.
    pub fn init<R: Rng>(feature_dim: usize, action_scale: Vec<f64>, rng: &mut R) -> Self {
        let a = action_scale.len();
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let mut w_out = vec![0.0; 2 * a * feature_dim];
        for v in &mut w_out[..a * feature_dim] {
            *v = rng.random_range(-bound..bound);
        }
        Self {
            action_dim: a,
            feature_dim,
            w_out,
            action_scale,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.action_dim
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    pub fn w_out_mut(&mut self) -> &mut [f64] {
        &mut self.w_out
    }

    pub fn action_scale(&self) -> &[f64] {
        &self.action_scale
    }

    pub fn param_len(&self) -> usize {
        self.w_out.len()
    }

    pub fn forward(&self, y: &[f64]) -> ActionDistribution {
        debug_assert_eq!(y.len(), self.feature_dim);
        let out = matvec(&self.w_out, self.output_dim(), self.feature_dim, y);
        ActionDistribution::from_preactivations(&out, &self.action_scale)
    }

    /// `out += g yᵀ`: gradient over `W_out` of `gᵀ (W_out y)`.
    pub fn param_grad_into(&self, output_grad: &[f64], y: &[f64], out: &mut [f64]) {
        outer_acc(output_grad, y, out);
    }

    /// `W_outᵀ g`: the exact feature-space signal of an output gradient.
    pub fn feature_grad(&self, output_grad: &[f64]) -> Vec<f64> {
        matvec_t(
            &self.w_out,
            self.output_dim(),
            self.feature_dim,
            output_grad,
        )
    }
}

/// Tanh-squashed, range-scaled diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Preactivations the σ values came from.
    pub sigma_pre: Vec<f64>,
    pub action_scale: Vec<f64>,
}

/// An action together with the pre-squash Gaussian sample it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub pre: Vec<f64>,
}

/// Derivatives of `log π[a]` with respect to the head's `2A` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbGrad {
    pub log_prob: f64,
    /// `[∂/∂μ; ∂/∂σ_pre]`
    pub output_grad: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_preactivations(out: &[f64], action_scale: &[f64]) -> Self {
        let a = action_scale.len();
        let sigma_pre = out[a..2 * a].to_vec();
        Self {
            mu: out[..a].to_vec(),
            sigma: sigma_pre
                .iter()
                .map(|&s| softplus(s) + SIGMA_FLOOR)
                .collect(),
            sigma_pre,
            action_scale: action_scale.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn squash(&self, i: usize, u: f64) -> f64 {
        let s = self.action_scale[i];
        let a = s * u.tanh();
        let limit = s * (1.0 - BOUND_MARGIN);
        a.clamp(-limit, limit)
    }

    /// Action for a given standard-normal draw `z`.
    pub fn action_for_noise(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.squash(i, self.mu[i] + self.sigma[i] * z[i]))
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.action_for_noise(&z)
    }

    /// Draws an action and also returns the pre-squash sample `u = μ + σ z`.
    pub fn sample_with_pre<R: Rng>(&self, rng: &mut R) -> SampledAction {
        let pre: Vec<f64> = (0..self.dim())
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                self.mu[i] + self.sigma[i] * z
            })
            .collect();
        let action = pre
            .iter()
            .enumerate()
            .map(|(i, &u)| self.squash(i, u))
            .collect();
        SampledAction { action, pre }
    }

    pub fn mode(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.squash(i, self.mu[i]))
            .collect()
    }

    fn unsquash(&self, action: &[f64]) -> Result<Vec<f64>, HeadError> {
        if action.len() != self.dim() {
            return Err(HeadError::Dimension {
                what: "action",
                expected: self.dim(),
                got: action.len(),
            });
        }
        action
            .iter()
            .zip(&self.action_scale)
            .enumerate()
            .map(|(index, (&value, &bound))| {
                if value.abs() < bound {
                    Ok((value / bound).atanh())
                } else {
                    Err(HeadError::OutOfBounds {
                        index,
                        value,
                        bound,
                    })
                }
            })
            .collect()
    }

    /// `Σ_i [log N(u_i; μ_i, σ_i) − log(1 − tanh² u_i) − log scale_i]` with
    /// `u = atanh(a / scale)`.
    pub fn log_prob(&self, action: &[f64]) -> Result<f64, HeadError> {
        let u = self.unsquash(action)?;
        Ok((0..self.dim())
            .map(|i| {
                let z = (u[i] - self.mu[i]) / self.sigma[i];
                let r = action[i] / self.action_scale[i];
                -0.5 * z * z
                    - self.sigma[i].ln()
                    - 0.5 * (2.0 * PI).ln()
                    - (1.0 - r * r).ln()
                    - self.action_scale[i].ln()
            })
            .sum())
    }

    pub fn grad_log_prob(&self, action: &[f64]) -> Result<LogProbGrad, HeadError> {
        let log_prob = self.log_prob(action)?;
        let u = self.unsquash(action)?;
        let a = self.dim();
        let mut output_grad = vec![0.0; 2 * a];
        for i in 0..a {
            let s = self.sigma[i];
            let d = u[i] - self.mu[i];
            output_grad[i] = d / (s * s);
            let d_sigma = d * d / (s * s * s) - 1.0 / s;
            output_grad[a + i] = d_sigma * sigmoid(self.sigma_pre[i]);
        }
        Ok(LogProbGrad {
            log_prob,
            output_grad,
        })
    }

    /// Same as [`Self::grad_log_prob`] but from the pre-squash sample, which
    /// stays exact when `tanh(u)` rounds onto the action bound.
    pub fn grad_log_prob_pre(&self, pre: &[f64]) -> Result<LogProbGrad, HeadError> {
        if pre.len() != self.dim() {
            return Err(HeadError::Dimension {
                what: "pre-squash sample",
                expected: self.dim(),
                got: pre.len(),
            });
        }
        let a = self.dim();
        let mut output_grad = vec![0.0; 2 * a];
        let mut log_prob = 0.0;
        for i in 0..a {
            let (u, s) = (pre[i], self.sigma[i]);
            let d = u - self.mu[i];
            // log(1 − tanh² u) = 2 (ln 2 − |u| − softplus(−2|u|))
            let log_dtanh = 2.0 * (std::f64::consts::LN_2 - u.abs() - softplus(-2.0 * u.abs()));
            log_prob += -0.5 * (d / s).powi(2)
                - s.ln()
                - 0.5 * (2.0 * PI).ln()
                - log_dtanh
                - self.action_scale[i].ln();
            output_grad[i] = d / (s * s);
            output_grad[a + i] = (d * d / (s * s * s) - 1.0 / s) * sigmoid(self.sigma_pre[i]);
        }
        Ok(LogProbGrad {
            log_prob,
            output_grad,
        })
    }

    /// Pre-squash Gaussian entropy `Σ ½ ln(2πe σ²)`, a surrogate for the
    /// squashed distribution's entropy.
    pub fn entropy(&self) -> f64 {
        self.sigma
            .iter()
            .map(|s| 0.5 * (2.0 * PI * std::f64::consts::E * s * s).ln())
            .sum()
    }

    /// Gradient of [`Self::entropy`] with respect to the `2A` outputs.
    pub fn entropy_output_grad(&self) -> Vec<f64> {
        let a = self.dim();
        let mut g = vec![0.0; 2 * a];
        for i in 0..a {
            g[a + i] = sigmoid(self.sigma_pre[i]) / self.sigma[i];
        }
        g
    }
}

/// Linear all-to-one value head `v = w·y + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl CriticHead {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            w: vec![0.0; feature_dim],
            b: 0.0,
        }
    }

    pub fn init<R: Rng>(feature_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        Self {
            w: (0..feature_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            b: 0.0,
        }
    }

    pub fn param_len(&self) -> usize {
        self.w.len() + 1
    }

    pub fn forward(&self, y: &[f64]) -> f64 {
        dot(&self.w, y) + self.b
    }

    /// `∇_{(w, b)} v = (y, 1)`.
    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(y.len() + 1);
        g.extend_from_slice(y);
        g.push(1.0);
        g
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.b);
        p
    }

    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        let n = self.w.len();
        self.w
            .iter_mut()
            .zip(&delta[..n])
            .for_each(|(w, d)| *w += scale * d);
        self.b += scale * delta[n];
    }
}
