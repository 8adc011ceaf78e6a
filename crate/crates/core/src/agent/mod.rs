//! Online TD(λ) actor-critic over recurrent networks with forward-mode
//! credit assignment.
//!
//! [`RtrrlAgent`] is the fine-tuning architecture with separate actor and
//! critic RNNs; [`SharedAgent`] is the single-backbone variant with mixed
//! learning signal `g_C + η_A g_A`.

mod separate;
mod shared;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::CellError;
use crate::heads::HeadError;
use crate::math::{axpy, norm2, scale_in_place};
use crate::online_grad::GradError;

pub use separate::{AgentState, RtrrlAgent};
pub use shared::{SharedAgent, SharedOptions};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },
    #[error("step called before begin_episode")]
    NotStarted,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

/// Fine-tuning hyperparameters. Defaults are the published configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lambda_a: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    /// Actor head step size.
    pub alpha_a: f64,
    /// Critic head and critic RNN step size.
    pub alpha_c: f64,
    /// Actor RNN step size; `None` uses `alpha_a`.
    pub alpha_r: Option<f64>,
    pub eta_h: f64,
    /// Parameter-change penalty weight.
    pub eta_p: f64,
    /// Weight of the actor signal in the shared-backbone RNN trace.
    pub eta_a: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda_a: 0.95,
            lambda_c: 0.95,
            lambda_r: 0.95,
            alpha_a: 1e-6,
            alpha_c: 1e-5,
            alpha_r: None,
            eta_h: 0.0,
            eta_p: 1e-5,
            eta_a: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn alpha_r(&self) -> f64 {
        self.alpha_r.unwrap_or(self.alpha_a)
    }

    /// All step sizes set to zero.
    pub fn frozen() -> Self {
        Self {
            alpha_a: 0.0,
            alpha_c: 0.0,
            alpha_r: Some(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidHyper(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        for l in [self.lambda_a, self.lambda_c, self.lambda_r] {
            if !(0.0..=1.0).contains(&l) {
                return bad("trace decays must lie in [0, 1]");
            }
        }
        for a in [self.alpha_a, self.alpha_c, self.alpha_r()] {
            if !(a >= 0.0) || !a.is_finite() {
                return bad("step sizes must be finite and non-negative");
            }
        }
        if !(self.eta_h >= 0.0) || !(self.eta_p >= 0.0) || !self.eta_a.is_finite() {
            return bad("eta_h and eta_p must be non-negative");
        }
        Ok(())
    }
}

/// `δ = r + γ v' − v`.
#[inline]
pub fn td_error(r: f64, v: f64, v_next: f64, gamma: f64) -> f64 {
    r + gamma * v_next - v
}

/// `e ← decay · e + grad`.
#[inline]
pub fn accumulate_trace(e: &mut [f64], decay: f64, grad: &[f64]) {
    scale_in_place(decay, e);
    axpy(1.0, grad, e);
}

/// Fixed random feedback used in place of transported head weights.
///
/// `b_a` is row-major `F × 2A`, `b_c` has length `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMatrices {
    pub feature_dim: usize,
    pub output_dim: usize,
    pub b_a: Vec<f64>,
    pub b_c: Vec<f64>,
}

impl FeedbackMatrices {
    /// Entries uniform in `±1/√F`.
    pub fn init<R: Rng>(feature_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        Self {
            feature_dim,
            output_dim,
            b_a: (0..feature_dim * output_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            b_c: (0..feature_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        }
    }

    /// Weight transport: `B_A = W_outᵀ`, `B_C = w`. Used to compare against
    /// exact gradients.
    pub fn transported(w_out: &[f64], output_dim: usize, critic_w: &[f64]) -> Self {
        let f = critic_w.len();
        let mut b_a = vec![0.0; f * output_dim];
        for o in 0..output_dim {
            for k in 0..f {
                b_a[k * output_dim + o] = w_out[o * f + k];
            }
        }
        Self {
            feature_dim: f,
            output_dim,
            b_a,
            b_c: critic_w.to_vec(),
        }
    }

    /// `g_A = B_A ∇_π log π[a]`.
    pub fn actor_signal(&self, output_grad: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.b_a[k * self.output_dim..(k + 1) * self.output_dim]
                .iter()
                .zip(output_grad)
                .map(|(b, g)| b * g)
                .sum();
        }
    }

    /// `g_C = B_C · 1`.
    pub fn critic_signal(&self) -> &[f64] {
        &self.b_c
    }
}

/// Penalty step on `θ` for `η_P ‖θ_pre − θ‖₂`, applied group-wise with
/// each group's step size. Every coordinate of `θ − θ_pre` shrinks by the
/// factor `max(0, 1 − α_g η_P / ‖θ − θ_pre‖)`, so the distance never grows
/// and never overshoots the anchor. At `θ = θ_pre` the step is zero.
pub fn anchor_pull(groups: &mut [(&mut [f64], &[f64], f64)], eta_p: f64) {
    if eta_p == 0.0 {
        return;
    }
    let dist = groups
        .iter()
        .flat_map(|(theta, pre, _)| theta.iter().zip(pre.iter()).map(|(t, p)| (t - p) * (t - p)))
        .sum::<f64>()
        .sqrt();
    if dist == 0.0 {
        return;
    }
    for (theta, pre, alpha) in groups.iter_mut() {
        if *alpha == 0.0 {
            continue;
        }
        let factor = (1.0 - *alpha * eta_p / dist).max(0.0);
        for (t, p) in theta.iter_mut().zip(pre.iter()) {
            *t = p + factor * (*t - p);
        }
    }
}

/// `‖θ − θ_pre‖₂` over concatenated groups.
pub fn anchor_distance(theta: &[&[f64]], pre: &[&[f64]]) -> f64 {
    let diff: Vec<f64> = theta
        .iter()
        .zip(pre)
        .flat_map(|(t, p)| t.iter().zip(p.iter()).map(|(a, b)| a - b))
        .collect();
    norm2(&diff)
}

/// One row of per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: u64,
    pub reward: f64,
    pub delta: f64,
    pub value: f64,
    pub entropy: f64,
    pub anchor_distance: f64,
    pub action: Vec<f64>,
}
