use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::separate::StepResult;
use super::{
    accumulate_trace, anchor_distance, anchor_pull, td_error, AgentError, FeedbackMatrices,
    Hyperparams, StepDiagnostics,
};
use crate::cells::{CellError, CellParams};
use crate::heads::{ActorHead, CriticHead, SampledAction};
use crate::math::{all_finite, axpy, outer_acc, scale_in_place};
use crate::online_grad::{CellRuntime, Engine};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharedOptions {
    /// Feed `[x, a_prev, r_prev]` to the RNN instead of `x` alone.
    pub obs_action_reward_input: bool,
}

/// Single recurrent backbone with linear actor and critic heads, updated
/// exactly in the order of the reference loop: traces with the gradients at
/// `h`, then `δ` from `v(h')`, then all parameters.
#[derive(Clone, Debug)]
pub struct SharedAgent {
    hyper: Hyperparams,
    options: SharedOptions,
    cell: CellParams,
    dt: f64,
    actor: ActorHead,
    critic: CriticHead,
    feedback: FeedbackMatrices,
    runtime: CellRuntime,
    e_a: Vec<f64>,
    e_c: Vec<f64>,
    e_r: Vec<f64>,
    pre_cell: Vec<f64>,
    pre_head: Vec<f64>,
    v_prev: f64,
    action: Vec<f64>,
    input: Vec<f64>,
    signal: Vec<f64>,
    actor_signal: Vec<f64>,
    rng: ChaCha8Rng,
    steps: u64,
    started: bool,
}

impl SharedAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cell: CellParams,
        dt: f64,
        actor: ActorHead,
        critic: CriticHead,
        feedback: FeedbackMatrices,
        hyper: Hyperparams,
        options: SharedOptions,
        rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        hyper.validate()?;
        let f = cell.feature_dim();
        if actor.feature_dim() != f || critic.w.len() != f {
            return Err(CellError::DimensionMismatch {
                what: "head features",
                expected: f,
                got: actor.feature_dim(),
            }
            .into());
        }
        let runtime = CellRuntime::new(&cell, Engine::for_kind(cell.kind()))?;
        Ok(Self {
            options,
            dt,
            e_a: vec![0.0; actor.param_len()],
            e_c: vec![0.0; critic.param_len()],
            e_r: vec![0.0; cell.trainable_len()],
            pre_cell: cell.trainable_vec(),
            pre_head: actor.w_out().to_vec(),
            v_prev: 0.0,
            action: vec![0.0; actor.action_dim()],
            input: vec![0.0; cell.input_dim()],
            signal: vec![0.0; f],
            actor_signal: vec![0.0; f],
            runtime,
            cell,
            actor,
            critic,
            feedback,
            hyper,
            rng,
            steps: 0,
            started: false,
        })
    }

    pub fn cell(&self) -> &CellParams {
        &self.cell
    }

    pub fn actor(&self) -> &ActorHead {
        &self.actor
    }

    pub fn critic(&self) -> &CriticHead {
        &self.critic
    }

    pub fn feedback(&self) -> &FeedbackMatrices {
        &self.feedback
    }

    pub fn rnn_trace(&self) -> &[f64] {
        &self.e_r
    }

    pub fn value(&self) -> f64 {
        self.v_prev
    }

    pub fn anchor_distance(&self) -> f64 {
        let cell = self.cell.trainable_vec();
        anchor_distance(
            &[&cell, self.actor.w_out()],
            &[&self.pre_cell, &self.pre_head],
        )
    }

    fn assemble_input(&mut self, x: &[f64], reward: f64) {
        let n = x.len();
        self.input[..n].copy_from_slice(x);
        if self.options.obs_action_reward_input {
            let a = self.action.len();
            self.input[n..n + a].copy_from_slice(&self.action);
            self.input[n + a] = reward;
        }
    }

    pub fn begin_episode(&mut self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        self.runtime.reset();
        for e in [&mut self.e_a, &mut self.e_c, &mut self.e_r] {
            e.iter_mut().for_each(|v| *v = 0.0);
        }
        self.action.iter_mut().for_each(|v| *v = 0.0);
        self.assemble_input(x, 0.0);
        self.runtime.advance(&self.cell, &self.input, self.dt)?;
        self.v_prev = self.critic.forward(&self.runtime.features(&self.cell));
        self.started = true;
        self.sample_and_trace()?;
        Ok(self.action.clone())
    }

    pub fn step(&mut self, x: &[f64], reward: f64, done: bool) -> Result<StepResult, AgentError> {
        if !self.started {
            return Err(AgentError::NotStarted);
        }
        let taken = self.action.clone();
        self.assemble_input(x, reward);
        self.runtime.advance(&self.cell, &self.input, self.dt)?;
        let y = self.runtime.features(&self.cell);
        let v_next = if done { 0.0 } else { self.critic.forward(&y) };
        let delta = td_error(reward, self.v_prev, v_next, self.hyper.gamma);
        let step = self.steps;
        if !delta.is_finite() {
            return Err(AgentError::NonFinite {
                what: "TD error",
                step,
            });
        }
        let h = &self.hyper;
        if h.alpha_c * delta != 0.0 {
            self.critic.add_scaled(&self.e_c, h.alpha_c * delta);
        }
        if h.alpha_a * delta != 0.0 {
            axpy(h.alpha_a * delta, &self.e_a, self.actor.w_out_mut());
        }
        if h.alpha_r() * delta != 0.0 {
            self.cell.add_scaled(&self.e_r, h.alpha_r() * delta);
        }
        if h.eta_p > 0.0 && (h.alpha_a > 0.0 || h.alpha_r() > 0.0) {
            let mut cell = self.cell.trainable_vec();
            anchor_pull(
                &mut [
                    (&mut cell[..], &self.pre_cell[..], h.alpha_r()),
                    (self.actor.w_out_mut(), &self.pre_head[..], h.alpha_a),
                ],
                h.eta_p,
            );
            self.cell.set_trainable(&cell);
        }
        self.cell.project();
        if !all_finite(&self.cell.trainable_vec())
            || !all_finite(self.actor.w_out())
            || !all_finite(&self.critic.params())
        {
            return Err(AgentError::NonFinite {
                what: "parameters",
                step,
            });
        }
        self.steps += 1;
        let (action, entropy) = if done {
            self.started = false;
            (None, 0.0)
        } else {
            self.v_prev = v_next;
            let entropy = self.sample_and_trace()?;
            (Some(self.action.clone()), entropy)
        };
        Ok(StepResult {
            action,
            diagnostics: StepDiagnostics {
                step,
                reward,
                delta,
                value: v_next,
                entropy,
                anchor_distance: self.anchor_distance(),
                action: taken,
            },
        })
    }

    fn sample_and_trace(&mut self) -> Result<f64, AgentError> {
        let h = &self.hyper;
        let y = self.runtime.features(&self.cell);
        let dist = self.actor.forward(&y);
        let SampledAction { action, pre } = dist.sample_with_pre(&mut self.rng);
        let lp = dist.grad_log_prob_pre(&pre)?;
        accumulate_trace(&mut self.e_c, h.gamma * h.lambda_c, &self.critic.grad(&y));
        scale_in_place(h.gamma * h.lambda_a, &mut self.e_a);
        outer_acc(&lp.output_grad, &y, &mut self.e_a);
        // ε = g_C + η_A g_A
        self.feedback
            .actor_signal(&lp.output_grad, &mut self.actor_signal);
        for ((s, c), a) in self
            .signal
            .iter_mut()
            .zip(self.feedback.critic_signal())
            .zip(&self.actor_signal)
        {
            *s = c + h.eta_a * a;
        }
        scale_in_place(h.gamma * h.lambda_r, &mut self.e_r);
        self.runtime
            .accumulate_grad(&self.cell, &self.signal, &mut self.e_r);
        self.action = action;
        Ok(dist.entropy())
    }
}
