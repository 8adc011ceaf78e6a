use rand_chacha::ChaCha8Rng;

use super::{
    accumulate_trace, anchor_distance, anchor_pull, td_error, AgentError, FeedbackMatrices,
    Hyperparams, StepDiagnostics,
};
use crate::cells::{CellParams, CellSpec};
use crate::heads::{CriticHead, SampledAction};
use crate::math::{all_finite, axpy, outer_acc, scale_in_place};
use crate::online_grad::{CellRuntime, Engine};
use crate::policy::PretrainedPolicy;
use crate::seeds::{derive_seed, rng_for};

/// Everything carried between environment steps.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub actor: CellRuntime,
    pub critic: CellRuntime,
    /// Actor head trace (shape of `W_out`).
    pub e_a: Vec<f64>,
    /// Critic head trace `(w, b)`.
    pub e_c: Vec<f64>,
    pub e_r_actor: Vec<f64>,
    pub e_r_critic: Vec<f64>,
    pub v_prev: f64,
    pub action: Vec<f64>,
    pub steps: u64,
    pub started: bool,
    /// Entropy gradient over `W_out` at the last policy evaluation.
    entropy_grad: Vec<f64>,
    rng: ChaCha8Rng,
}

/// Result of one learning step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// Next action, `None` once the episode is done.
    pub action: Option<Vec<f64>>,
    pub diagnostics: StepDiagnostics,
}

/// RTRRL with separate actor and critic RNNs.
///
/// The critic RNN's trace is driven by `g_C = B_C·1`, the actor RNN's by
/// `g_A = B_A ∇_π log π[a]`. The encoder stays frozen.
#[derive(Clone, Debug)]
pub struct RtrrlAgent {
    hyper: Hyperparams,
    policy: PretrainedPolicy,
    critic_cell: CellParams,
    critic_head: CriticHead,
    feedback: FeedbackMatrices,
    pre_cell: Vec<f64>,
    pre_head: Vec<f64>,
    state: AgentState,
    zero_td: bool,
    signal: Vec<f64>,
}

impl RtrrlAgent {
    /// Fresh critic (RNN of the actor's kind and size, zero head), feedback
    /// matrices and sampling stream, all derived from `seed`.
    pub fn new(
        policy: PretrainedPolicy,
        seed: u64,
        hyper: Hyperparams,
    ) -> Result<Self, AgentError> {
        policy.validate()?;
        hyper.validate()?;
        let spec: CellSpec = policy.spec();
        let critic_cell = CellParams::init(&spec, derive_seed(seed, &[1]));
        let f = policy.cell.feature_dim();
        let critic_head = CriticHead::zeros(f);
        let feedback =
            FeedbackMatrices::init(f, policy.head.output_dim(), &mut rng_for(seed, &[2]));
        Self::with_parts(
            policy,
            critic_cell,
            critic_head,
            feedback,
            hyper,
            rng_for(seed, &[3]),
        )
    }

    pub fn with_parts(
        policy: PretrainedPolicy,
        critic_cell: CellParams,
        critic_head: CriticHead,
        feedback: FeedbackMatrices,
        hyper: Hyperparams,
        rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        policy.validate()?;
        hyper.validate()?;
        let engine = Engine::for_kind(policy.cell.kind());
        let state = AgentState {
            actor: CellRuntime::new(&policy.cell, engine)?,
            critic: CellRuntime::new(&critic_cell, Engine::for_kind(critic_cell.kind()))?,
            e_a: vec![0.0; policy.head.param_len()],
            e_c: vec![0.0; critic_head.param_len()],
            e_r_actor: vec![0.0; policy.cell.trainable_len()],
            e_r_critic: vec![0.0; critic_cell.trainable_len()],
            v_prev: 0.0,
            action: vec![0.0; policy.action_dim()],
            steps: 0,
            started: false,
            entropy_grad: vec![0.0; policy.head.param_len()],
            rng,
        };
        let signal = vec![0.0; policy.cell.feature_dim()];
        Ok(Self {
            hyper,
            pre_cell: policy.cell.trainable_vec(),
            pre_head: policy.head.w_out().to_vec(),
            policy,
            critic_cell,
            critic_head,
            feedback,
            state,
            zero_td: false,
            signal,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn policy(&self) -> &PretrainedPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> PretrainedPolicy {
        self.policy
    }

    pub fn critic_cell(&self) -> &CellParams {
        &self.critic_cell
    }

    pub fn critic_head(&self) -> &CriticHead {
        &self.critic_head
    }

    pub fn feedback(&self) -> &FeedbackMatrices {
        &self.feedback
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn theta_pre(&self) -> (&[f64], &[f64]) {
        (&self.pre_cell, &self.pre_head)
    }

    /// Forces `δ ≡ 0` (ablation leaving only the anchor penalty active).
    pub fn set_zero_td(&mut self, on: bool) {
        self.zero_td = on;
    }

    pub fn anchor_distance(&self) -> f64 {
        let cell = self.policy.cell.trainable_vec();
        anchor_distance(
            &[&cell, self.policy.head.w_out()],
            &[&self.pre_cell, &self.pre_head],
        )
    }

    /// Resets hidden states, Jacobian traces and eligibility traces, steps
    /// both RNNs once on `obs`, and samples the first action.
    pub fn begin_episode(&mut self, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        let x = self.policy.autoencoder.encode(obs);
        self.begin_episode_encoded(&x)
    }

    pub fn begin_episode_encoded(&mut self, x: &[f64]) -> Result<Vec<f64>, AgentError> {
        let s = &mut self.state;
        s.actor.reset();
        s.critic.reset();
        for e in [
            &mut s.e_a,
            &mut s.e_c,
            &mut s.e_r_actor,
            &mut s.e_r_critic,
            &mut s.entropy_grad,
        ] {
            e.iter_mut().for_each(|v| *v = 0.0);
        }
        s.actor.advance(&self.policy.cell, x, self.policy.dt)?;
        s.critic.advance(&self.critic_cell, x, self.policy.dt)?;
        let y_c = s.critic.features(&self.critic_cell);
        s.v_prev = self.critic_head.forward(&y_c);
        s.started = true;
        self.policy_step_and_traces()?;
        Ok(self.state.action.clone())
    }

    pub fn step(&mut self, obs: &[f64], reward: f64, done: bool) -> Result<StepResult, AgentError> {
        let x = self.policy.autoencoder.encode(obs);
        self.step_encoded(&x, reward, done)
    }

    /// One environment step of learning: `obs`/`reward` result from the
    /// previously returned action.
    pub fn step_encoded(
        &mut self,
        x: &[f64],
        reward: f64,
        done: bool,
    ) -> Result<StepResult, AgentError> {
        if !self.state.started {
            return Err(AgentError::NotStarted);
        }
        let dt = self.policy.dt;
        self.state.actor.advance(&self.policy.cell, x, dt)?;
        self.state.critic.advance(&self.critic_cell, x, dt)?;
        let y_c = self.state.critic.features(&self.critic_cell);
        let v_next = if done {
            0.0
        } else {
            self.critic_head.forward(&y_c)
        };
        let delta = if self.zero_td {
            0.0
        } else {
            td_error(reward, self.state.v_prev, v_next, self.hyper.gamma)
        };
        let step = self.state.steps;
        if !delta.is_finite() || !v_next.is_finite() {
            return Err(AgentError::NonFinite {
                what: "TD error",
                step,
            });
        }
        let taken = self.state.action.clone();
        self.apply_updates(delta)?;
        self.state.steps += 1;
        let (action, entropy) = if done {
            self.state.started = false;
            (None, 0.0)
        } else {
            self.state.v_prev = v_next;
            let entropy = self.policy_step_and_traces()?;
            (Some(self.state.action.clone()), entropy)
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

    /// `θ ← θ + α δ e` per group, entropy bonus on the actor head, anchor
    /// penalty on the actor parameters.
    fn apply_updates(&mut self, delta: f64) -> Result<(), AgentError> {
        let h = &self.hyper;
        let s = &self.state;
        let (a_a, a_c, a_r) = (h.alpha_a, h.alpha_c, h.alpha_r());
        if a_c * delta != 0.0 {
            self.critic_head.add_scaled(&s.e_c, a_c * delta);
            self.critic_cell.add_scaled(&s.e_r_critic, a_c * delta);
            self.critic_cell.project();
        }
        if a_a * delta != 0.0 {
            axpy(a_a * delta, &s.e_a, self.policy.head.w_out_mut());
        }
        if h.eta_h > 0.0 && a_a > 0.0 {
            axpy(a_a * h.eta_h, &s.entropy_grad, self.policy.head.w_out_mut());
        }
        if a_r * delta != 0.0 {
            self.policy.cell.add_scaled(&s.e_r_actor, a_r * delta);
        }
        if h.eta_p > 0.0 && (a_a > 0.0 || a_r > 0.0) {
            let mut cell = self.policy.cell.trainable_vec();
            anchor_pull(
                &mut [
                    (&mut cell[..], &self.pre_cell[..], a_r),
                    (self.policy.head.w_out_mut(), &self.pre_head[..], a_a),
                ],
                h.eta_p,
            );
            self.policy.cell.set_trainable(&cell);
        }
        self.policy.cell.project();
        let step = self.state.steps;
        if !all_finite(self.policy.head.w_out()) || !all_finite(&self.policy.cell.trainable_vec()) {
            return Err(AgentError::NonFinite {
                what: "actor parameters",
                step,
            });
        }
        if !all_finite(&self.critic_head.params()) || !all_finite(&self.critic_cell.trainable_vec())
        {
            return Err(AgentError::NonFinite {
                what: "critic parameters",
                step,
            });
        }
        Ok(())
    }

    /// Evaluates π at the current hidden state, samples the next action and
    /// folds the new gradients into the eligibility traces. Returns the
    /// policy entropy.
    fn policy_step_and_traces(&mut self) -> Result<f64, AgentError> {
        let h = &self.hyper;
        let s = &mut self.state;
        let y_a = s.actor.features(&self.policy.cell);
        let y_c = s.critic.features(&self.critic_cell);
        let dist = self.policy.head.forward(&y_a);
        let SampledAction { action, pre } = dist.sample_with_pre(&mut s.rng);
        let lp = dist.grad_log_prob_pre(&pre)?;

        // e_A ← γλ_A e_A + ∇_{W_out} log π[a]
        scale_in_place(h.gamma * h.lambda_a, &mut s.e_a);
        outer_acc(&lp.output_grad, &y_a, &mut s.e_a);
        // e_C ← γλ_C e_C + (y, 1)
        accumulate_trace(
            &mut s.e_c,
            h.gamma * h.lambda_c,
            &self.critic_head.grad(&y_c),
        );
        // actor RNN: Ĵᵀ B_A ∇_π log π[a]
        self.feedback
            .actor_signal(&lp.output_grad, &mut self.signal);
        scale_in_place(h.gamma * h.lambda_r, &mut s.e_r_actor);
        s.actor
            .accumulate_grad(&self.policy.cell, &self.signal, &mut s.e_r_actor);
        // critic RNN: Ĵᵀ B_C 1
        scale_in_place(h.gamma * h.lambda_r, &mut s.e_r_critic);
        s.critic.accumulate_grad(
            &self.critic_cell,
            self.feedback.critic_signal(),
            &mut s.e_r_critic,
        );

        if h.eta_h > 0.0 {
            s.entropy_grad.iter_mut().for_each(|v| *v = 0.0);
            outer_acc(&dist.entropy_output_grad(), &y_a, &mut s.entropy_grad);
        }
        let step = s.steps;
        if !all_finite(&s.e_a) || !all_finite(&s.e_r_actor) || !all_finite(&s.e_r_critic) {
            return Err(AgentError::NonFinite {
                what: "eligibility trace",
                step,
            });
        }
        s.action = action;
        Ok(dist.entropy())
    }
}

impl AgentState {
    pub fn traces_are_zero(&self) -> bool {
        [&self.e_a, &self.e_c, &self.e_r_actor, &self.e_r_critic]
            .iter()
            .all(|e| e.iter().all(|&v| v == 0.0))
    }
}
