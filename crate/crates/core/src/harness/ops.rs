use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{RtrrlAgent, StepDiagnostics};
use crate::bc::{DemoDataset, DemoEpisode, DemoMeta};
use crate::env::{DrivingEnv, Expert, ExpertParams, TrajectoryRow};
use crate::policy::{PolicyRunner, PretrainedPolicy};

/// Totals printed after collection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub episodes: usize,
    pub steps: usize,
    /// Mean over episodes of the summed environment reward.
    pub mean_reward: f64,
}

/// Expert rollouts of fixed length; the car restarts from the start line
/// whenever the environment ends an episode early.
pub fn collect_demos(
    env: &mut DrivingEnv,
    expert: &ExpertParams,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<(DemoDataset, CollectSummary), HarnessError> {
    if episodes == 0 || steps == 0 {
        return Err(HarnessError::Config(
            "collection needs at least one episode of one step".into(),
        ));
    }
    let mut out = Vec::with_capacity(episodes);
    let mut total_reward = 0.0;
    for e in 0..episodes {
        let mut ex = Expert::new(expert.clone(), crate::seeds::derive_seed(seed, &[e as u64]));
        let mut obs = env.reset();
        let mut ep = DemoEpisode::default();
        while ep.len() < steps {
            let a = ex
                .act(env.state(), env.track(), &env.config().car)
                .map_err(|err| HarnessError::Expert {
                    episode: e,
                    lap: env.laps().completed(),
                    reason: err.to_string(),
                })?;
            ep.observations.push(obs);
            ep.actions.push(a.to_vec());
            let o = env.step(&a)?;
            total_reward += o.reward;
            if o.info.offroad {
                return Err(HarnessError::Expert {
                    episode: e,
                    lap: o.info.lap,
                    reason: "expert left the road".into(),
                });
            }
            obs = if o.done {
                ex.reset();
                env.reset()
            } else {
                o.obs
            };
        }
        out.push(ep);
    }
    let meta = DemoMeta {
        obs_mode: env.config().obs.mode.name().into(),
        obs_dim: env.obs_dim(),
        action_dim: 2,
        action_scale: env.action_scale(),
        dt: env.config().dt,
        source: "expert".into(),
    };
    let summary = CollectSummary {
        episodes,
        steps: episodes * steps,
        mean_reward: total_reward / episodes as f64,
    };
    Ok((
        DemoDataset {
            meta,
            episodes: out,
        },
        summary,
    ))
}

/// Outcome of a mode-action rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub reward: f64,
    pub laps: usize,
    pub steps: usize,
    pub offroad: bool,
}

/// Runs the policy's mode action from the start line until `laps` laps are
/// completed, `max_steps` steps pass, or the car leaves the road.
pub fn evaluate_policy(
    policy: &PretrainedPolicy,
    env: &mut DrivingEnv,
    laps: usize,
    max_steps: usize,
) -> Result<EvalResult, HarnessError> {
    let mut runner = PolicyRunner::new(policy);
    let mut obs = env.reset();
    let mut reward = 0.0;
    let mut steps = 0;
    loop {
        let a = runner.mode_action(&obs)?;
        let o = env.step(&a)?;
        reward += o.reward;
        steps += 1;
        if o.info.offroad || o.info.lap >= laps || steps >= max_steps || o.done {
            return Ok(EvalResult {
                reward,
                laps: o.info.lap,
                steps,
                offroad: o.info.offroad,
            });
        }
        obs = o.obs;
    }
}

/// One fine-tuning lap attempt: ends at a start-line crossing or when the
/// car leaves the road.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapRow {
    pub lap: usize,
    pub reward: f64,
    pub steps: usize,
    pub completed: bool,
    pub offroad: bool,
    pub anchor_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneLog {
    pub laps: Vec<LapRow>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Trajectory rows; `lap` is the 1-based lap-attempt index.
    pub trajectory: Vec<TrajectoryRow>,
    pub total_steps: usize,
}

/// Online RTRRL for `laps` lap attempts. Leaving the road ends the attempt
/// and restarts the car at the start line with a fresh episode.
pub fn finetune(
    agent: &mut RtrrlAgent,
    env: &mut DrivingEnv,
    laps: usize,
    max_steps: usize,
    record_diagnostics: bool,
) -> Result<FinetuneLog, HarnessError> {
    let mut log = FinetuneLog::default();
    let mut obs = env.reset();
    agent.begin_episode(&obs)?;
    let (mut lap_reward, mut lap_steps) = (0.0, 0usize);
    while log.laps.len() < laps && log.total_steps < max_steps {
        let action = agent.state().action.clone();
        let o = env.step(&action)?;
        let completed = o.lap_completed.is_some();
        let end_attempt = completed || o.info.offroad || o.done;
        // Only leaving the road is terminal; hitting a cap bootstraps.
        let res = agent.step(&o.obs, o.reward, o.info.offroad);
        let res = match res {
            Ok(r) => r,
            Err(e) => {
                return Err(HarnessError::Learning {
                    step: log.total_steps,
                    reason: e.to_string(),
                    partial: Box::new(log),
                })
            }
        };
        lap_reward += o.reward;
        lap_steps += 1;
        log.total_steps += 1;
        log.trajectory.push(TrajectoryRow::from_state(
            log.total_steps,
            env.state(),
            o.reward,
            log.laps.len() + 1,
        ));
        if record_diagnostics {
            log.diagnostics.push(res.diagnostics);
        }
        if end_attempt {
            log.laps.push(LapRow {
                lap: log.laps.len() + 1,
                reward: lap_reward,
                steps: lap_steps,
                completed,
                offroad: o.info.offroad,
                anchor_distance: agent.anchor_distance(),
            });
            lap_reward = 0.0;
            lap_steps = 0;
        }
        if o.done {
            obs = env.reset();
            agent.begin_episode(&obs)?;
        }
    }
    Ok(log)
}
