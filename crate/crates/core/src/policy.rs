//! The pretrained recurrent policy handed from behavioral cloning to
//! fine-tuning.

use serde::{Deserialize, Serialize};

use crate::bc::Autoencoder;
use crate::cells::{CellError, CellParams, CellSpec, HiddenState};
use crate::heads::{ActionDistribution, ActorHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainedPolicy {
    /// Encoder and decoder; only the encoder is used when acting.
    pub autoencoder: Autoencoder,
    pub cell: CellParams,
    pub dt: f64,
    pub head: ActorHead,
}

impl PretrainedPolicy {
    pub fn spec(&self) -> CellSpec {
        CellSpec {
            kind: self.cell.kind(),
            input_dim: self.cell.input_dim(),
            hidden_dim: self.cell.hidden_dim(),
            dt: self.dt,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.autoencoder.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.head.action_dim()
    }

    /// Checks that encoder, cell and head agree on their shared dimensions.
    pub fn validate(&self) -> Result<(), CellError> {
        self.cell.validate()?;
        if self.autoencoder.latent_dim() != self.cell.input_dim() {
            return Err(CellError::DimensionMismatch {
                what: "encoder latent vs cell input",
                expected: self.cell.input_dim(),
                got: self.autoencoder.latent_dim(),
            });
        }
        if self.head.feature_dim() != self.cell.feature_dim() {
            return Err(CellError::DimensionMismatch {
                what: "head features",
                expected: self.cell.feature_dim(),
                got: self.head.feature_dim(),
            });
        }
        Ok(())
    }

    /// Stateless-parameter rollout helper: advances `h` on `obs` and returns
    /// the action distribution.
    pub fn act(&self, h: &mut HiddenState, obs: &[f64]) -> Result<ActionDistribution, CellError> {
        let x = self.autoencoder.encode(obs);
        *h = self.cell.step(h, &x, self.dt)?;
        let y = self.cell.features(h, &x);
        Ok(self.head.forward(&y))
    }
}

/// Runs a fixed policy with its own hidden state.
#[derive(Clone, Debug)]
pub struct PolicyRunner<'a> {
    policy: &'a PretrainedPolicy,
    h: HiddenState,
}

impl<'a> PolicyRunner<'a> {
    pub fn new(policy: &'a PretrainedPolicy) -> Self {
        Self {
            policy,
            h: HiddenState::zeros(policy.cell.kind(), policy.cell.hidden_dim()),
        }
    }

    pub fn reset(&mut self) {
        self.h.fill_zero();
    }

    pub fn distribution(&mut self, obs: &[f64]) -> Result<ActionDistribution, CellError> {
        self.policy.act(&mut self.h, obs)
    }

    pub fn mode_action(&mut self, obs: &[f64]) -> Result<Vec<f64>, CellError> {
        Ok(self.distribution(obs)?.mode())
    }
}
