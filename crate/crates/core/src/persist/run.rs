use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PersistError;
use crate::agent::Hyperparams;
use crate::bc::BcConfig;
use crate::cells::{CellKind, CellSpec};
use crate::env::{EnvConfig, ExpertParams, ShiftConfig, TrackConfig};

pub const RUN_EXTENSION: &str = "run";

/// Recurrent policy shape shared by every cell of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder output width, which is also the cell input width.
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Cell integration step per environment step (dimensionless).
    pub cell_dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden_dim: 16,
            cell_dt: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, kind: CellKind) -> CellSpec {
        CellSpec {
            kind,
            input_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            dt: self.cell_dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub episodes: usize,
    pub steps: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 3,
            steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Lap attempts per cell.
    pub laps: usize,
    /// Hard cap on environment steps per cell.
    pub max_steps: usize,
    /// Write the per-step diagnostics CSV.
    pub diagnostics: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            laps: 10,
            max_steps: 20_000,
            diagnostics: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub laps: usize,
    pub max_steps: usize,
    /// Number of evaluation tracks, all different from the training track.
    pub tracks: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            laps: 3,
            max_steps: 3000,
            tracks: 3,
        }
    }
}

/// Everything a pipeline run depends on. Serialized as TOML (`.run`).
///
/// `bc.seed` is ignored by the harness: every cell derives its own seed
/// from `master_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub kinds: Vec<CellKind>,
    pub seeds_per_kind: usize,
    /// Worker threads for per-cell phases; 0 uses the available cores.
    pub workers: usize,
    pub model: ModelConfig,
    pub track: TrackConfig,
    pub env: EnvConfig,
    pub expert: ExpertParams,
    pub collect: CollectConfig,
    pub bc: BcConfig,
    pub hyper: Hyperparams,
    /// Perturbation applied during fine-tuning and shifted evaluation.
    pub shift: ShiftConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            kinds: CellKind::ALL.to_vec(),
            seeds_per_kind: 5,
            workers: 0,
            model: ModelConfig::default(),
            track: TrackConfig::default(),
            env: EnvConfig::default(),
            expert: ExpertParams {
                noise_std: 0.05,
                accel_noise_std: 0.5,
                ..ExpertParams::default()
            },
            collect: CollectConfig::default(),
            bc: BcConfig::default(),
            hyper: Hyperparams::default(),
            shift: ShiftConfig {
                sensor_bias: 0.75,
                ..ShiftConfig::identity()
            },
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PersistError> {
        let bad = |m: String| Err(PersistError::Config(m));
        if self.kinds.is_empty() {
            return bad("at least one model kind is required".into());
        }
        if self.kinds.iter().collect::<BTreeSet<_>>().len() != self.kinds.len() {
            return bad("model kinds must be unique".into());
        }
        if self.seeds_per_kind == 0 {
            return bad("seeds_per_kind must be positive".into());
        }
        for kind in &self.kinds {
            self.model
                .spec(*kind)
                .validate()
                .map_err(|e| PersistError::Config(e.to_string()))?;
        }
        self.track
            .validate()
            .map_err(|e| PersistError::Config(e.to_string()))?;
        self.env
            .validate()
            .map_err(|e| PersistError::Config(e.to_string()))?;
        self.bc
            .validate()
            .map_err(|e| PersistError::Config(e.to_string()))?;
        self.hyper
            .validate()
            .map_err(|e| PersistError::Config(e.to_string()))?;
        self.shift.validate().map_err(PersistError::Config)?;
        let e = &self.expert;
        if !(e.command_limit > 0.0 && e.command_limit <= 1.0) {
            return bad("expert.command_limit must lie in (0, 1]".into());
        }
        if !(e.noise_std >= 0.0 && e.accel_noise_std >= 0.0 && (0.0..1.0).contains(&e.noise_rho)) {
            return bad("expert noise must be non-negative with noise_rho in [0, 1)".into());
        }
        if self.collect.episodes == 0 || self.collect.steps == 0 {
            return bad("collect.episodes and collect.steps must be positive".into());
        }
        if self.finetune.laps == 0 || self.finetune.max_steps == 0 {
            return bad("finetune.laps and finetune.max_steps must be positive".into());
        }
        if self.eval.laps == 0 || self.eval.max_steps == 0 || self.eval.tracks == 0 {
            return bad("eval.laps, eval.max_steps and eval.tracks must be positive".into());
        }
        Ok(())
    }

    /// Parses and validates; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, PersistError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| PersistError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PersistError> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }
}
