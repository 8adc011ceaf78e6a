use serde::{Deserialize, Serialize};

/// Dataset-level description shared by every episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoMeta {
    /// Observation mode label, `features` or `raster`.
    pub obs_mode: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Per-dimension action bound `s`; actions lie in `(−s, s)`.
    pub action_scale: Vec<f64>,
    pub dt: f64,
    pub source: String,
}

/// One demonstration sequence. `observations[t]` is paired with the action
/// taken after seeing it.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DemoEpisode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Optional raw occupancy rasters, one per step.
    pub rasters: Option<Vec<Vec<f64>>>,
}

impl DemoEpisode {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Contiguous sub-sequence `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> DemoEpisode {
        DemoEpisode {
            observations: self.observations[start..end].to_vec(),
            actions: self.actions[start..end].to_vec(),
            rasters: self.rasters.as_ref().map(|r| r[start..end].to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub meta: DemoMeta,
    pub episodes: Vec<DemoEpisode>,
}

impl DemoDataset {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(DemoEpisode::len).sum()
    }

    /// Checks dimensional homogeneity. Returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let m = &self.meta;
        if m.action_scale.len() != m.action_dim {
            return Err(format!(
                "action_scale has {} entries for action_dim {}",
                m.action_scale.len(),
                m.action_dim
            ));
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            if ep.actions.len() != ep.observations.len() {
                return Err(format!(
                    "episode {i}: {} observations but {} actions",
                    ep.observations.len(),
                    ep.actions.len()
                ));
            }
            if let Some(r) = &ep.rasters {
                if r.len() != ep.len() {
                    return Err(format!(
                        "episode {i}: {} rasters for {} steps",
                        r.len(),
                        ep.len()
                    ));
                }
            }
            for (t, (o, a)) in ep.observations.iter().zip(&ep.actions).enumerate() {
                if o.len() != m.obs_dim {
                    return Err(format!(
                        "episode {i} step {t}: observation dim {} != {}",
                        o.len(),
                        m.obs_dim
                    ));
                }
                if a.len() != m.action_dim {
                    return Err(format!(
                        "episode {i} step {t}: action dim {} != {}",
                        a.len(),
                        m.action_dim
                    ));
                }
                if o.iter().chain(a).any(|v| !v.is_finite()) {
                    return Err(format!("episode {i} step {t}: non-finite value"));
                }
            }
        }
        Ok(())
    }
}
