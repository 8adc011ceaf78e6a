use serde::{Deserialize, Serialize};

use super::track::{Point, TrackMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Progress per newly reached keypoint minus a scaled distance to the
    /// nearest keypoint.
    CenterPenalty,
    /// Bounded hinge on line distance, heading difference and steering rate.
    LineFollow,
}

/// One line-following error channel: contributes
/// `weight · max(0, 1 − max(0, |e| − slack) / norm)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modality {
    pub weight: f64,
    pub slack: f64,
    pub norm: f64,
}

impl Modality {
    pub fn value(&self, error: f64) -> f64 {
        self.weight * (1.0 - (error.abs() - self.slack).max(0.0) / self.norm).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineFollowConfig {
    /// Distance to the centerline, meters.
    pub distance: Modality,
    /// Heading difference, radians.
    pub heading: Modality,
    /// Steering rate, rad/s.
    pub steering_rate: Modality,
}

impl Default for LineFollowConfig {
    fn default() -> Self {
        Self {
            distance: Modality {
                weight: 1.0,
                slack: 0.25,
                norm: 2.0,
            },
            heading: Modality {
                weight: 0.5,
                slack: 0.05,
                norm: 0.5,
            },
            steering_rate: Modality {
                weight: 0.25,
                slack: 0.2,
                norm: 2.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub center_penalty_scale: f64,
    pub progress_reward_per_keypoint: f64,
    /// Subtracted once on off-road termination.
    pub offroad_penalty: f64,
    pub line: LineFollowConfig,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::CenterPenalty,
            center_penalty_scale: 0.2,
            progress_reward_per_keypoint: 1.0,
            offroad_penalty: 10.0,
            line: LineFollowConfig::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let l = &self.line;
        let nonneg = [
            self.center_penalty_scale,
            self.progress_reward_per_keypoint,
            self.offroad_penalty,
            l.distance.weight,
            l.distance.slack,
            l.heading.weight,
            l.heading.slack,
            l.steering_rate.weight,
            l.steering_rate.slack,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("reward weights, scales and slacks must be finite and non-negative".into());
        }
        if [l.distance.norm, l.heading.norm, l.steering_rate.norm]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err("line-follow norms must be positive".into());
        }
        Ok(())
    }

    pub fn max_line_reward(&self) -> f64 {
        self.line.distance.weight + self.line.heading.weight + self.line.steering_rate.weight
    }
}

/// `−scale · min_k ‖p − keypoint_k‖₂`.
pub fn center_distance_penalty(p: Point, track: &TrackMap, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    -scale * track.nearest_keypoint(p).1
}

pub fn line_follow_reward(
    distance: f64,
    heading_error: f64,
    steering_rate: f64,
    cfg: &LineFollowConfig,
) -> f64 {
    cfg.distance.value(distance)
        + cfg.heading.value(heading_error)
        + cfg.steering_rate.value(steering_rate)
}
