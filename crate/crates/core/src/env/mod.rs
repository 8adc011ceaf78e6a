//! Closed-loop 2D driving simulator: random tracks, a kinematic bicycle,
//! both reward families, distribution-shift injection, lap segmentation and
//! a scripted expert.

mod car;
mod expert;
mod laps;
mod obs;
mod reward;
mod shift;
mod track;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use car::{car_step, CarParams, CarState};
pub use expert::{Expert, ExpertError, ExpertParams};
pub use laps::{LapRecord, LapSegmenter};
pub use obs::{observe, ObsMode, ObservationSpec};
pub use reward::{
    center_distance_penalty, line_follow_reward, LineFollowConfig, Modality, RewardConfig,
    RewardMode,
};
pub use shift::ShiftConfig;
pub use track::{
    make_track, wrap_angle, Point, Projection, TrackConfig, TrackError, TrackMap, MIN_KEYPOINTS,
};

/// Segments searched around the previous projection each step.
const PROJECTION_WINDOW: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("action has {got} components, expected 2")]
    ActionDim { got: usize },
    #[error("non-finite action")]
    NonFiniteAction,
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub car: CarParams,
    pub obs: ObservationSpec,
    pub reward: RewardConfig,
    pub dt: f64,
    /// Episode ends (truncated) after this many completed laps.
    pub max_laps: usize,
    /// Episode ends (truncated) after this many steps.
    pub max_episode_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            car: CarParams::default(),
            obs: ObservationSpec::default(),
            reward: RewardConfig::default(),
            dt: 0.1,
            max_laps: 10,
            max_episode_steps: 5000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let c = &self.car;
        let pos = [
            c.wheelbase,
            c.max_steer,
            c.max_steer_rate,
            c.max_accel,
            c.v_max,
            self.dt,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(c.drag >= 0.0) {
            return Err(EnvError::Config(
                "car parameters and dt must be positive".into(),
            ));
        }
        if c.max_steer >= std::f64::consts::FRAC_PI_2 {
            return Err(EnvError::Config("max_steer must be below pi/2".into()));
        }
        self.reward.validate().map_err(EnvError::Config)?;
        if self.obs.dim() == 0 {
            return Err(EnvError::Config("observation has zero dimension".into()));
        }
        if self.max_laps == 0 || self.max_episode_steps == 0 {
            return Err(EnvError::Config(
                "max_laps and max_episode_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn action_scale(&self) -> Vec<f64> {
        self.car.action_scale()
    }
}

/// Per-step side information.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepInfo {
    pub lateral: f64,
    /// Completed laps so far.
    pub lap: usize,
    /// Segment the car is on.
    pub keypoint: usize,
    pub offroad: bool,
    /// Ended by the lap or step cap rather than by leaving the road.
    pub truncated: bool,
    /// Arc length travelled forward from the start, unwrapped.
    pub progress: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
    pub lap_completed: Option<LapRecord>,
}

#[derive(Clone, Debug)]
pub struct DrivingEnv {
    base_track: TrackMap,
    track: TrackMap,
    cfg: EnvConfig,
    shift: ShiftConfig,
    state: CarState,
    proj: Projection,
    offsets: Vec<f64>,
    s_unwrapped: f64,
    s_max: f64,
    laps: LapSegmenter,
    steps: usize,
}

impl DrivingEnv {
    pub fn new(track: TrackMap, cfg: EnvConfig, shift: ShiftConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        shift.validate().map_err(EnvError::Config)?;
        let driven = if shift.mirror {
            track.mirrored()
        } else {
            track.clone()
        };
        let mut offsets: Vec<f64> = (0..driven.len())
            .map(|j| driven.s_from_start(driven.keypoint_s(j)))
            .collect();
        offsets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (p, h) = driven.start_pose();
        let state = CarState::at_rest(p, h);
        let proj = driven.project(p, None, PROJECTION_WINDOW);
        let laps = LapSegmenter::new(&driven);
        let mut env = Self {
            base_track: track,
            track: driven,
            cfg,
            shift,
            state,
            proj,
            offsets,
            s_unwrapped: 0.0,
            s_max: 0.0,
            laps,
            steps: 0,
        };
        env.reset();
        Ok(env)
    }

    /// Same base track and config under a different shift.
    pub fn with_shift(&self, shift: ShiftConfig) -> Result<Self, EnvError> {
        Self::new(self.base_track.clone(), self.cfg.clone(), shift)
    }

    pub fn track(&self) -> &TrackMap {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn shift(&self) -> &ShiftConfig {
        &self.shift
    }

    pub fn state(&self) -> &CarState {
        &self.state
    }

    pub fn laps(&self) -> &LapSegmenter {
        &self.laps
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs.dim()
    }

    pub fn action_scale(&self) -> Vec<f64> {
        self.cfg.action_scale()
    }

    /// Car at rest on the start keypoint; returns the first observation.
    pub fn reset(&mut self) -> Vec<f64> {
        let (p, h) = self.track.start_pose();
        self.state = CarState::at_rest(p, h);
        self.proj = self.track.project(p, None, PROJECTION_WINDOW);
        self.s_unwrapped = 0.0;
        self.s_max = 0.0;
        self.laps = LapSegmenter::new(&self.track);
        self.laps.push(p, 0.0);
        self.steps = 0;
        self.observation()
    }

    /// Starts from an arbitrary car state (used to probe recovery).
    pub fn reset_to(&mut self, state: CarState) -> Vec<f64> {
        self.reset();
        self.state = state;
        self.proj = self.track.project(state.position, None, PROJECTION_WINDOW);
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        observe(
            &self.cfg.obs,
            &self.track,
            &self.state,
            &self.cfg.car,
            &self.proj,
            self.shift.sensor_bias,
        )
    }

    fn keypoints_passed(&self, s: f64) -> f64 {
        let len = self.track.length();
        let full = (s / len).floor();
        let rem = s - full * len;
        let within = self.offsets.partition_point(|&o| o <= rem);
        full * self.offsets.len() as f64 + within as f64
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if action.len() != 2 {
            return Err(EnvError::ActionDim { got: action.len() });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        let dt = self.cfg.dt;
        self.state = car_step(
            &self.state,
            &self.cfg.car,
            action,
            dt,
            self.shift.steering_gain,
            self.shift.drag_multiplier,
        );
        let prev_s = self.proj.s;
        self.proj = self.track.project(
            self.state.position,
            Some(self.proj.segment),
            PROJECTION_WINDOW,
        );
        let len = self.track.length();
        let mut ds = (self.proj.s - prev_s).rem_euclid(len);
        if ds > 0.5 * len {
            ds -= len;
        }
        self.s_unwrapped += ds;
        let offroad = self.proj.lateral.abs() > 2.0 * self.track.half_width();

        let rc = &self.cfg.reward;
        let mut reward = match rc.mode {
            RewardMode::CenterPenalty => {
                let mut r = center_distance_penalty(
                    self.state.position,
                    &self.track,
                    rc.center_penalty_scale,
                );
                if self.s_unwrapped > self.s_max {
                    let new =
                        self.keypoints_passed(self.s_unwrapped) - self.keypoints_passed(self.s_max);
                    r += rc.progress_reward_per_keypoint * new;
                    self.s_max = self.s_unwrapped;
                }
                r
            }
            RewardMode::LineFollow => {
                let heading_err = wrap_angle(self.state.heading - self.proj.heading);
                let rate = (self.state.steer - self.state.prev_steer) / dt;
                line_follow_reward(self.proj.lateral.abs(), heading_err, rate, &rc.line)
            }
        };
        if offroad {
            reward -= rc.offroad_penalty;
        }
        self.steps += 1;
        let lap_completed = self.laps.push(self.state.position, reward);
        let capped =
            self.laps.completed() >= self.cfg.max_laps || self.steps >= self.cfg.max_episode_steps;
        let info = StepInfo {
            lateral: self.proj.lateral,
            lap: self.laps.completed(),
            keypoint: self.proj.segment,
            offroad,
            truncated: capped && !offroad,
            progress: self.s_unwrapped,
        };
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: offroad || capped,
            info,
            lap_completed,
        })
    }
}

/// One row of a trajectory log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub steer: f64,
    pub reward: f64,
    pub lap: usize,
}

impl TrajectoryRow {
    pub fn from_state(t: usize, state: &CarState, reward: f64, lap: usize) -> Self {
        Self {
            t,
            x: state.position[0],
            y: state.position[1],
            heading: state.heading,
            steer: state.steer,
            reward,
            lap,
        }
    }
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,heading,steer,reward,lap";

/// CSV with [`TRAJECTORY_HEADER`]; floats use Rust's shortest round-trip
/// formatting.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.t, r.x, r.y, r.heading, r.steer, r.reward, r.lap
        )?;
    }
    Ok(())
}
