use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::car::{CarParams, CarState};
use super::track::TrackMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("car is {lateral:.2} m from the centerline, outside the corridor")]
    OutsideCorridor { lateral: f64 },
}

/// Scripted demonstrator: pure-pursuit steering, curvature-limited speed and
/// optional AR(1) noise on both
/// commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertParams {
    /// Lookahead distance is `lookahead_base + lookahead_gain · speed`.
    pub lookahead_base: f64,
    pub lookahead_gain: f64,
    pub target_speed: f64,
    pub min_speed: f64,
    /// Lateral acceleration budget used to slow down for curves.
    pub max_lateral_accel: f64,
    /// Arc length over which upcoming curvature is considered.
    pub speed_preview: f64,
    pub speed_gain: f64,
    /// Stationary standard deviation of the steering noise, radians.
    pub noise_std: f64,
    /// AR(1) coefficient of both noise processes.
    pub noise_rho: f64,
    /// Stationary standard deviation of the acceleration noise, m/s².
    pub accel_noise_std: f64,
    /// Commands are clamped to this fraction of the car's bounds.
    pub command_limit: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            lookahead_base: 4.0,
            lookahead_gain: 0.6,
            target_speed: 9.0,
            min_speed: 4.0,
            max_lateral_accel: 4.0,
            speed_preview: 20.0,
            speed_gain: 1.5,
            noise_std: 0.0,
            noise_rho: 0.9,
            accel_noise_std: 0.0,
            command_limit: 0.9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Expert {
    params: ExpertParams,
    noise: f64,
    accel_noise: f64,
    rng: ChaCha8Rng,
    hint: Option<usize>,
}

impl Expert {
    pub fn new(params: ExpertParams, seed: u64) -> Self {
        Self {
            params,
            noise: 0.0,
            accel_noise: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hint: None,
        }
    }

    pub fn params(&self) -> &ExpertParams {
        &self.params
    }

    pub fn reset(&mut self) {
        self.noise = 0.0;
        self.accel_noise = 0.0;
        self.hint = None;
    }

    /// `[steer_cmd, accel_cmd]` within `command_limit` of the car's bounds.
    pub fn act(
        &mut self,
        car: &CarState,
        track: &TrackMap,
        cp: &CarParams,
    ) -> Result<[f64; 2], ExpertError> {
        let p = &self.params;
        let proj = track.project(car.position, self.hint, 12);
        self.hint = Some(proj.segment);
        if proj.lateral.abs() > track.half_width() {
            return Err(ExpertError::OutsideCorridor {
                lateral: proj.lateral,
            });
        }
        let ld = p.lookahead_base + p.lookahead_gain * car.speed;
        let target = track.point_at(proj.s + ld);
        let (dx, dy) = (target[0] - car.position[0], target[1] - car.position[1]);
        let (c, s) = (car.heading.cos(), car.heading.sin());
        let (x, y) = (c * dx + s * dy, -s * dx + c * dy);
        let dist = x.hypot(y).max(1e-6);
        let alpha = y.atan2(x);
        let mut steer = (2.0 * cp.wheelbase * alpha.sin() / dist).atan();
        if p.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.noise = p.noise_rho * self.noise
                + (1.0 - p.noise_rho * p.noise_rho).sqrt() * p.noise_std * z;
            steer += self.noise;
        }
        let steps = (p.speed_preview / 2.0).ceil() as usize;
        let kmax = (0..=steps)
            .map(|k| track.curvature_at(proj.s + 2.0 * k as f64).abs())
            .fold(0.0, f64::max);
        let v_curve = if kmax > 0.0 {
            (p.max_lateral_accel / kmax).sqrt()
        } else {
            f64::INFINITY
        };
        let v_target = v_curve.clamp(p.min_speed, p.target_speed);
        let mut accel = p.speed_gain * (v_target - car.speed);
        if p.accel_noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let c = (1.0 - p.noise_rho * p.noise_rho).sqrt();
            self.accel_noise = p.noise_rho * self.accel_noise + c * p.accel_noise_std * z;
            accel += self.accel_noise;
        }
        let (ms, ma) = (
            p.command_limit * cp.max_steer,
            p.command_limit * cp.max_accel,
        );
        Ok([steer.clamp(-ms, ms), accel.clamp(-ma, ma)])
    }
}
