use serde::{Deserialize, Serialize};

use super::track::{wrap_angle, Point};

/// Kinematic bicycle parameters (SI units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarParams {
    pub wheelbase: f64,
    /// Steering angle bound `δ_max`; also the steering action bound.
    pub max_steer: f64,
    /// Steering slew limit in rad/s.
    pub max_steer_rate: f64,
    /// Acceleration action bound.
    pub max_accel: f64,
    pub v_max: f64,
    /// Linear drag coefficient in 1/s.
    pub drag: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            max_steer: 0.5,
            max_steer_rate: 2.0,
            max_accel: 4.0,
            v_max: 12.0,
            drag: 0.05,
        }
    }
}

impl CarParams {
    /// Per-dimension bounds of `[steer_cmd, accel_cmd]`.
    pub fn action_scale(&self) -> Vec<f64> {
        vec![self.max_steer, self.max_accel]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: Point,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    pub prev_steer: f64,
}

impl CarState {
    pub fn at_rest(position: Point, heading: f64) -> Self {
        Self {
            position,
            heading,
            speed: 0.0,
            steer: 0.0,
            prev_steer: 0.0,
        }
    }
}

/// Advances the car by `dt`. The steering angle slews toward the command,
/// speed follows `a − drag·v` clamped to `[0, v_max]`, and the pose moves
/// along the exact arc of curvature `gain·tan δ / L`.
pub fn car_step(
    state: &CarState,
    p: &CarParams,
    action: &[f64],
    dt: f64,
    steering_gain: f64,
    drag_multiplier: f64,
) -> CarState {
    let target = action[0].clamp(-p.max_steer, p.max_steer);
    let max_delta = p.max_steer_rate * dt;
    let steer = (state.steer + (target - state.steer).clamp(-max_delta, max_delta))
        .clamp(-p.max_steer, p.max_steer);
    let accel = action[1].clamp(-p.max_accel, p.max_accel);
    let speed =
        (state.speed + (accel - p.drag * drag_multiplier * state.speed) * dt).clamp(0.0, p.v_max);
    let kappa = steering_gain * steer.tan() / p.wheelbase;
    let dtheta = speed * kappa * dt;
    let th = state.heading;
    let position = if dtheta.abs() < 1e-12 {
        [
            state.position[0] + speed * dt * th.cos(),
            state.position[1] + speed * dt * th.sin(),
        ]
    } else {
        let r = 1.0 / kappa;
        [
            state.position[0] + r * ((th + dtheta).sin() - th.sin()),
            state.position[1] - r * ((th + dtheta).cos() - th.cos()),
        ]
    };
    CarState {
        position,
        heading: wrap_angle(th + dtheta),
        speed,
        steer,
        prev_steer: state.steer,
    }
}
