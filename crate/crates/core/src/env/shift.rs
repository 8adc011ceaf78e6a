use serde::{Deserialize, Serialize};

/// Deployment-time perturbation of the simulator.
///
/// Ranges: `sensor_bias ∈ [−1, 1]` (in half widths), `steering_gain ∈
/// [0.2, 2]`, `drag_multiplier ∈ [0.25, 4]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    /// Added to the normalized lateral-offset channel.
    pub sensor_bias: f64,
    /// Multiplies the curvature produced by a steering angle.
    pub steering_gain: f64,
    /// Reflect the track across the x-axis.
    pub mirror: bool,
    pub drag_multiplier: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftConfig {
    pub fn identity() -> Self {
        Self {
            sensor_bias: 0.0,
            steering_gain: 1.0,
            mirror: false,
            drag_multiplier: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(-1.0..=1.0).contains(&self.sensor_bias) {
            return Err(format!("sensor_bias {} outside [-1, 1]", self.sensor_bias));
        }
        if !(0.2..=2.0).contains(&self.steering_gain) {
            return Err(format!(
                "steering_gain {} outside [0.2, 2]",
                self.steering_gain
            ));
        }
        if !(0.25..=4.0).contains(&self.drag_multiplier) {
            return Err(format!(
                "drag_multiplier {} outside [0.25, 4]",
                self.drag_multiplier
            ));
        }
        Ok(())
    }
}
