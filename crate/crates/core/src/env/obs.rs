use serde::{Deserialize, Serialize};

use super::car::{CarParams, CarState};
use super::track::{wrap_angle, Projection, TrackMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    /// `[lateral, heading error, speed, steering, curvature samples…]`
    Features,
    /// Square occupancy grid of the track ahead, in the car frame.
    Raster,
}

impl ObsMode {
    pub fn name(self) -> &'static str {
        match self {
            ObsMode::Features => "features",
            ObsMode::Raster => "raster",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSpec {
    pub mode: ObsMode,
    /// Number of curvature samples ahead (features mode).
    pub curvature_samples: usize,
    /// Arc-length spacing of the curvature samples, meters.
    pub curvature_spacing: f64,
    /// Curvature samples are multiplied by this before being emitted.
    pub curvature_scale: f64,
    /// Raster side length in cells.
    pub raster_size: usize,
    /// Side length of the square covered by the raster, meters.
    pub raster_extent: f64,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self {
            mode: ObsMode::Features,
            curvature_samples: 5,
            curvature_spacing: 4.0,
            curvature_scale: 10.0,
            raster_size: 16,
            raster_extent: 24.0,
        }
    }
}

impl ObservationSpec {
    pub fn dim(&self) -> usize {
        match self.mode {
            ObsMode::Features => 4 + self.curvature_samples,
            ObsMode::Raster => self.raster_size * self.raster_size,
        }
    }
}

/// Builds the observation. `sensor_bias` is added to the normalized lateral
/// offset (features) or shifts the raster sideways by `bias · half_width`.
pub fn observe(
    spec: &ObservationSpec,
    track: &TrackMap,
    car: &CarState,
    params: &CarParams,
    proj: &Projection,
    sensor_bias: f64,
) -> Vec<f64> {
    match spec.mode {
        ObsMode::Features => {
            let mut o = Vec::with_capacity(spec.dim());
            o.push(proj.lateral / track.half_width() + sensor_bias);
            o.push(wrap_angle(car.heading - proj.heading));
            o.push(car.speed / params.v_max);
            o.push(car.steer / params.max_steer);
            for k in 1..=spec.curvature_samples {
                o.push(
                    spec.curvature_scale
                        * track.curvature_at(proj.s + k as f64 * spec.curvature_spacing),
                );
            }
            o
        }
        ObsMode::Raster => {
            let n = spec.raster_size;
            let cell = spec.raster_extent / n as f64;
            let (c, s) = (car.heading.cos(), car.heading.sin());
            let shift = sensor_bias * track.half_width();
            let window = (spec.raster_extent / track.keypoint_s(1).max(1e-9)).ceil() as usize + 2;
            let mut o = Vec::with_capacity(n * n);
            let mut hint = proj.segment;
            // Rows run forward from the car, columns from right to left.
            for r in 0..n {
                let fwd = (r as f64 + 0.5) * cell;
                for q in 0..n {
                    let left = (q as f64 + 0.5) * cell - 0.5 * spec.raster_extent - shift;
                    let p = [
                        car.position[0] + fwd * c - left * s,
                        car.position[1] + fwd * s + left * c,
                    ];
                    let pr = track.project(p, Some(hint), window);
                    hint = pr.segment;
                    o.push(if pr.lateral.abs() <= track.half_width() {
                        1.0
                    } else {
                        0.0
                    });
                }
                hint = proj.segment;
            }
            o
        }
    }
}
