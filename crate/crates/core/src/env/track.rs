use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("track needs at least {min} keypoints, got {got}")]
    TooFewKeypoints { min: usize, got: usize },
    #[error("invalid track: {0}")]
    Invalid(String),
    #[error("no valid track after {attempts} attempts")]
    GenerationFailed { attempts: usize },
}

pub const MIN_KEYPOINTS: usize = 12;

/// Random closed-loop track generation parameters (meters, radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    pub control_points: usize,
    /// Mean distance of control points from the origin.
    pub radius: f64,
    /// Relative radial jitter of control points.
    pub radius_jitter: f64,
    /// Angular jitter as a fraction of the sector each control point owns.
    pub angle_jitter: f64,
    pub half_width: f64,
    /// Arc-length distance between consecutive keypoints.
    pub keypoint_spacing: f64,
    /// Smallest allowed radius of curvature of the centerline.
    pub min_turn_radius: f64,
    pub max_attempts: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            control_points: 12,
            radius: 40.0,
            radius_jitter: 0.2,
            angle_jitter: 0.2,
            half_width: 4.0,
            keypoint_spacing: 2.0,
            min_turn_radius: 8.0,
            max_attempts: 100,
        }
    }
}

impl TrackConfig {
    /// Every keypoint lies in `[−e, e]²` for the returned `e`.
    pub fn bounding_half_extent(&self) -> f64 {
        1.25 * self.radius * (1.0 + self.radius_jitter)
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::Invalid(m.to_string()));
        if self.control_points < 4 {
            return bad("control_points must be at least 4");
        }
        if !(self.radius > 0.0 && self.half_width > 0.0 && self.keypoint_spacing > 0.0) {
            return bad("radius, half_width and keypoint_spacing must be positive");
        }
        if !(0.0..0.9).contains(&self.radius_jitter) || !(0.0..0.5).contains(&self.angle_jitter) {
            return bad("radius_jitter must lie in [0, 0.9) and angle_jitter in [0, 0.5)");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        Ok(())
    }
}

/// Closest point of the centerline to a query position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Segment from keypoint `segment` to `segment + 1`.
    pub segment: usize,
    /// Fraction along the segment.
    pub t: f64,
    /// Signed distance to the centerline, positive to the left of travel.
    pub lateral: f64,
    /// Arc-length position of the closest point.
    pub s: f64,
    /// Direction of travel at the closest point.
    pub heading: f64,
}

/// Closed centerline polyline with a constant half width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMap {
    keypoints: Vec<Point>,
    half_width: f64,
    start_index: usize,
    /// `cum[i]` is the arc length from keypoint 0 to keypoint `i`; the last
    /// entry is the loop length.
    cum: Vec<f64>,
    /// Signed curvature at each keypoint.
    curvature: Vec<f64>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(p2, p1), sub(q1, p1));
    let d2 = cross(sub(p2, p1), sub(q2, p1));
    let d3 = cross(sub(q2, q1), sub(p1, q1));
    let d4 = cross(sub(q2, q1), sub(p2, q1));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

impl TrackMap {
    pub fn new(
        keypoints: Vec<Point>,
        half_width: f64,
        start_index: usize,
    ) -> Result<Self, TrackError> {
        let n = keypoints.len();
        if n < MIN_KEYPOINTS {
            return Err(TrackError::TooFewKeypoints {
                min: MIN_KEYPOINTS,
                got: n,
            });
        }
        if !(half_width > 0.0) || start_index >= n {
            return Err(TrackError::Invalid(
                "half_width must be positive and start_index in range".into(),
            ));
        }
        if keypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TrackError::Invalid("non-finite keypoint".into()));
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let d = dist(keypoints[i], keypoints[(i + 1) % n]);
            if d <= 0.0 {
                return Err(TrackError::Invalid(format!("duplicate keypoint at {i}")));
            }
            cum.push(cum[i] + d);
        }
        let curvature = (0..n)
            .map(|i| {
                let prev = keypoints[(i + n - 1) % n];
                let next = keypoints[(i + 1) % n];
                let a = sub(keypoints[i], prev);
                let b = sub(next, keypoints[i]);
                let turn = wrap_angle(b[1].atan2(b[0]) - a[1].atan2(a[0]));
                turn / (0.5 * (dist(prev, keypoints[i]) + dist(keypoints[i], next)))
            })
            .collect();
        Ok(Self {
            keypoints,
            half_width,
            start_index,
            cum,
            curvature,
        })
    }

    /// Circle of `n` keypoints traversed counter-clockwise.
    pub fn circle(radius: f64, n: usize, half_width: f64) -> Result<Self, TrackError> {
        let kp = (0..n)
            .map(|k| 2.0 * PI * k as f64 / n as f64)
            .map(|a| [radius * a.cos(), radius * a.sin()])
            .collect();
        Self::new(kp, half_width, 0)
    }

    /// Two straights of length `straight` joined by half circles, keypoints
    /// `spacing` apart, starting at the beginning of the lower straight.
    pub fn stadium(
        straight: f64,
        radius: f64,
        spacing: f64,
        half_width: f64,
    ) -> Result<Self, TrackError> {
        let mut pts = Vec::new();
        let ns = (straight / spacing).round().max(1.0) as usize;
        let nc = (PI * radius / spacing).round().max(2.0) as usize;
        for k in 0..ns {
            pts.push([k as f64 * straight / ns as f64, -radius]);
        }
        for k in 0..nc {
            let a = -PI / 2.0 + PI * k as f64 / nc as f64;
            pts.push([straight + radius * a.cos(), radius * a.sin()]);
        }
        for k in 0..ns {
            pts.push([straight - k as f64 * straight / ns as f64, radius]);
        }
        for k in 0..nc {
            let a = PI / 2.0 + PI * k as f64 / nc as f64;
            pts.push([radius * a.cos(), radius * a.sin()]);
        }
        Self::new(pts, half_width, 0)
    }

    pub fn keypoints(&self) -> &[Point] {
        &self.keypoints
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn length(&self) -> f64 {
        self.cum[self.keypoints.len()]
    }

    /// Arc-length position of keypoint `i`.
    pub fn keypoint_s(&self, i: usize) -> f64 {
        self.cum[i]
    }

    /// Arc position measured from the start keypoint, in `[0, length)`.
    pub fn s_from_start(&self, s: f64) -> f64 {
        (s - self.cum[self.start_index]).rem_euclid(self.length())
    }

    pub fn start_pose(&self) -> (Point, f64) {
        let p = self.point_at(self.cum[self.start_index]);
        (p, self.heading_at(self.cum[self.start_index]))
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(self.length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
        .min(self.keypoints.len() - 1);
        let seg = self.cum[i + 1] - self.cum[i];
        (i, (s - self.cum[i]) / seg)
    }

    pub fn point_at(&self, s: f64) -> Point {
        let (i, t) = self.locate(s);
        let a = self.keypoints[i];
        let b = self.keypoints[(i + 1) % self.keypoints.len()];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.locate(s);
        let d = sub(
            self.keypoints[(i + 1) % self.keypoints.len()],
            self.keypoints[i],
        );
        d[1].atan2(d[0])
    }

    /// Signed curvature, linearly interpolated between keypoints.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let n = self.keypoints.len();
        (1.0 - t) * self.curvature[i] + t * self.curvature[(i + 1) % n]
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.curvature.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn project_segment(&self, p: Point, i: usize) -> (f64, Projection) {
        let n = self.keypoints.len();
        let a = self.keypoints[i];
        let d = sub(self.keypoints[(i + 1) % n], a);
        let len2 = d[0] * d[0] + d[1] * d[1];
        let ap = sub(p, a);
        let t = ((ap[0] * d[0] + ap[1] * d[1]) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        let dd = dist(p, q);
        let side = cross(d, ap);
        let lateral = if side >= 0.0 { dd } else { -dd };
        let proj = Projection {
            segment: i,
            t,
            lateral,
            s: self.cum[i] + t * len2.sqrt(),
            heading: d[1].atan2(d[0]),
        };
        (dd, proj)
    }

    /// Closest centerline point. With a `hint` segment only segments within
    /// `window` of it are searched.
    pub fn project(&self, p: Point, hint: Option<usize>, window: usize) -> Projection {
        let n = self.keypoints.len();
        let mut best: Option<(f64, Projection)> = None;
        let mut consider = |i: usize| {
            let c = self.project_segment(p, i);
            if best.as_ref().is_none_or(|b| c.0 < b.0) {
                best = Some(c);
            }
        };
        match hint {
            Some(h) if 2 * window + 1 < n => {
                for k in 0..=2 * window {
                    consider((h + n + k - window) % n);
                }
            }
            _ => (0..n).for_each(&mut consider),
        }
        best.expect("track has segments").1
    }

    /// Exhaustive nearest keypoint `(index, distance)`.
    pub fn nearest_keypoint(&self, p: Point) -> (usize, f64) {
        self.keypoints
            .iter()
            .enumerate()
            .map(|(i, &k)| (i, dist(p, k)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
    }

    /// Reflection across the x-axis; keypoint order (direction of travel)
    /// is kept.
    pub fn mirrored(&self) -> TrackMap {
        let kp = self.keypoints.iter().map(|p| [p[0], -p[1]]).collect();
        TrackMap::new(kp, self.half_width, self.start_index).expect("reflection preserves validity")
    }

    /// True when no two non-adjacent centerline segments cross.
    pub fn is_simple(&self) -> bool {
        let n = self.keypoints.len();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (self.keypoints[i], self.keypoints[(i + 1) % n]);
                let (c, d) = (self.keypoints[j], self.keypoints[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest distance between keypoints whose arc separation exceeds
    /// `min_arc`.
    pub fn min_clearance(&self, min_arc: f64) -> f64 {
        let n = self.keypoints.len();
        let len = self.length();
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let sep = (self.cum[j] - self.cum[i]).min(len - (self.cum[j] - self.cum[i]));
                if sep > min_arc {
                    m = m.min(dist(self.keypoints[i], self.keypoints[j]));
                }
            }
        }
        m
    }

    /// Plain-text point list: a header line, then `x y` per keypoint.
    pub fn export_points(&self) -> String {
        let mut out = format!(
            "# keypoints {} half_width {} start {}\n",
            self.len(),
            self.half_width,
            self.start_index
        );
        for p in &self.keypoints {
            out.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        out
    }

    /// Inverse of [`Self::export_points`].
    pub fn parse_points(text: &str) -> Result<Self, TrackError> {
        let bad = |m: &str| TrackError::Invalid(format!("track file: {m}"));
        let mut lines = text.lines();
        let head: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .collect();
        if head.len() != 7
            || head[0] != "#"
            || head[1] != "keypoints"
            || head[3] != "half_width"
            || head[5] != "start"
        {
            return Err(bad("malformed header"));
        }
        let count: usize = head[2].parse().map_err(|_| bad("keypoint count"))?;
        let hw: f64 = head[4].parse().map_err(|_| bad("half width"))?;
        let start: usize = head[6].parse().map_err(|_| bad("start index"))?;
        let mut pts = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad("point"))?;
            if v.len() != 2 {
                return Err(bad("point"));
            }
            pts.push([v[0], v[1]]);
        }
        if pts.len() != count {
            return Err(bad("keypoint count does not match header"));
        }
        Self::new(pts, hw, start)
    }
}

/// Uniform Catmull-Rom spline through closed control points.
fn catmull_rom_closed(ctrl: &[Point], per_segment: usize) -> Vec<Point> {
    let n = ctrl.len();
    let mut out = Vec::with_capacity(n * per_segment);
    for i in 0..n {
        let p0 = ctrl[(i + n - 1) % n];
        let p1 = ctrl[i];
        let p2 = ctrl[(i + 1) % n];
        let p3 = ctrl[(i + 2) % n];
        for k in 0..per_segment {
            let t = k as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let c = |d: usize| {
                0.5 * (2.0 * p1[d]
                    + (-p0[d] + p2[d]) * t
                    + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * t2
                    + (-p0[d] + 3.0 * p1[d] - 3.0 * p2[d] + p3[d]) * t3)
            };
            out.push([c(0), c(1)]);
        }
    }
    out
}

/// Resamples a closed polyline at equal arc-length steps close to
/// `spacing`.
fn resample_closed(pts: &[Point], spacing: f64) -> Vec<Point> {
    let n = pts.len();
    let mut cum = vec![0.0];
    for i in 0..n {
        cum.push(cum[i] + dist(pts[i], pts[(i + 1) % n]));
    }
    let total = cum[n];
    let m = (total / spacing).round().max(MIN_KEYPOINTS as f64) as usize;
    let step = total / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    for k in 0..m {
        let s = k as f64 * step;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let t = (s - cum[seg]) / (cum[seg + 1] - cum[seg]);
        let (a, b) = (pts[seg], pts[(seg + 1) % n]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Deterministic random closed track. Candidates that self-intersect, come
/// too close to themselves, turn tighter than `min_turn_radius` or leave the
/// bounding box are redrawn.
pub fn make_track(seed: u64, cfg: &TrackConfig) -> Result<TrackMap, TrackError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.control_points;
    let sector = 2.0 * PI / n as f64;
    let extent = cfg.bounding_half_extent();
    for _ in 0..cfg.max_attempts {
        let ctrl: Vec<Point> = (0..n)
            .map(|k| {
                let a =
                    sector * (k as f64 + rng.random_range(-cfg.angle_jitter..=cfg.angle_jitter));
                let r =
                    cfg.radius * (1.0 + rng.random_range(-cfg.radius_jitter..=cfg.radius_jitter));
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let kp = resample_closed(&catmull_rom_closed(&ctrl, 32), cfg.keypoint_spacing);
        let Ok(track) = TrackMap::new(kp, cfg.half_width, 0) else {
            continue;
        };
        let in_box = track
            .keypoints
            .iter()
            .all(|p| p[0].abs() <= extent && p[1].abs() <= extent);
        let gentle = track.max_abs_curvature() * cfg.min_turn_radius <= 1.0;
        let clear = track.min_clearance(2.0 * PI * cfg.half_width) >= 4.0 * cfg.half_width;
        if in_box && gentle && clear && track.is_simple() {
            return Ok(track);
        }
    }
    Err(TrackError::GenerationFailed {
        attempts: cfg.max_attempts,
    })
}
