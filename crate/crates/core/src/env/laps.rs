use serde::{Deserialize, Serialize};

use super::track::{Point, TrackMap};

/// One completed lap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapRecord {
    /// 1-based lap number.
    pub lap: usize,
    /// Index of the first sample of the lap.
    pub start: usize,
    /// Index of the sample at which the start line was crossed.
    pub end: usize,
    pub reward: f64,
}

/// Streaming lap detector. A lap ends when the trajectory crosses the start
/// line (the normal to the track through the start keypoint, within two
/// half widths of the centerline) in the direction of travel. Backward
/// crossings are netted out so that wiggling over the line counts once.
#[derive(Clone, Debug, PartialEq)]
pub struct LapSegmenter {
    origin: Point,
    tangent: Point,
    reach: f64,
    prev: Option<Point>,
    net: i64,
    laps: Vec<LapRecord>,
    index: usize,
    lap_start: usize,
    acc: f64,
    total: f64,
}

impl LapSegmenter {
    pub fn new(track: &TrackMap) -> Self {
        let (origin, heading) = track.start_pose();
        Self {
            origin,
            tangent: [heading.cos(), heading.sin()],
            reach: 2.0 * track.half_width(),
            prev: None,
            net: 0,
            laps: Vec::new(),
            index: 0,
            lap_start: 0,
            acc: 0.0,
            total: 0.0,
        }
    }

    fn along(&self, p: Point) -> f64 {
        (p[0] - self.origin[0]) * self.tangent[0] + (p[1] - self.origin[1]) * self.tangent[1]
    }

    fn across(&self, p: Point) -> f64 {
        (-(p[0] - self.origin[0]) * self.tangent[1] + (p[1] - self.origin[1]) * self.tangent[0])
            .abs()
    }

    /// Adds the sample reached at `position` together with the reward earned
    /// on the way there. Returns the lap it completes, if any.
    pub fn push(&mut self, position: Point, reward: f64) -> Option<LapRecord> {
        let i = self.index;
        self.index += 1;
        self.acc += reward;
        self.total += reward;
        let prev = self.prev.replace(position)?;
        let (a, b) = (self.along(prev), self.along(position));
        let near = self.across(prev).min(self.across(position)) <= self.reach;
        if !near {
            return None;
        }
        if a < 0.0 && b >= 0.0 {
            self.net += 1;
            if self.net > self.laps.len() as i64 {
                let rec = LapRecord {
                    lap: self.laps.len() + 1,
                    start: self.lap_start,
                    end: i,
                    reward: self.acc,
                };
                self.laps.push(rec);
                self.lap_start = i + 1;
                self.acc = 0.0;
                return Some(rec);
            }
        } else if a >= 0.0 && b < 0.0 {
            self.net -= 1;
        }
        None
    }

    pub fn laps(&self) -> &[LapRecord] {
        &self.laps
    }

    pub fn completed(&self) -> usize {
        self.laps.len()
    }

    /// Reward accumulated since the last completed lap.
    pub fn partial_reward(&self) -> f64 {
        self.acc
    }

    pub fn total_reward(&self) -> f64 {
        self.total
    }
}
