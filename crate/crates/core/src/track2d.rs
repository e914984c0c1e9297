//! Single-object constant-velocity tracker in image space.
//!
//! The tracker smooths detections, bridges a few missed frames by
//! extrapolation (coasting) and resets once the gap grows too long. Coasted
//! centers are flagged so the 3D filter never treats them as measurements.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensorsim::Detection2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackState {
    Empty,
    Tracking,
    Coasting,
}

impl TrackState {
    /// Whether `self → next` is one of the tracker's declared transitions.
    /// `Empty → Empty` is the idle self-loop.
    pub fn can_transition_to(self, next: TrackState) -> bool {
        use TrackState::*;
        matches!(
            (self, next),
            (Empty, Empty)
                | (Empty, Tracking)
                | (Tracking, Tracking)
                | (Tracking, Coasting)
                | (Coasting, Tracking)
                | (Coasting, Coasting)
                | (Coasting, Empty)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssocGates {
    pub max_center_dist: f64,
    pub max_scale_ratio: f64,
    /// Radians.
    pub max_direction_angle: f64,
    /// Consecutive misses that reset the track; must be at least 2 so a
    /// track always coasts before it is dropped.
    pub max_coast_frames: u32,
    /// Weight of the newest finite-difference velocity.
    pub velocity_smoothing: f64,
    /// Below this image speed (px/s) the direction gate is skipped.
    pub direction_speed_floor: f64,
}

impl Default for AssocGates {
    fn default() -> Self {
        Self {
            max_center_dist: 40.0,
            max_scale_ratio: 2.0,
            max_direction_angle: 60f64.to_radians(),
            max_coast_frames: 5,
            velocity_smoothing: 0.5,
            direction_speed_floor: 50.0,
        }
    }
}

impl AssocGates {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_center_dist > 0.0) {
            return Err(Error::validation("track.max_center_dist", "must be > 0"));
        }
        if !(self.max_scale_ratio > 1.0) {
            return Err(Error::validation("track.max_scale_ratio", "must be > 1"));
        }
        if !(self.max_direction_angle > 0.0) {
            return Err(Error::validation("track.max_direction_angle", "must be > 0"));
        }
        if self.max_coast_frames < 2 {
            return Err(Error::validation("track.max_coast_frames", "must be >= 2"));
        }
        if !(self.velocity_smoothing > 0.0 && self.velocity_smoothing <= 1.0) {
            return Err(Error::validation("track.velocity_smoothing", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track2D {
    /// Last measured center (px).
    pub center: Vector2<f64>,
    /// Image velocity (px/s).
    pub vel: Vector2<f64>,
    pub size: Vector2<f64>,
    /// Time of the last associated detection.
    pub last_update: f64,
    pub miss_count: u32,
    pub state: TrackState,
    /// Number of associated detections since birth.
    pub hits: u32,
    /// Last timestamp passed to [`Track2D::step`], kept across resets.
    pub last_step: Option<f64>,
}

impl Default for Track2D {
    fn default() -> Self {
        Self::empty()
    }
}

/// What the tracker hands downstream for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackOutput {
    None,
    /// A real detection; `index` points into the frame's filtered list.
    Measured {
        center: Vector2<f64>,
        size: Vector2<f64>,
        index: usize,
    },
    /// Extrapolated center without a detection. Not a measurement.
    Coasting { center: Vector2<f64>, size: Vector2<f64> },
}

impl Track2D {
    pub fn empty() -> Self {
        Self {
            center: Vector2::zeros(),
            vel: Vector2::zeros(),
            size: Vector2::zeros(),
            last_update: 0.0,
            miss_count: 0,
            state: TrackState::Empty,
            hits: 0,
            last_step: None,
        }
    }

    pub fn predict_center(&self, t: f64) -> Result<Vector2<f64>> {
        if self.state == TrackState::Empty {
            return Err(Error::NoTrack);
        }
        Ok(self.center + self.vel * (t - self.last_update))
    }

    /// Picks the detection to associate at time `t`, by index.
    ///
    /// An empty track adopts the most confident detection. Otherwise a
    /// detection must fall within the center-distance and scale gates and,
    /// once the track moves fast enough for a direction to be meaningful,
    /// lie within the direction gate. The nearest survivor wins; ties go to
    /// higher confidence, then to input order.
    pub fn associate(&self, dets: &[Detection2D], t: f64, gates: &AssocGates) -> Option<usize> {
        if self.state == TrackState::Empty {
            return dets
                .iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, c)) if c >= d.confidence => best,
                    _ => Some((i, d.confidence)),
                })
                .map(|(i, _)| i);
        }
        let predicted = self.center + self.vel * (t - self.last_update);
        let speed = self.vel.norm();
        let cos_gate = gates.max_direction_angle.cos();
        let track_scale = (self.size.x * self.size.y).sqrt();

        let mut best: Option<(usize, f64, f64)> = None;
        for (i, d) in dets.iter().enumerate() {
            let dist = (d.center - predicted).norm();
            if dist > gates.max_center_dist {
                continue;
            }
            let s = d.scale();
            if track_scale > 0.0 && s > 0.0 && (s / track_scale).max(track_scale / s) > gates.max_scale_ratio {
                continue;
            }
            if speed >= gates.direction_speed_floor {
                let disp = d.center - self.center;
                let n = disp.norm();
                if n > 1e-9 && disp.dot(&self.vel) / (n * speed) < cos_gate {
                    continue;
                }
            }
            let better = match best {
                None => true,
                Some((_, bd, bc)) => dist < bd || (dist == bd && d.confidence > bc),
            };
            if better {
                best = Some((i, dist, d.confidence));
            }
        }
        best.map(|(i, _, _)| i)
    }

    /// Advances the track by one frame.
    pub fn step(&self, dets: &[Detection2D], t: f64, gates: &AssocGates) -> Result<(Track2D, TrackOutput)> {
        if let Some(last) = self.last_step {
            if !(t > last) {
                return Err(Error::Ordering { last, got: t });
            }
        }
        let mut next = *self;
        next.last_step = Some(t);

        match self.associate(dets, t, gates) {
            Some(i) => {
                let d = &dets[i];
                if self.state == TrackState::Empty {
                    next.vel = Vector2::zeros();
                    next.hits = 1;
                } else {
                    let raw = (d.center - self.center) / (t - self.last_update);
                    next.vel = if self.hits >= 2 {
                        raw * gates.velocity_smoothing + self.vel * (1.0 - gates.velocity_smoothing)
                    } else {
                        raw
                    };
                    next.hits = self.hits.saturating_add(1);
                }
                next.center = d.center;
                next.size = d.size;
                next.last_update = t;
                next.miss_count = 0;
                next.state = TrackState::Tracking;
                let out = TrackOutput::Measured {
                    center: d.center,
                    size: d.size,
                    index: i,
                };
                Ok((next, out))
            }
            None if self.state == TrackState::Empty => Ok((next, TrackOutput::None)),
            None => {
                let misses = self.miss_count + 1;
                if misses >= gates.max_coast_frames {
                    let reset = Track2D {
                        last_step: Some(t),
                        ..Track2D::empty()
                    };
                    return Ok((reset, TrackOutput::None));
                }
                next.miss_count = misses;
                next.state = TrackState::Coasting;
                let out = TrackOutput::Coasting {
                    center: self.predict_center(t)?,
                    size: self.size,
                };
                Ok((next, out))
            }
        }
    }
}
