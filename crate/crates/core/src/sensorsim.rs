//! Synthetic detector and depth sensor.
//!
//! Stands in for the neural detector: the true ball is projected through the
//! pinhole model with pixel noise and dropouts, Poisson-distributed
//! distractors are sprinkled over the image, and each candidate carries a raw
//! depth patch mixing ball, background and invalid samples. A scalar
//! appearance score replaces the color-consistency check.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::camera::{project, DepthPolicy, Extrinsics, Intrinsics, SigmaModel};
use crate::error::{Error, Result};
use crate::flightdyn::ProjectileState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    /// Box center (px).
    pub center: Vector2<f64>,
    /// Box width and height (px).
    pub size: Vector2<f64>,
    pub confidence: f64,
    pub appearance_score: f64,
    pub t: f64,
}

impl Detection2D {
    pub fn side(&self) -> f64 {
        self.size.x.max(self.size.y)
    }

    /// Geometric-mean box scale, used for scale-consistency checks.
    pub fn scale(&self) -> f64 {
        (self.size.x * self.size.y).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Std. dev. of the true detection center (px).
    pub pixel_sigma: f64,
    pub dropout_prob: f64,
    /// Expected number of distractor candidates per frame.
    pub false_positive_rate: f64,
    /// Fraction of depth-patch samples reported as invalid (zero).
    pub depth_invalid_frac: f64,
    /// Scale on the depth noise of the sigma model; 0 disables depth noise.
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            dropout_prob: 0.05,
            false_positive_rate: 0.3,
            depth_invalid_frac: 0.1,
            depth_noise: 1.0,
            seed: 0x5eed,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            pixel_sigma: 0.0,
            dropout_prob: 0.0,
            false_positive_rate: 0.0,
            depth_invalid_frac: 0.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::validation(format!("noise.{name}"), format!("must lie in [0, 1] (got {p})")))
            }
        };
        prob("dropout_prob", self.dropout_prob)?;
        prob("depth_invalid_frac", self.depth_invalid_frac)?;
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(Error::validation("noise.pixel_sigma", "must be >= 0"));
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return Err(Error::validation("noise.false_positive_rate", "must be >= 0"));
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            return Err(Error::validation("noise.depth_noise", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterRules {
    pub min_box: f64,
    pub max_box: f64,
    pub max_aspect_ratio: f64,
    pub min_appearance: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_box: 2.0,
            max_box: 120.0,
            max_aspect_ratio: 2.0,
            min_appearance: 0.35,
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_box > 0.0 && self.min_box < self.max_box) {
            return Err(Error::validation("filter.min_box", "must satisfy 0 < min_box < max_box"));
        }
        if !(self.max_aspect_ratio >= 1.0) {
            return Err(Error::validation("filter.max_aspect_ratio", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.min_appearance) {
            return Err(Error::validation("filter.min_appearance", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn accepts(&self, d: &Detection2D) -> bool {
        let long = d.size.x.max(d.size.y);
        let short = d.size.x.min(d.size.y);
        short > 0.0
            && long >= self.min_box
            && long <= self.max_box
            && long / short <= self.max_aspect_ratio
            && d.appearance_score >= self.min_appearance
    }
}

/// Scene constants for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorScene {
    /// Ball radius (m); sets the apparent box size.
    pub ball_radius: f64,
    /// Range of the gap between ball and background (m).
    pub background_gap: [f64; 2],
}

impl Default for SensorScene {
    fn default() -> Self {
        Self {
            ball_radius: 0.033,
            background_gap: [1.5, 6.0],
        }
    }
}

/// A candidate with the raw depth samples around its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedDetection {
    pub detection: Detection2D,
    pub depth_patch: Vec<f64>,
    /// Ground-truth label, never consulted by the perception pipeline.
    pub is_ball: bool,
}

/// Everything the sensor needs besides the ball state.
#[derive(Debug, Clone, Copy)]
pub struct SensorRig<'a> {
    pub intrinsics: &'a Intrinsics,
    pub extrinsics: &'a Extrinsics,
    pub noise: &'a NoiseModel,
    pub sigma_model: &'a SigmaModel,
    pub depth: &'a DepthPolicy,
    pub scene: &'a SensorScene,
}

/// Renders one camera frame. The caller owns and threads the random state.
pub fn render_frame<R: Rng + ?Sized>(truth: &ProjectileState, rig: &SensorRig<'_>, rng: &mut R) -> Vec<RenderedDetection> {
    let k = rig.intrinsics;
    let noise = rig.noise;
    let mut out = Vec::new();

    let p_cam = rig.extrinsics.base_to_cam(&truth.p);
    let dropped = rng.random::<f64>() < noise.dropout_prob;
    if let Ok((u, v, depth)) = project(&p_cam, k) {
        let u = u + gaussian(rng, noise.pixel_sigma);
        let v = v + gaussian(rng, noise.pixel_sigma);
        if !dropped && k.contains(u, v) {
            let side = (2.0 * k.fx * rig.scene.ball_radius / depth).clamp(2.0, 200.0);
            let appearance = Beta::new(8.0, 2.0).unwrap().sample(rng);
            let confidence = rng.random_range(0.55..0.98);
            let patch = ball_patch(rng, depth, side, rig);
            out.push(RenderedDetection {
                detection: Detection2D {
                    center: Vector2::new(u, v),
                    size: Vector2::new(side, side),
                    confidence,
                    appearance_score: appearance,
                    t: truth.t,
                },
                depth_patch: patch,
                is_ball: true,
            });
        }
    }

    let n_false = if noise.false_positive_rate > 0.0 {
        Poisson::new(noise.false_positive_rate).unwrap().sample(rng) as usize
    } else {
        0
    };
    for _ in 0..n_false {
        let center = Vector2::new(rng.random_range(0.0..k.width), rng.random_range(0.0..k.height));
        let side: f64 = rng.random_range(4.0..60.0);
        let aspect: f64 = rng.random_range(0.3..3.3);
        let size = Vector2::new(side * aspect.sqrt(), side / aspect.sqrt());
        let depth: f64 = rng.random_range(0.5..9.0);
        let n = rig.depth.patch_side * rig.depth.patch_side;
        let jitter = 0.2 * rig.sigma_model.depth_sigma(depth) * noise.depth_noise;
        let patch = (0..n)
            .map(|_| {
                if rng.random::<f64>() < noise.depth_invalid_frac {
                    0.0
                } else {
                    depth + gaussian(rng, jitter)
                }
            })
            .collect();
        out.push(RenderedDetection {
            detection: Detection2D {
                center,
                size,
                confidence: rng.random_range(0.2..0.9),
                appearance_score: rng.random::<f64>(),
                t: truth.t,
            },
            depth_patch: patch,
            is_ball: false,
        });
    }
    out
}

/// Depth samples for the true ball: the fraction of the patch covered by the
/// ball disc sees the ball depth (a per-frame offset plus small per-pixel
/// jitter), the rest sees a farther background.
fn ball_patch<R: Rng + ?Sized>(rng: &mut R, depth: f64, side: f64, rig: &SensorRig<'_>) -> Vec<f64> {
    let n = rig.depth.patch_side * rig.depth.patch_side;
    let disc = std::f64::consts::PI * (side / 2.0).powi(2);
    let n_ball = ((disc / n as f64).min(1.0) * n as f64).round() as usize;
    let sigma = rig.sigma_model.depth_sigma(depth) * rig.noise.depth_noise;
    let offset = gaussian(rng, sigma);
    let [gap_lo, gap_hi] = rig.scene.background_gap;
    let background = depth + rng.random_range(gap_lo..=gap_hi);
    (0..n)
        .map(|i| {
            if rng.random::<f64>() < rig.noise.depth_invalid_frac {
                0.0
            } else if i < n_ball {
                depth + offset + gaussian(rng, 0.2 * sigma)
            } else {
                background + gaussian(rng, 0.2 * sigma)
            }
        })
        .collect()
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Keeps candidates with plausible scale, aspect ratio and appearance, in
/// input order.
pub fn filter_candidates(dets: &[Detection2D], rules: &FilterRules) -> Vec<Detection2D> {
    dets.iter().copied().filter(|d| rules.accepts(d)).collect()
}

/// Index-preserving variant of [`filter_candidates`] for rendered frames.
pub fn filter_rendered<'a>(frame: &'a [RenderedDetection], rules: &FilterRules) -> Vec<&'a RenderedDetection> {
    frame.iter().filter(|r| rules.accepts(&r.detection)).collect()
}
