//! Pinhole geometry for lifting tracked pixels to base-frame points.
//!
//! A tracked center `(u, v)` with aggregated depth `Z` maps to the camera
//! frame as `((u − cx)·Z/fx, (v − cy)·Z/fy, Z)` and then to the base frame
//! through the calibrated extrinsics. Pixel and depth uncertainty is pushed
//! through the same map to first order, which makes the measurement
//! covariance grow with range.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::validation("camera.intrinsics.fx/fy", "focal lengths must be > 0"));
        }
        if !(self.cx > 0.0 && self.cx < self.width) {
            return Err(Error::validation("camera.intrinsics.cx", "must satisfy 0 < cx < width"));
        }
        if !(self.cy > 0.0 && self.cy < self.height) {
            return Err(Error::validation("camera.intrinsics.cy", "must satisfy 0 < cy < height"));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..self.width).contains(&u) && (0.0..self.height).contains(&v)
    }
}

/// Camera→base rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Extrinsics {
    /// Rotation camera→base, serialized as three rows.
    #[serde(with = "rows3")]
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Extrinsics {
    /// Optical axis along base +x, image right along base −y, image down along
    /// base −z; mounted 1.2 m above the ground.
    fn default() -> Self {
        Self {
            rotation: Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0),
            translation: Vector3::new(0.0, 0.0, 1.2),
        }
    }
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if !(ortho < 1e-9 && (r.determinant() - 1.0).abs() < 1e-9) {
            return Err(Error::validation(
                "camera.extrinsics.rotation",
                "must be orthonormal with determinant +1",
            ));
        }
        ensure_finite("camera.extrinsics.translation", self.translation.as_slice())
    }

    /// Inverse map, base→camera.
    pub fn base_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

mod rows3 {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSigmas {
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub sigma_z: f64,
}

/// Heuristic uncertainty model: localization error grows with apparent size,
/// depth error grows quadratically with range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaModel {
    /// Lower bound on pixel sigma (px).
    pub pixel_floor: f64,
    /// Pixel sigma as a fraction of the box side.
    pub pixel_per_box: f64,
    pub depth_base: f64,
    pub depth_quadratic: f64,
}

impl Default for SigmaModel {
    fn default() -> Self {
        Self {
            pixel_floor: 1.0,
            pixel_per_box: 0.15,
            depth_base: 0.01,
            depth_quadratic: 0.004,
        }
    }
}

impl SigmaModel {
    pub fn sigmas(&self, box_side: f64, depth: f64) -> PixelSigmas {
        let s = self.pixel_floor.max(self.pixel_per_box * box_side);
        PixelSigmas {
            sigma_u: s,
            sigma_v: s,
            sigma_z: self.depth_sigma(depth),
        }
    }

    pub fn depth_sigma(&self, depth: f64) -> f64 {
        self.depth_base + self.depth_quadratic * depth * depth
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_floor > 0.0 && self.pixel_per_box >= 0.0) {
            return Err(Error::validation("camera.sigma_model.pixel_floor", "must be > 0"));
        }
        if !(self.depth_base > 0.0 && self.depth_quadratic >= 0.0) {
            return Err(Error::validation("camera.sigma_model.depth_base", "must be > 0"));
        }
        Ok(())
    }
}

/// Robust depth aggregation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthPolicy {
    /// Side of the square sampling patch (px, odd).
    pub patch_side: usize,
    /// Percentile of surviving samples; a low value favors the foreground.
    pub percentile: f64,
    pub min_valid: usize,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for DepthPolicy {
    fn default() -> Self {
        Self {
            patch_side: 7,
            percentile: 25.0,
            min_valid: 5,
            min_range: 0.3,
            max_range: 10.0,
        }
    }
}

impl DepthPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.patch_side % 2 == 0 {
            return Err(Error::validation("camera.depth.patch_side", "must be odd and > 0"));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::validation("camera.depth.percentile", "must lie in [0, 100]"));
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(Error::validation("camera.depth.min_range", "must satisfy 0 < min < max"));
        }
        if self.min_valid == 0 {
            return Err(Error::validation("camera.depth.min_valid", "must be >= 1"));
        }
        Ok(())
    }
}

/// One lifted observation: base-frame position, its covariance, and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement3D {
    pub z: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub t: f64,
}

pub fn back_project(u: f64, v: f64, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Vector3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth))
}

/// Returns `(u, v, Z)`.
pub fn project(p_cam: &Vector3<f64>, k: &Intrinsics) -> Result<(f64, f64, f64)> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    Ok((k.fx * p_cam.x / z + k.cx, k.fy * p_cam.y / z + k.cy, z))
}

pub fn cam_to_base(p_cam: &Vector3<f64>, ext: &Extrinsics) -> Vector3<f64> {
    ext.rotation * p_cam + ext.translation
}

/// ∂p_base/∂(u, v, Z) of the back-projection followed by the extrinsic map.
pub fn measurement_jacobian(u: f64, v: f64, depth: f64, k: &Intrinsics, ext: &Extrinsics) -> Result<Matrix3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    let j_cam = Matrix3::new(
        depth / k.fx, 0.0, (u - k.cx) / k.fx,
        0.0, depth / k.fy, (v - k.cy) / k.fy,
        0.0, 0.0, 1.0,
    );
    Ok(ext.rotation * j_cam)
}

/// `J · diag(σu², σv², σz²) · Jᵀ`, symmetrized.
pub fn measurement_covariance(j: &Matrix3<f64>, sig: &PixelSigmas) -> Matrix3<f64> {
    let d = Matrix3::from_diagonal(&Vector3::new(
        sig.sigma_u * sig.sigma_u,
        sig.sigma_v * sig.sigma_v,
        sig.sigma_z * sig.sigma_z,
    ));
    let c = j * d * j.transpose();
    (c + c.transpose()) * 0.5
}

/// Foreground-biased depth from a patch of raw samples.
///
/// Non-finite and out-of-range samples are dropped; the requested percentile
/// (linear interpolation between order statistics) of the survivors is
/// returned, or `None` when fewer than `min_valid` survive.
pub fn robust_depth(patch: &[f64], policy: &DepthPolicy) -> Result<Option<f64>> {
    if patch.is_empty() {
        return Err(Error::validation("patch", "must be non-empty"));
    }
    let mut valid: Vec<f64> = patch
        .iter()
        .copied()
        .filter(|d| d.is_finite() && *d >= policy.min_range && *d <= policy.max_range)
        .collect();
    if valid.len() < policy.min_valid {
        return Ok(None);
    }
    valid.sort_by(f64::total_cmp);
    Ok(Some(percentile_sorted(&valid, policy.percentile)))
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Full lift of a tracked center: back-projection, extrinsics, first-order
/// covariance.
pub fn lift(
    u: f64,
    v: f64,
    depth: f64,
    t: f64,
    k: &Intrinsics,
    ext: &Extrinsics,
    sig: &PixelSigmas,
) -> Result<Measurement3D> {
    let p_cam = back_project(u, v, depth, k)?;
    let j = measurement_jacobian(u, v, depth, k, ext)?;
    Ok(Measurement3D {
        z: cam_to_base(&p_cam, ext),
        cov: measurement_covariance(&j, sig),
        t,
    })
}
