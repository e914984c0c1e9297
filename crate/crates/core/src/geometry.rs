//! Small planar/spatial pose helpers shared by the planner, target generator
//! and executor.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Wraps an angle to the half-open interval (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Rotation about the vertical axis.
pub fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotates a planar vector by `yaw`.
pub fn rotate2(v: &Vector2<f64>, yaw: f64) -> Vector2<f64> {
    let (s, c) = yaw.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Planar base pose: position on the ground plane and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePose2D {
    pub xy: Vector2<f64>,
    /// Heading in (−π, π].
    pub yaw: f64,
}

impl BasePose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            xy: Vector2::new(x, y),
            yaw: wrap_angle(yaw),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn distance_to(&self, other: &BasePose2D) -> f64 {
        (other.xy - self.xy).norm()
    }

    /// Maps a point expressed in this pose's heading frame (ground-referenced,
    /// z up) into the base frame.
    pub fn to_base(&self, local: &Vector3<f64>) -> Vector3<f64> {
        rot_z(self.yaw) * local + Vector3::new(self.xy.x, self.xy.y, 0.0)
    }

    /// Inverse of [`BasePose2D::to_base`].
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        rot_z(-self.yaw) * (p - Vector3::new(self.xy.x, self.xy.y, 0.0))
    }

    pub fn heading(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw)
    }

    /// Transforms a pose given in this heading frame into the base frame.
    pub fn pose_to_base(&self, local: &Pose3D) -> Pose3D {
        Pose3D {
            position: self.to_base(&local.position),
            orientation: self.heading() * local.orientation,
        }
    }

    /// Expresses a base-frame pose in this heading frame.
    pub fn pose_to_local(&self, pose: &Pose3D) -> Pose3D {
        Pose3D {
            position: self.to_local(&pose.position),
            orientation: self.heading().inverse() * pose.orientation,
        }
    }
}

/// Rigid pose: position plus unit quaternion.
///
/// Serialized as `{"position": [x, y, z], "orientation": [w, x, y, z]}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose3D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Linear position blend and shortest-arc orientation blend.
    pub fn interpolate(&self, other: &Pose3D, s: f64) -> Pose3D {
        Pose3D {
            position: self.position.lerp(&other.position, s),
            orientation: slerp_shortest(&self.orientation, &other.orientation, s),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && (self.orientation.quaternion().norm() - 1.0).abs() < 1e-9
    }
}

/// Spherical interpolation along the shorter arc. Falls back to normalized
/// linear interpolation when the endpoints are nearly identical.
pub fn slerp_shortest(
    a: &UnitQuaternion<f64>,
    b: &UnitQuaternion<f64>,
    s: f64,
) -> UnitQuaternion<f64> {
    if s <= 0.0 {
        return *a;
    }
    if s >= 1.0 {
        return *b;
    }
    let mut qb = *b.quaternion();
    if a.quaternion().dot(&qb) < 0.0 {
        qb = -qb;
    }
    let qb = UnitQuaternion::new_unchecked(qb);
    a.try_slerp(&qb, s, 1e-12)
        .unwrap_or_else(|| a.nlerp(&qb, s))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl Serialize for Pose3D {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation.quaternion();
        PoseRepr {
            position: self.position.into(),
            orientation: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose3D {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let [w, x, y, z] = r.orientation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(serde::de::Error::custom("orientation quaternion must be non-zero"));
        }
        Ok(Pose3D {
            position: Vector3::from(r.position),
            orientation: UnitQuaternion::from_quaternion(q),
        })
    }
}
