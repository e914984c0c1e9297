//! Point-mass flight model: gravity, linear and quadratic drag, and a
//! restitution bounce.
//!
//! The same discrete update drives the ground-truth simulator, the filter's
//! process model and the predictor's rollout, so all three share one
//! discretization:
//!
//! ```text
//! a(v)  = (0, 0, −g) − k1·v − k2·‖v‖·v
//! p'    = p + v·dt + ½·a(v)·dt²
//! v'    = v + a(v)·dt
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DragParams {
    /// Gravitational acceleration magnitude (m/s²).
    pub g: f64,
    /// Linear drag coefficient (1/s).
    pub k1: f64,
    /// Quadratic drag coefficient (1/m).
    pub k2: f64,
}

impl Default for DragParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            k1: 0.05,
            k2: 0.01,
        }
    }
}

impl DragParams {
    pub fn drag_free(g: f64) -> Self {
        Self { g, k1: 0.0, k2: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g.is_finite() && self.g > 0.0) {
            return Err(Error::validation("drag.g", format!("must be > 0 (got {})", self.g)));
        }
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::validation("drag.k1", format!("must be >= 0 (got {})", self.k1)));
        }
        if !(self.k2.is_finite() && self.k2 >= 0.0) {
            return Err(Error::validation("drag.k2", format!("must be >= 0 (got {})", self.k2)));
        }
        Ok(())
    }

    /// Largest step for which drag alone cannot reverse the velocity:
    /// `1 / (k1 + k2·speed)`. Infinite when drag vanishes.
    pub fn stable_dt(&self, speed: f64) -> f64 {
        1.0 / (self.k1 + self.k2 * speed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BounceParams {
    /// Effective restitution coefficient, 0 < e < 1.
    pub e: f64,
    /// Height below which a descending estimate is considered bounced (m).
    pub z_b: f64,
    /// Factor applied to the velocity covariance block on a filter bounce.
    pub cov_inflation: f64,
}

impl Default for BounceParams {
    fn default() -> Self {
        Self {
            e: 0.75,
            z_b: 0.12,
            cov_inflation: 2.0,
        }
    }
}

impl BounceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e < 1.0) {
            return Err(Error::validation("bounce.e", format!("must satisfy 0 < e < 1 (got {})", self.e)));
        }
        if !(self.z_b.is_finite() && self.z_b >= 0.0) {
            return Err(Error::validation("bounce.z_b", format!("must be >= 0 (got {})", self.z_b)));
        }
        if !(self.cov_inflation.is_finite() && self.cov_inflation >= 1.0) {
            return Err(Error::validation(
                "bounce.cov_inflation",
                format!("must be >= 1 (got {})", self.cov_inflation),
            ));
        }
        Ok(())
    }
}

/// Ball position and velocity in the base frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectileState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub t: f64,
}

impl ProjectileState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, t: f64) -> Self {
        Self { p, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite()) && self.t.is_finite()
    }
}

/// Gravity plus drag at velocity `v`.
pub fn acceleration(v: &Vector3<f64>, params: &DragParams) -> Result<Vector3<f64>> {
    ensure_finite("velocity", v.as_slice())?;
    Ok(accel_unchecked(v, params))
}

#[inline]
pub(crate) fn accel_unchecked(v: &Vector3<f64>, params: &DragParams) -> Vector3<f64> {
    let gravity = Vector3::new(0.0, 0.0, -params.g);
    gravity - v * params.k1 - v * (params.k2 * v.norm())
}

/// One step of the flight model with acceleration frozen at the pre-step
/// velocity.
pub fn step(s: &ProjectileState, dt: f64, params: &DragParams) -> Result<ProjectileState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", format!("must be > 0 (got {dt})")));
    }
    if !s.is_finite() {
        return Err(Error::validation("state", "must be finite"));
    }
    Ok(step_unchecked(s, dt, params))
}

#[inline]
pub(crate) fn step_unchecked(s: &ProjectileState, dt: f64, params: &DragParams) -> ProjectileState {
    let a = accel_unchecked(&s.v, params);
    ProjectileState {
        p: s.p + s.v * dt + a * (0.5 * dt * dt),
        v: s.v + a * dt,
        t: s.t + dt,
    }
}

/// Reflects the vertical velocity: `v_z ← −e·v_z`. Position and horizontal
/// velocity are untouched.
pub fn apply_bounce(s: &ProjectileState, params: &BounceParams) -> ProjectileState {
    let mut out = *s;
    out.v.z = -params.e * s.v.z;
    out
}

/// Outcome of [`advance_with_ground`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundContact {
    None,
    Bounced,
    /// Impact too slow to rebound; the ball is held on the ground.
    Resting,
}

/// One flight step followed by the ground rule: a state that ends below
/// `ground_z` while descending is clamped to the ground and bounced.
///
/// The clamp lifts the ball by the penetration depth δ, so the impact speed is
/// reduced to `sqrt(v_z² − 2·g·δ)` to keep the vertical energy consistent with
/// the clamped height. An impact no faster than one step of free fall from rest
/// (`g·dt`) leaves the ball resting on the ground instead of bouncing.
pub fn advance_with_ground(
    s: &ProjectileState,
    dt: f64,
    drag: &DragParams,
    bounce: &BounceParams,
    ground_z: f64,
) -> (ProjectileState, GroundContact) {
    let mut next = step_unchecked(s, dt, drag);
    if next.p.z < ground_z && next.v.z < 0.0 {
        let depth = ground_z - next.p.z;
        next.p.z = ground_z;
        let impact = (next.v.z * next.v.z - 2.0 * drag.g * depth).max(0.0).sqrt();
        if impact <= drag.g * dt {
            next.v.z = 0.0;
            return (next, GroundContact::Resting);
        }
        next.v.z = -impact;
        return (apply_bounce(&next, bounce), GroundContact::Bounced);
    }
    (next, GroundContact::None)
}

/// Number of `dt` steps that cover `horizon`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> usize {
    let n = (horizon / dt).round();
    if n < 1.0 {
        1
    } else {
        n as usize
    }
}

/// Ground-truth trajectory generator: `round(horizon / dt)` successive states
/// after `init` (the initial state itself is not included).
pub fn simulate(
    init: &ProjectileState,
    dt: f64,
    horizon: f64,
    drag: &DragParams,
    bounce: &BounceParams,
    ground_z: f64,
) -> Result<Vec<ProjectileState>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", format!("must be > 0 (got {dt})")));
    }
    if !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::validation("horizon", format!("must be >= dt (got {horizon})")));
    }
    if !init.is_finite() {
        return Err(Error::validation("init", "must be finite"));
    }
    let n = step_count(horizon, dt);
    let mut out = Vec::with_capacity(n);
    let mut s = *init;
    for _ in 0..n {
        s = advance_with_ground(&s, dt, drag, bounce, ground_z).0;
        out.push(s);
    }
    Ok(out)
}
