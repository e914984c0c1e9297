//! Short-horizon rollout and hit-plane intersection.
//!
//! The current estimate is integrated forward with the flight model (ground
//! bounces included) at a fixed prediction step. The earliest crossing of the
//! horizontal hitting plane gives the hit point, time and velocity; a
//! candidate is exported only when the filter is confident, the hit time
//! falls inside the reaction window and the hit point is reachable.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ekf::{to_estimate, Belief, ProjectileEstimate};
use crate::error::{Error, Result};
use crate::flightdyn::{advance_with_ground, BounceParams, DragParams, GroundContact, ProjectileState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSample {
    /// Offset from the rollout origin (s).
    pub tau: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Whether a ground bounce happened at or before this sample.
    pub after_bounce: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// State at `tau = 0`, not part of `samples`.
    pub origin: ProjectileState,
    /// Samples `i = 1..=N` at `tau = i·dt_pred`.
    pub samples: Vec<RolloutSample>,
    pub dt_pred: f64,
    pub origin_t: f64,
}

/// Axis-aligned box in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportGates {
    /// Upper bound on the trace of the position covariance (m²).
    pub max_pos_cov_trace: f64,
    /// Allowed range of `t_hit − now` (s).
    pub t_hit_window: [f64; 2],
    pub workspace: Aabb,
    /// Hitting-plane height (m).
    pub z0: f64,
    pub dt_pred: f64,
    /// Number of rollout samples.
    pub n: usize,
    pub ground_z: f64,
}

impl Default for ExportGates {
    fn default() -> Self {
        Self {
            max_pos_cov_trace: 0.05,
            t_hit_window: [0.45, 3.0],
            workspace: Aabb {
                min: Vector3::new(-0.5, -1.5, 0.4),
                max: Vector3::new(2.0, 1.5, 1.8),
            },
            z0: 0.9,
            dt_pred: 0.02,
            n: 100,
            ground_z: 0.0,
        }
    }
}

impl ExportGates {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_hit_window[0] < self.t_hit_window[1]) {
            return Err(Error::validation("gates.t_hit_window", "min must be < max"));
        }
        if (0..3).any(|i| !(self.workspace.min[i] < self.workspace.max[i])) {
            return Err(Error::validation("gates.workspace", "box must be non-degenerate"));
        }
        if !(self.dt_pred > 0.0) {
            return Err(Error::validation("gates.dt_pred", "must be > 0"));
        }
        if self.n < 2 {
            return Err(Error::validation("gates.n", "must be >= 2"));
        }
        if !(self.max_pos_cov_trace > 0.0) {
            return Err(Error::validation("gates.max_pos_cov_trace", "must be > 0"));
        }
        Ok(())
    }
}

/// Which crossing rule produced a hit point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    Descending,
    RisingAfterBounce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitPoint {
    pub p: Vector3<f64>,
    /// Absolute time (s).
    pub t: f64,
    pub v: Vector3<f64>,
    pub crossing: Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptCandidate {
    pub p_hit: Vector3<f64>,
    pub t_hit: f64,
    pub v_hit: Vector3<f64>,
    pub p_land: Option<Vector3<f64>>,
    pub confidence: f64,
    pub crossing: Crossing,
}

/// Why a candidate was not exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suppressed {
    Covariance,
    NoCrossing,
    Window,
    Workspace,
}

impl Suppressed {
    pub fn gate_name(self) -> &'static str {
        match self {
            Suppressed::Covariance => "covariance",
            Suppressed::NoCrossing => "no_crossing",
            Suppressed::Window => "window",
            Suppressed::Workspace => "workspace",
        }
    }
}

pub fn rollout(est: &ProjectileEstimate, gates: &ExportGates, drag: &DragParams, bounce: &BounceParams) -> Rollout {
    rollout_state(&est.as_state(), gates.dt_pred, gates.n, gates.ground_z, drag, bounce)
}

/// Rollout from an explicit state, `n` samples of `dt` each.
pub fn rollout_state(
    origin: &ProjectileState,
    dt: f64,
    n: usize,
    ground_z: f64,
    drag: &DragParams,
    bounce: &BounceParams,
) -> Rollout {
    let mut samples = Vec::with_capacity(n);
    let mut s = *origin;
    let mut bounced = false;
    for i in 1..=n {
        let (next, contact) = advance_with_ground(&s, dt, drag, bounce, ground_z);
        bounced |= contact == GroundContact::Bounced;
        s = next;
        samples.push(RolloutSample {
            tau: i as f64 * dt,
            p: s.p,
            v: s.v,
            after_bounce: bounced,
        });
    }
    Rollout {
        origin: *origin,
        samples,
        dt_pred: dt,
        origin_t: origin.t,
    }
}

impl Rollout {
    /// `(tau, p, v, after_bounce)` for the origin followed by every sample.
    fn points(&self) -> impl Iterator<Item = RolloutSample> + '_ {
        std::iter::once(RolloutSample {
            tau: 0.0,
            p: self.origin.p,
            v: self.origin.v,
            after_bounce: false,
        })
        .chain(self.samples.iter().copied())
    }
}

fn interpolate(a: &RolloutSample, b: &RolloutSample, level: f64, origin_t: f64) -> (Vector3<f64>, f64, Vector3<f64>) {
    let dz = b.p.z - a.p.z;
    let f = if dz == 0.0 { 1.0 } else { (level - a.p.z) / dz };
    if f >= 1.0 {
        return (b.p, origin_t + b.tau, b.v);
    }
    if f <= 0.0 {
        return (a.p, origin_t + a.tau, a.v);
    }
    let mut p = a.p.lerp(&b.p, f);
    p.z = level;
    (p, origin_t + a.tau + f * (b.tau - a.tau), a.v.lerp(&b.v, f))
}

/// Earliest descending crossing of `z = z0`; failing that, the earliest rising
/// crossing after a ground bounce.
pub fn hit_point(r: &Rollout, z0: f64) -> Option<HitPoint> {
    let pts: Vec<RolloutSample> = r.points().collect();
    let mut rising = None;
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.p.z >= z0 && b.p.z <= z0 && a.p.z > b.p.z {
            let (p, t, v) = interpolate(a, b, z0, r.origin_t);
            return Some(HitPoint { p, t, v, crossing: Crossing::Descending });
        }
        if rising.is_none() && b.after_bounce && a.p.z <= z0 && b.p.z >= z0 && b.p.z > a.p.z {
            let (p, t, v) = interpolate(a, b, z0, r.origin_t);
            rising = Some(HitPoint { p, t, v, crossing: Crossing::RisingAfterBounce });
        }
    }
    rising
}

/// First strictly descending crossing of the ground plane.
pub fn landing_point(r: &Rollout, ground_z: f64) -> Option<Vector3<f64>> {
    let pts: Vec<RolloutSample> = r.points().collect();
    pts.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.p.z > ground_z && b.p.z <= ground_z).then(|| interpolate(a, b, ground_z, r.origin_t).0)
    })
}

/// Applies the export gates to the belief's rollout.
pub fn export_candidate(
    b: &Belief,
    gates: &ExportGates,
    drag: &DragParams,
    bounce: &BounceParams,
    now: f64,
) -> std::result::Result<InterceptCandidate, Suppressed> {
    if b.position_cov().trace() > gates.max_pos_cov_trace {
        return Err(Suppressed::Covariance);
    }
    let est = to_estimate(b);
    let r = rollout(&est, gates, drag, bounce);
    let hit = hit_point(&r, gates.z0).ok_or(Suppressed::NoCrossing)?;
    let lead = hit.t - now;
    if !(lead >= gates.t_hit_window[0] && lead <= gates.t_hit_window[1]) {
        return Err(Suppressed::Window);
    }
    if !gates.workspace.contains(&hit.p) {
        return Err(Suppressed::Workspace);
    }
    Ok(InterceptCandidate {
        p_hit: hit.p,
        t_hit: hit.t,
        v_hit: hit.v,
        p_land: landing_point(&r, gates.ground_z),
        confidence: b.confidence,
        crossing: hit.crossing,
    })
}
