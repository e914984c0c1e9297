//! Task-space command generation.
//!
//! The active plan is turned into a head look-at pose, left and right wrist
//! poses interpolated between swing templates, a pelvis height and a planar
//! velocity command. All poses in a [`TaskCommand`] are expressed in the
//! robot's current heading frame; the executor places them in the world with
//! its own base pose.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate2, wrap_angle, BasePose2D, Pose3D};
use crate::planner::{InterceptionPlan, PlannerConfig, SwingMode};

/// Racket face normal in the wrist frame.
pub fn face_normal() -> Vector3<f64> {
    Vector3::x()
}

/// Nominal racket-wrist poses in the base heading frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwingTemplates {
    pub ready: Pose3D,
    pub cock: Pose3D,
    pub contact: Pose3D,
    pub follow: Pose3D,
    /// Left-hand support pose, held throughout.
    pub support: Pose3D,
}

fn yawed(p: [f64; 3], yaw_deg: f64) -> Pose3D {
    Pose3D::new(
        Vector3::from(p),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians()),
    )
}

impl Default for SwingTemplates {
    fn default() -> Self {
        Self {
            ready: yawed([0.25, -0.35, 1.0], 0.0),
            cock: yawed([-0.05, -0.55, 1.0], -60.0),
            contact: yawed([0.4, -0.3, 0.9], 0.0),
            follow: yawed([0.35, 0.15, 1.15], 60.0),
            support: yawed([0.15, 0.25, 0.95], 0.0),
        }
    }
}

impl SwingTemplates {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("templates.ready", &self.ready),
            ("templates.cock", &self.cock),
            ("templates.contact", &self.contact),
            ("templates.follow", &self.follow),
            ("templates.support", &self.support),
        ] {
            if !p.is_valid() {
                return Err(Error::validation(name, "pose must be finite with a unit quaternion"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub k_p: f64,
    pub k_psi: f64,
    pub nominal_height: f64,
    /// Vertical offset subtracted from the hit height to get the pelvis height.
    pub hit_height_offset: f64,
    pub height_range: [f64; 2],
    /// Head origin in the base heading frame.
    pub head_origin: Vector3<f64>,
    /// Distance over which the approach blends from ready to cocked (m).
    pub approach_blend_dist: f64,
    /// How far ahead of the clock the swing phase is evaluated (s). Set to
    /// the executor's wrist lag so the tracked wrist arrives on time.
    pub phase_lead: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            k_p: 2.0,
            k_psi: 3.0,
            nominal_height: 0.72,
            hit_height_offset: 0.2,
            height_range: [0.45, 0.85],
            head_origin: Vector3::new(0.0, 0.0, 1.2),
            approach_blend_dist: 1.0,
            phase_lead: 0.08,
        }
    }
}

impl TargetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_psi > 0.0) {
            return Err(Error::validation("targets.k_p", "gains must be > 0"));
        }
        let [lo, hi] = self.height_range;
        if !(lo < hi) {
            return Err(Error::validation("targets.height_range", "min must be < max"));
        }
        if !(self.nominal_height >= lo && self.nominal_height <= hi) {
            return Err(Error::validation("targets.nominal_height", "must lie in height_range"));
        }
        if !(self.approach_blend_dist > 0.0) {
            return Err(Error::validation("targets.approach_blend_dist", "must be > 0"));
        }
        if !(self.phase_lead >= 0.0 && self.phase_lead.is_finite()) {
            return Err(Error::validation("targets.phase_lead", "must be >= 0"));
        }
        Ok(())
    }
}

/// Planar velocity in the robot heading frame plus yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCommand {
    pub head: Pose3D,
    pub wrist_left: Pose3D,
    pub wrist_right: Pose3D,
    pub base_height: f64,
    pub nav: NavCommand,
}

/// Look-at pose from `origin` toward `ball`, zero roll. Falls back to
/// `current`'s orientation when the ball is within 5 cm of the origin.
pub fn head_target(ball: &Vector3<f64>, origin: &Vector3<f64>, current: &Pose3D) -> Pose3D {
    let d = ball - origin;
    let n = d.norm();
    if n < 0.05 {
        return Pose3D::new(*origin, current.orientation);
    }
    let yaw = d.y.atan2(d.x);
    let pitch = -(d.z / n).clamp(-1.0, 1.0).asin();
    Pose3D::new(*origin, UnitQuaternion::from_euler_angles(0.0, pitch, yaw))
}

/// Contact template moved onto the hit point (in the `base_des` frame) and
/// turned so the face normal points along the swing direction.
pub fn aligned_contact(plan: &InterceptionPlan, templates: &SwingTemplates) -> Pose3D {
    let position = plan.base_des.to_local(&plan.p_hit);
    let d_local = plan.base_des.heading().inverse() * plan.d_swing;
    let n0 = templates.contact.orientation * face_normal();
    let turn = UnitQuaternion::rotation_between(&n0, &d_local)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI));
    Pose3D::new(position, turn * templates.contact.orientation)
}

/// Left and right wrist poses for `mode` at `phase`.
///
/// In SWING the right wrist is expressed in the `plan.base_des` frame; in the
/// other modes both poses are relative to the robot's own heading frame.
pub fn wrist_targets(
    mode: SwingMode,
    phase: f64,
    plan: &InterceptionPlan,
    templates: &SwingTemplates,
) -> Result<(Pose3D, Pose3D)> {
    if !(0.0..=1.0).contains(&phase) {
        return Err(Error::validation("phase", format!("must be in [0, 1] (got {phase})")));
    }
    let right = match mode {
        SwingMode::Approach => templates.ready.interpolate(&templates.cock, phase),
        SwingMode::Swing => {
            let contact = aligned_contact(plan, templates);
            if phase <= 0.5 {
                templates.cock.interpolate(&contact, phase * 2.0)
            } else {
                contact.interpolate(&templates.follow, (phase - 0.5) * 2.0)
            }
        }
        SwingMode::Recover => templates.follow.interpolate(&templates.ready, phase),
    };
    Ok((templates.support, right))
}

/// Proportional base controller in the robot heading frame, saturated.
pub fn nav_command(robot: &BasePose2D, target: &BasePose2D, max_speed: f64, max_yaw_rate: f64, cfg: &TargetConfig) -> NavCommand {
    let err = rotate2(&(target.xy - robot.xy), -robot.yaw);
    let mut v = err * cfg.k_p;
    let n = v.norm();
    if n > max_speed {
        v *= max_speed / n;
    }
    let yaw_rate = (cfg.k_psi * wrap_angle(target.yaw - robot.yaw)).clamp(-max_yaw_rate, max_yaw_rate);
    NavCommand { vx: v.x, vy: v.y, yaw_rate }
}

/// Pelvis height for a hit at `p_hit_z`, or the nominal height when idle.
pub fn base_height(p_hit_z: Option<f64>, cfg: &TargetConfig) -> f64 {
    match p_hit_z {
        Some(z) => (z - cfg.hit_height_offset).clamp(cfg.height_range[0], cfg.height_range[1]),
        None => cfg.nominal_height,
    }
}

/// Phase within the plan's current mode.
///
/// APPROACH blends by distance to the target base pose. SWING uses a
/// two-segment clock: `[mode_since, t_hit]` maps to `[0, 0.5]` and
/// `[t_hit, t_hit + follow_through]` to `[0.5, 1]`, so contact is at 0.5.
/// RECOVER runs linearly over `recover_duration`.
pub fn mode_phase(plan: &InterceptionPlan, robot: &BasePose2D, now: f64, tcfg: &TargetConfig, pcfg: &PlannerConfig) -> f64 {
    let ph = match plan.mode {
        SwingMode::Approach => 1.0 - robot.distance_to(&plan.base_des) / tcfg.approach_blend_dist,
        SwingMode::Swing => {
            if now <= plan.t_hit {
                let span = plan.t_hit - plan.mode_since;
                if span > 0.0 {
                    0.5 * (now - plan.mode_since) / span
                } else {
                    0.5
                }
            } else if pcfg.follow_through > 0.0 {
                0.5 + 0.5 * (now - plan.t_hit) / pcfg.follow_through
            } else {
                1.0
            }
        }
        SwingMode::Recover => {
            if pcfg.recover_duration > 0.0 {
                (now - plan.mode_since) / pcfg.recover_duration
            } else {
                1.0
            }
        }
    };
    ph.clamp(0.0, 1.0)
}

/// Composes the full command. `prev_head` (robot heading frame) is reused
/// when the look-at direction is degenerate.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    plan: Option<&InterceptionPlan>,
    robot: &BasePose2D,
    ball_p: Option<&Vector3<f64>>,
    phase: f64,
    prev_head: &Pose3D,
    templates: &SwingTemplates,
    tcfg: &TargetConfig,
    pcfg: &PlannerConfig,
) -> Result<TaskCommand> {
    let head = match ball_p {
        Some(b) => head_target(&robot.to_local(b), &tcfg.head_origin, prev_head),
        None => Pose3D::from_position(tcfg.head_origin),
    };
    let Some(plan) = plan else {
        return Ok(TaskCommand {
            head,
            wrist_left: templates.support,
            wrist_right: templates.ready,
            base_height: tcfg.nominal_height,
            nav: NavCommand::default(),
        });
    };
    let (left, right) = wrist_targets(plan.mode, phase, plan, templates)?;
    let right = if plan.mode == SwingMode::Swing {
        robot.pose_to_local(&plan.base_des.pose_to_base(&right))
    } else {
        right
    };
    Ok(TaskCommand {
        head,
        wrist_left: left,
        wrist_right: right,
        base_height: base_height(Some(plan.p_hit.z), tcfg),
        nav: nav_command(robot, &plan.base_des, pcfg.max_base_speed, pcfg.max_yaw_rate, tcfg),
    })
}
