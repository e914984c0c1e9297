//! Interception planning: base placement, feasibility and the swing phase
//! machine.
//!
//! A candidate hit point becomes a plan by choosing a heading that faces the
//! incoming ball, placing the base so the nominal racket contact point lands on
//! the hit point, and checking that the base can get there in time. The most
//! recent valid plan is kept as a fallback for cycles where the predictor
//! exports nothing.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_z, wrap_angle, BasePose2D};
use crate::predictor::InterceptCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SwingMode {
    Approach,
    Swing,
    Recover,
}

impl SwingMode {
    /// The declared transition set, self-loops included.
    pub fn can_transition_to(self, next: SwingMode) -> bool {
        use SwingMode::*;
        matches!(
            (self, next),
            (Approach, Approach) | (Approach, Swing) | (Swing, Swing) | (Swing, Recover) | (Recover, Recover) | (Recover, Approach)
        )
    }
}

/// Ground-plane rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Base-to-contact offset in the base heading frame (m).
    pub r_hit: Vector3<f64>,
    pub max_base_speed: f64,
    pub max_yaw_rate: f64,
    pub approach_commit_dist: f64,
    pub swing_lead: f64,
    pub follow_through: f64,
    pub recover_duration: f64,
    pub arm_reach: f64,
    /// Racket-arm shoulder in the base heading frame (m).
    pub shoulder: Vector3<f64>,
    /// Upward pitch of the swing direction (rad).
    pub swing_pitch: f64,
    /// Horizontal speed below which the incoming direction is ignored (m/s).
    pub min_horizontal_speed: f64,
    /// Landing area that counts as a return.
    pub target_region: Rect,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            r_hit: Vector3::new(0.4, -0.3, 0.9),
            max_base_speed: 1.2,
            max_yaw_rate: 2.0,
            approach_commit_dist: 0.15,
            swing_lead: 0.4,
            follow_through: 0.3,
            recover_duration: 0.5,
            arm_reach: 0.9,
            shoulder: Vector3::new(0.0, -0.2, 1.1),
            swing_pitch: 15f64.to_radians(),
            min_horizontal_speed: 0.1,
            target_region: Rect {
                min: Vector2::new(2.5, -4.0),
                max: Vector2::new(12.0, 4.0),
            },
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("planner.max_base_speed", self.max_base_speed),
            ("planner.max_yaw_rate", self.max_yaw_rate),
            ("planner.approach_commit_dist", self.approach_commit_dist),
            ("planner.swing_lead", self.swing_lead),
            ("planner.arm_reach", self.arm_reach),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be > 0"));
            }
        }
        for (name, v) in [
            ("planner.follow_through", self.follow_through),
            ("planner.recover_duration", self.recover_duration),
            ("planner.min_horizontal_speed", self.min_horizontal_speed),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be >= 0"));
            }
        }
        if !(self.swing_pitch.abs() < PI / 2.0) {
            return Err(Error::validation("planner.swing_pitch", "must be within (-pi/2, pi/2)"));
        }
        if !(self.target_region.min.x < self.target_region.max.x && self.target_region.min.y < self.target_region.max.y) {
            return Err(Error::validation("planner.target_region", "rectangle must be non-degenerate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptionPlan {
    pub t_hit: f64,
    pub p_hit: Vector3<f64>,
    pub v_hit: Vector3<f64>,
    pub base_des: BasePose2D,
    /// Unit swing direction in the base frame.
    pub d_swing: Vector3<f64>,
    pub mode: SwingMode,
    /// When the current mode was entered (s).
    pub mode_since: f64,
    pub valid: bool,
    pub created_at: f64,
}

/// Base pose that puts the nominal contact point `r_hit` on `p_hit`.
pub fn base_placement(p_hit: &Vector3<f64>, yaw_des: f64, r_hit: &Vector3<f64>) -> BasePose2D {
    let off = rot_z(yaw_des) * r_hit;
    BasePose2D::new(p_hit.x - off.x, p_hit.y - off.y, yaw_des)
}

/// Heading that faces the incoming ball; `prev` is kept for near-vertical
/// arrivals.
pub fn desired_yaw(v_hit: &Vector3<f64>, prev: f64, cfg: &PlannerConfig) -> f64 {
    if v_hit.xy().norm() < cfg.min_horizontal_speed {
        return prev;
    }
    wrap_angle((-v_hit.y).atan2(-v_hit.x))
}

/// Sends the ball back along its approach azimuth, pitched up by
/// `swing_pitch`. Degenerate arrivals swing straight ahead along `yaw`.
pub fn swing_direction(v_hit: &Vector3<f64>, yaw: f64, cfg: &PlannerConfig) -> Vector3<f64> {
    let h = -v_hit.xy();
    let n = h.norm();
    let dir = if n < cfg.min_horizontal_speed || n == 0.0 {
        Vector2::new(yaw.cos(), yaw.sin())
    } else {
        h / n
    };
    let (s, c) = cfg.swing_pitch.sin_cos();
    Vector3::new(c * dir.x, c * dir.y, s).normalize()
}

/// Reachability and timing tests.
pub fn feasible(cand: &InterceptCandidate, base_des: &BasePose2D, robot: &BasePose2D, now: f64, cfg: &PlannerConfig) -> bool {
    let slack = cand.t_hit - now - cfg.swing_lead;
    let travel = robot.distance_to(base_des) / cfg.max_base_speed;
    let turn = wrap_angle(base_des.yaw - robot.yaw).abs() / cfg.max_yaw_rate;
    let reach = (cand.p_hit - base_des.to_base(&cfg.shoulder)).norm();
    travel <= slack && turn <= slack && reach <= cfg.arm_reach
}

/// Builds a plan from a candidate. `valid` records the feasibility result.
pub fn build_plan(cand: &InterceptCandidate, robot: &BasePose2D, now: f64, cfg: &PlannerConfig) -> InterceptionPlan {
    let yaw = desired_yaw(&cand.v_hit, robot.yaw, cfg);
    let base_des = base_placement(&cand.p_hit, yaw, &cfg.r_hit);
    InterceptionPlan {
        t_hit: cand.t_hit,
        p_hit: cand.p_hit,
        v_hit: cand.v_hit,
        base_des,
        d_swing: swing_direction(&cand.v_hit, yaw, cfg),
        mode: SwingMode::Approach,
        mode_since: now,
        valid: feasible(cand, &base_des, robot, now, cfg),
        created_at: now,
    }
}

/// One planning cycle. Returns the active plan and the new fallback.
///
/// A committed swing is never replanned. Otherwise a feasible candidate
/// replaces both the active plan and the fallback; with no usable candidate
/// the fallback stays active until its hit time passes. The mode always
/// carries over from `prev`.
pub fn plan_cycle(
    cand: Option<&InterceptCandidate>,
    robot: &BasePose2D,
    prev: Option<&InterceptionPlan>,
    fallback: Option<&InterceptionPlan>,
    now: f64,
    cfg: &PlannerConfig,
) -> (Option<InterceptionPlan>, Option<InterceptionPlan>) {
    if let Some(p) = prev.filter(|p| p.mode == SwingMode::Swing) {
        return (Some(*p), fallback.copied());
    }
    let carry = |mut plan: InterceptionPlan| {
        if let Some(p) = prev {
            plan.mode = p.mode;
            plan.mode_since = p.mode_since;
        }
        plan
    };
    if let Some(c) = cand {
        let plan = build_plan(c, robot, now, cfg);
        if plan.valid {
            let plan = carry(plan);
            return (Some(plan), Some(plan));
        }
    }
    match fallback {
        Some(fb) if fb.t_hit > now => (Some(carry(*fb)), Some(*fb)),
        _ => (None, None),
    }
}

/// Swing phase transitions.
pub fn step_mode(plan: &InterceptionPlan, robot: &BasePose2D, now: f64, cfg: &PlannerConfig) -> SwingMode {
    match plan.mode {
        SwingMode::Approach => {
            if robot.distance_to(&plan.base_des) <= cfg.approach_commit_dist && plan.t_hit - now <= cfg.swing_lead {
                SwingMode::Swing
            } else {
                SwingMode::Approach
            }
        }
        SwingMode::Swing => {
            if now > plan.t_hit + cfg.follow_through {
                SwingMode::Recover
            } else {
                SwingMode::Swing
            }
        }
        SwingMode::Recover => {
            let fresh = plan.valid && plan.created_at > plan.mode_since;
            if now - plan.mode_since >= cfg.recover_duration || fresh {
                SwingMode::Approach
            } else {
                SwingMode::Recover
            }
        }
    }
}

/// [`step_mode`] applied to the plan, stamping `mode_since` on a change.
pub fn advance_mode(plan: &InterceptionPlan, robot: &BasePose2D, now: f64, cfg: &PlannerConfig) -> InterceptionPlan {
    let mode = step_mode(plan, robot, now, cfg);
    let mut out = *plan;
    if mode != plan.mode {
        out.mode = mode;
        out.mode_since = now;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Crossing;
    use proptest::prelude::*;

    fn cand(p: [f64; 3], v: [f64; 3], t_hit: f64) -> InterceptCandidate {
        InterceptCandidate {
            p_hit: Vector3::from(p),
            t_hit,
            v_hit: Vector3::from(v),
            p_land: None,
            confidence: 0.9,
            crossing: Crossing::Descending,
        }
    }

    #[test]
    fn placement_examples() {
        let r = Vector3::new(0.4, -0.3, 0.9);
        let b = base_placement(&Vector3::new(1.0, 0.0, 1.0), 0.0, &r);
        assert!((b.xy - Vector2::new(0.6, 0.3)).norm() < 1e-12);

        let b = base_placement(&Vector3::new(1.0, 2.0, 1.0), 1.3, &Vector3::zeros());
        assert_eq!(b.xy, Vector2::new(1.0, 2.0));

        let b = base_placement(&Vector3::new(1.0, 0.0, 1.0), PI / 2.0, &r);
        assert!((b.xy - Vector2::new(1.0 - 0.3, -0.4)).norm() < 1e-12);
    }

    #[test]
    fn yaw_examples() {
        let cfg = PlannerConfig::default();
        assert_eq!(desired_yaw(&Vector3::new(-5.0, 0.0, -3.0), 1.0, &cfg), 0.0);
        assert!((desired_yaw(&Vector3::new(0.0, -4.0, -1.0), 0.0, &cfg) - PI / 2.0).abs() < 1e-12);
        assert_eq!(desired_yaw(&Vector3::new(0.0, 0.0, -5.0), 0.7, &cfg), 0.7);
    }

    #[test]
    fn swing_examples() {
        let cfg = PlannerConfig::default();
        let p = 15f64.to_radians();
        let d = swing_direction(&Vector3::new(-5.0, 0.0, -3.0), 0.0, &cfg);
        assert!((d - Vector3::new(p.cos(), 0.0, p.sin())).norm() < 1e-12);
        let d = swing_direction(&Vector3::zeros(), 0.0, &cfg);
        assert!((d - Vector3::new(p.cos(), 0.0, p.sin())).norm() < 1e-12);
        let flat = PlannerConfig { swing_pitch: 0.0, ..cfg };
        assert_eq!(swing_direction(&Vector3::zeros(), 0.0, &flat), Vector3::x());
    }

    #[test]
    fn feasibility_examples() {
        let cfg = PlannerConfig::default();
        let c = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], 1.0);
        let base = base_placement(&c.p_hit, 0.0, &cfg.r_hit);
        assert!(feasible(&c, &base, &base, 0.0, &cfg));

        let slow = PlannerConfig { max_base_speed: 1.0, ..cfg };
        let far = BasePose2D::new(base.xy.x - 3.0, base.xy.y, 0.0);
        assert!(!feasible(&c, &base, &far, 0.0, &slow));

        let high = cand([1.0, 0.0, 2.9], [-5.0, 0.0, -2.0], 10.0);
        let base = base_placement(&high.p_hit, 0.0, &cfg.r_hit);
        assert!(!feasible(&high, &base, &base, 0.0, &cfg));
    }

    #[test]
    fn plan_cycle_examples() {
        let cfg = PlannerConfig::default();
        let c = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], 2.0);
        let robot = base_placement(&c.p_hit, 0.0, &cfg.r_hit);
        let (active, fb) = plan_cycle(Some(&c), &robot, None, None, 1.0, &cfg);
        assert!(active.unwrap().valid);
        assert_eq!(active, fb);

        let (active, fb2) = plan_cycle(None, &robot, active.as_ref(), fb.as_ref(), 1.5, &cfg);
        assert_eq!(active.unwrap().p_hit, c.p_hit);
        assert_eq!(fb2, fb);

        assert_eq!(plan_cycle(None, &robot, active.as_ref(), fb.as_ref(), 2.1, &cfg), (None, None));
    }

    #[test]
    fn swing_freezes_plan() {
        let cfg = PlannerConfig::default();
        let c = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], 2.0);
        let robot = base_placement(&c.p_hit, 0.0, &cfg.r_hit);
        let (active, fb) = plan_cycle(Some(&c), &robot, None, None, 1.0, &cfg);
        let swinging = InterceptionPlan { mode: SwingMode::Swing, ..active.unwrap() };
        let other = cand([1.2, 0.1, 0.9], [-5.0, 0.0, -2.0], 2.1);
        let (active, _) = plan_cycle(Some(&other), &robot, Some(&swinging), fb.as_ref(), 1.7, &cfg);
        assert_eq!(active.unwrap(), swinging);
    }

    #[test]
    fn mode_examples() {
        let cfg = PlannerConfig::default();
        let c = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], 2.0);
        let base = base_placement(&c.p_hit, 0.0, &cfg.r_hit);
        let plan = build_plan(&c, &base, 0.0, &cfg);
        let near = BasePose2D::new(base.xy.x + 0.05, base.xy.y, 0.0);
        assert_eq!(step_mode(&plan, &near, 2.0 - 0.35, &cfg), SwingMode::Swing);

        let far = BasePose2D::new(base.xy.x + 1.0, base.xy.y, 0.0);
        assert_eq!(step_mode(&plan, &far, 1.99, &cfg), SwingMode::Approach);

        let swing = InterceptionPlan { mode: SwingMode::Swing, ..plan };
        assert_eq!(step_mode(&swing, &near, 2.0 + cfg.follow_through + 1e-9, &cfg), SwingMode::Recover);
        assert_eq!(step_mode(&swing, &near, 2.0 + cfg.follow_through, &cfg), SwingMode::Swing);

        let rec = InterceptionPlan { mode: SwingMode::Recover, mode_since: 2.3, ..plan };
        assert_eq!(step_mode(&rec, &near, 2.5, &cfg), SwingMode::Recover);
        assert_eq!(step_mode(&rec, &near, 2.8, &cfg), SwingMode::Approach);
        let fresh = InterceptionPlan { created_at: 2.4, ..rec };
        assert_eq!(step_mode(&fresh, &near, 2.5, &cfg), SwingMode::Approach);
    }

    fn rotate_pose(b: &BasePose2D, th: f64) -> BasePose2D {
        let xy = crate::geometry::rotate2(&b.xy, th);
        BasePose2D::new(xy.x, xy.y, b.yaw + th)
    }

    proptest! {
        #[test]
        fn placement_inverts(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.0..2.0f64, yaw in -PI..PI,
                             rx in -1.0..1.0f64, ry in -1.0..1.0f64, rz in 0.0..1.5f64) {
            let p = Vector3::new(x, y, z);
            let r = Vector3::new(rx, ry, rz);
            let b = base_placement(&p, yaw, &r);
            let back = b.xy + (rot_z(b.yaw) * r).xy();
            prop_assert!((back - p.xy()).norm() < 1e-9);
        }

        #[test]
        fn planner_is_rotation_equivariant(th in -PI..PI, x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.5..1.5f64,
                                           vx in -8.0..8.0f64, vy in -8.0..8.0f64, vz in -5.0..5.0f64,
                                           rx in -2.0..2.0f64, ry in -2.0..2.0f64, ryaw in -PI..PI, lead in 0.0..2.0f64) {
            prop_assume!((vx * vx + vy * vy).sqrt() > 0.2);
            let cfg = PlannerConfig::default();
            let c = cand([x, y, z], [vx, vy, vz], lead);
            let robot = BasePose2D::new(rx, ry, ryaw);
            let plan = build_plan(&c, &robot, 0.0, &cfg);

            let rz = rot_z(th);
            let cr = InterceptCandidate { p_hit: rz * c.p_hit, v_hit: rz * c.v_hit, ..c };
            let rr = rotate_pose(&robot, th);
            let rot = build_plan(&cr, &rr, 0.0, &cfg);

            let expect = rotate_pose(&plan.base_des, th);
            prop_assert!((rot.base_des.xy - expect.xy).norm() < 1e-9);
            prop_assert!(wrap_angle(rot.base_des.yaw - expect.yaw).abs() < 1e-9);
            prop_assert!((rot.d_swing - rz * plan.d_swing).norm() < 1e-9);
            prop_assert!((rot.d_swing.norm() - 1.0).abs() < 1e-9);
            // Boundary cases can flip on rounding; only compare clear margins.
            let margin = |p: &InterceptionPlan, r: &BasePose2D| {
                let slack = lead - cfg.swing_lead;
                let travel = r.distance_to(&p.base_des) / cfg.max_base_speed;
                let turn = wrap_angle(p.base_des.yaw - r.yaw).abs() / cfg.max_yaw_rate;
                (slack - travel).abs().min((slack - turn).abs())
            };
            if margin(&plan, &robot) > 1e-9 {
                prop_assert_eq!(plan.valid, rot.valid);
            }
        }

        #[test]
        fn feasibility_is_monotone_in_time(lead in 0.0..3.0f64, extra in 0.0..3.0f64, dx in -3.0..3.0f64, dyaw in -PI..PI) {
            let cfg = PlannerConfig::default();
            let c = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], lead);
            let base = base_placement(&c.p_hit, 0.0, &cfg.r_hit);
            let robot = BasePose2D::new(base.xy.x + dx, base.xy.y, dyaw);
            let later = InterceptCandidate { t_hit: lead + extra, ..c };
            if feasible(&c, &base, &robot, 0.0, &cfg) {
                prop_assert!(feasible(&later, &base, &robot, 0.0, &cfg));
            }
        }

        #[test]
        fn committed_swing_keeps_hit_point(stream in prop::collection::vec((0.5..1.5f64, -0.5..0.5f64, 0.1..2.0f64, any::<bool>()), 1..40)) {
            let cfg = PlannerConfig::default();
            let first = cand([1.0, 0.0, 0.9], [-5.0, 0.0, -2.0], 10.0);
            let robot = base_placement(&first.p_hit, 0.0, &cfg.r_hit);
            let (active, mut fb) = plan_cycle(Some(&first), &robot, None, None, 0.0, &cfg);
            let mut active = Some(InterceptionPlan { mode: SwingMode::Swing, ..active.unwrap() });
            for (k, (x, y, lead, present)) in stream.into_iter().enumerate() {
                let now = 0.01 * (k + 1) as f64;
                let c = cand([x, y, 0.9], [-5.0, 0.0, -2.0], now + lead);
                let (a, f) = plan_cycle(present.then_some(&c), &robot, active.as_ref(), fb.as_ref(), now, &cfg);
                prop_assert_eq!(a.unwrap().p_hit, first.p_hit);
                active = a;
                fb = f;
            }
        }
    }
}
