//! Closed-loop simulation on a simulated multi-rate clock.
//!
//! Three logical loops (perception, planning, command) and the ground-truth
//! simulation tick run on one deterministic event timeline. Each loop reads
//! only the latest snapshot published by the loop upstream of it, so the run
//! is single-threaded but keeps the data flow of an asynchronous system. A
//! kinematic executor with first-order lags stands in for the whole-body
//! controller.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::camera::{lift, robust_depth, Extrinsics, Measurement3D};
use crate::ekf::{assimilate_detailed, to_estimate, Belief};
use crate::error::{Error, Result};
use crate::flightdyn::{advance_with_ground, step_count, GroundContact, ProjectileState};
use crate::geometry::{rot_z, slerp_shortest, wrap_angle, BasePose2D, Pose3D};
use crate::planner::{advance_mode, plan_cycle, InterceptionPlan, SwingMode};
use crate::predictor::{export_candidate, hit_point, landing_point, rollout, rollout_state, Crossing};
use crate::scenario::Scenario;
use crate::sensorsim::{filter_rendered, render_frame, SensorRig};
use crate::targets::{assemble, face_normal, mode_phase, TaskCommand};
use crate::track2d::{Track2D, TrackOutput, TrackState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopRates {
    pub perception_hz: f64,
    pub planning_hz: f64,
    pub command_hz: f64,
    /// Ground-truth integration step (s).
    pub sim_dt: f64,
}

impl Default for LoopRates {
    fn default() -> Self {
        Self {
            perception_hz: 100.0,
            planning_hz: 25.0,
            command_hz: 250.0,
            sim_dt: 0.001,
        }
    }
}

impl LoopRates {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rates.perception_hz", self.perception_hz),
            ("rates.planning_hz", self.planning_hz),
            ("rates.command_hz", self.command_hz),
            ("rates.sim_dt", self.sim_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be > 0"));
            }
        }
        Ok(())
    }

    /// Simulation tick rate. Snapped to the nearest integer when `1/sim_dt`
    /// is one up to rounding, so ticks coincide exactly with loop events.
    pub fn sim_hz(&self) -> f64 {
        let hz = 1.0 / self.sim_dt;
        let r = hz.round();
        if (hz - r).abs() <= 1e-9 * r {
            r
        } else {
            hz
        }
    }
}

/// Event sources, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopId {
    Sim,
    Perception,
    Planning,
    Command,
}

/// Number of ticks `k ≥ 0` with `k / hz < duration`.
fn tick_count(hz: f64, duration: f64) -> usize {
    let mut n = (duration * hz).ceil().max(0.0) as usize;
    while n > 0 && (n - 1) as f64 / hz >= duration {
        n -= 1;
    }
    while (n as f64) / hz < duration {
        n += 1;
    }
    n
}

/// Merged event timeline over `[0, duration)`. Tick `k` of a loop at rate
/// `hz` fires at `k / hz`; simultaneous events run sim, perception,
/// planning, command.
pub fn schedule(rates: &LoopRates, duration: f64) -> Result<Vec<(f64, LoopId)>> {
    rates.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::validation("duration", "must be > 0"));
    }
    let mut events = Vec::new();
    for (id, hz) in [
        (LoopId::Sim, rates.sim_hz()),
        (LoopId::Perception, rates.perception_hz),
        (LoopId::Planning, rates.planning_hz),
        (LoopId::Command, rates.command_hz),
    ] {
        let n = tick_count(hz, duration);
        events.extend((0..n).map(|k| (k as f64 / hz, id)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(events)
}

/// Executor dynamics limits. Acceleration limits are optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutorLimits {
    pub max_lin_accel: Option<f64>,
    pub max_yaw_accel: Option<f64>,
    pub height_tau: f64,
    pub wrist_tau: f64,
}

impl Default for ExecutorLimits {
    fn default() -> Self {
        Self {
            max_lin_accel: Some(6.0),
            max_yaw_accel: Some(12.0),
            height_tau: 0.2,
            wrist_tau: 0.08,
        }
    }
}

impl ExecutorLimits {
    pub fn validate(&self) -> Result<()> {
        if self.max_lin_accel.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::validation("executor.max_lin_accel", "must be > 0"));
        }
        if self.max_yaw_accel.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::validation("executor.max_yaw_accel", "must be > 0"));
        }
        if !(self.height_tau > 0.0 && self.wrist_tau > 0.0) {
            return Err(Error::validation("executor.wrist_tau", "time constants must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutorState {
    pub base: BasePose2D,
    /// World-frame planar velocity and yaw rate.
    pub base_vel: Vector3<f64>,
    pub height: f64,
    /// World-frame wrist poses.
    pub wrist_right: Pose3D,
    pub wrist_left: Pose3D,
    pub racket_normal: Vector3<f64>,
    pub t: f64,
}

impl ExecutorState {
    /// At rest at `base`, wrists already at the commanded local poses.
    pub fn at_rest(base: BasePose2D, cmd: &TaskCommand, t: f64) -> Self {
        let wrist_right = base.pose_to_base(&cmd.wrist_right);
        Self {
            base,
            base_vel: Vector3::zeros(),
            height: cmd.base_height,
            wrist_right,
            wrist_left: base.pose_to_base(&cmd.wrist_left),
            racket_normal: wrist_right.orientation * face_normal(),
            t,
        }
    }

    pub fn racket_center(&self) -> Vector3<f64> {
        self.wrist_right.position
    }
}

fn lag(current: &Pose3D, target: &Pose3D, alpha: f64) -> Pose3D {
    Pose3D::new(
        current.position + (target.position - current.position) * alpha,
        slerp_shortest(&current.orientation, &target.orientation, alpha),
    )
}

/// Advances the kinematic executor by `dt` under `cmd`.
pub fn executor_step(ex: &ExecutorState, cmd: &TaskCommand, dt: f64, limits: &ExecutorLimits) -> Result<ExecutorState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", format!("must be > 0 (got {dt})")));
    }
    let want = rot_z(ex.base.yaw) * Vector3::new(cmd.nav.vx, cmd.nav.vy, 0.0);
    let mut dv = want.xy() - ex.base_vel.xy();
    if let Some(a) = limits.max_lin_accel {
        let n = dv.norm();
        if n > a * dt {
            dv *= a * dt / n;
        }
    }
    let mut dw = cmd.nav.yaw_rate - ex.base_vel.z;
    if let Some(a) = limits.max_yaw_accel {
        dw = dw.clamp(-a * dt, a * dt);
    }
    let vel = Vector3::new(ex.base_vel.x + dv.x, ex.base_vel.y + dv.y, ex.base_vel.z + dw);
    let base = BasePose2D {
        xy: ex.base.xy + Vector2::new(vel.x, vel.y) * dt,
        yaw: wrap_angle(ex.base.yaw + vel.z * dt),
    };
    let height = ex.height + (cmd.base_height - ex.height) * (1.0 - (-dt / limits.height_tau).exp());
    let alpha = 1.0 - (-dt / limits.wrist_tau).exp();
    let wrist_right = lag(&ex.wrist_right, &base.pose_to_base(&cmd.wrist_right), alpha);
    let wrist_left = lag(&ex.wrist_left, &base.pose_to_base(&cmd.wrist_left), alpha);
    Ok(ExecutorState {
        base,
        base_vel: vel,
        height,
        wrist_right,
        wrist_left,
        racket_normal: wrist_right.orientation * face_normal(),
        t: ex.t + dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactConfig {
    pub racket_radius: f64,
    pub e_racket: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            racket_radius: 0.15,
            e_racket: 0.9,
        }
    }
}

impl ContactConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.racket_radius > 0.0) {
            return Err(Error::validation("contact.racket_radius", "must be > 0"));
        }
        if !(self.e_racket > 0.0 && self.e_racket <= 1.0) {
            return Err(Error::validation("contact.e_racket", "must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitEvent {
    pub t: f64,
    pub distance: f64,
    /// Ball velocity right after the hit.
    pub v_out: Vector3<f64>,
}

/// Racket–ball proximity test. Fires only while swinging.
pub fn contact_check(ball: &ProjectileState, ex: &ExecutorState, plan: Option<&InterceptionPlan>, cfg: &ContactConfig) -> Option<HitEvent> {
    let plan = plan.filter(|p| p.mode == SwingMode::Swing)?;
    let distance = (ball.p - ex.racket_center()).norm();
    (distance <= cfg.racket_radius).then(|| HitEvent {
        t: ball.t,
        distance,
        v_out: plan.d_swing * (ball.v.norm() * cfg.e_racket),
    })
}

/// Uniform launch-state ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Launcher {
    pub position_min: Vector3<f64>,
    pub position_max: Vector3<f64>,
    pub velocity_min: Vector3<f64>,
    pub velocity_max: Vector3<f64>,
}

impl Default for Launcher {
    fn default() -> Self {
        Self {
            position_min: Vector3::new(5.5, -0.45, 1.0),
            position_max: Vector3::new(5.9, -0.15, 1.3),
            velocity_min: Vector3::new(-5.7, -0.1, 4.7),
            velocity_max: Vector3::new(-5.3, 0.1, 5.1),
        }
    }
}

impl Launcher {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.position_min[i] <= self.position_max[i]) {
                return Err(Error::validation("launcher.position_min", "must not exceed position_max"));
            }
            if !(self.velocity_min[i] <= self.velocity_max[i]) {
                return Err(Error::validation("launcher.velocity_min", "must not exceed velocity_max"));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ProjectileState {
        let mut draw = |lo: &Vector3<f64>, hi: &Vector3<f64>| {
            Vector3::from_fn(|i, _| if lo[i] < hi[i] { rng.random_range(lo[i]..hi[i]) } else { lo[i] })
        };
        let p = draw(&self.position_min, &self.position_max);
        let v = draw(&self.velocity_min, &self.velocity_max);
        ProjectileState::new(p, v, 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopCounts {
    pub sim: usize,
    pub perception: usize,
    pub planning: usize,
    pub command: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub hit: bool,
    pub returned: bool,
    pub t_contact: Option<f64>,
    /// Closest racket–ball distance while swinging (m).
    pub miss_distance: Option<f64>,
    /// `(time to impact, hit-point error)` at each planning tick before the
    /// true hit.
    pub prediction_error_series: Vec<(f64, f64)>,
    pub final_pred_error: Option<f64>,
    pub launch: ProjectileState,
    /// Time and point where the unperturbed flight crosses the hit plane.
    pub true_hit: Option<(f64, Vector3<f64>)>,
    pub landing: Option<Vector3<f64>>,
    pub plans_exported: usize,
    /// Oldest plan snapshot consumed by the command loop (s).
    pub max_plan_age: f64,
    pub events: LoopCounts,
    /// SHA-256 of the JSONL trace.
    pub trace_digest: String,
    #[serde(skip)]
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialOptions {
    /// Keep the JSONL lines (the digest is always computed).
    pub trace: bool,
    /// Hold the robot still; perception and planning still run.
    pub freeze_executor: bool,
}

struct Tracer {
    hasher: Sha256,
    keep: bool,
    lines: Vec<String>,
}

impl Tracer {
    fn new(keep: bool) -> Self {
        Self { hasher: Sha256::new(), keep, lines: Vec::new() }
    }

    fn emit(&mut self, t: f64, id: LoopId, kind: &str, payload: serde_json::Value) {
        let line = json!({ "t": t, "loop": id, "kind": kind, "payload": payload }).to_string();
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if self.keep {
            self.lines.push(line);
        }
    }

    fn finish(self) -> (String, Vec<String>) {
        (hex::encode(self.hasher.finalize()), self.lines)
    }
}

/// Perception-side estimator lifecycle.
#[allow(clippy::large_enum_variant)] // one instance per trial
enum Estimator {
    Idle,
    /// One lifted point, waiting for a second to difference.
    Primed(Measurement3D),
    Running { belief: Belief, rejects: u32 },
}

/// Consecutive gate rejections that trigger a restart from the latest point.
const MAX_CONSECUTIVE_REJECTS: u32 = 8;
/// Implied speed above which two points cannot be the same ball (m/s).
const MAX_INIT_SPEED: f64 = 40.0;
/// A primed point older than this is dropped (s).
const PRIME_TIMEOUT: f64 = 0.1;

fn camera_pose(robot: &BasePose2D, mount: &Extrinsics) -> Extrinsics {
    let r = rot_z(robot.yaw);
    Extrinsics {
        rotation: r * mount.rotation,
        translation: r * mount.translation + Vector3::new(robot.xy.x, robot.xy.y, 0.0),
    }
}

/// First hit-plane crossing of the undisturbed trajectory, at `sim_dt`.
pub fn true_hit_point(launch: &ProjectileState, sc: &Scenario) -> Option<(f64, Vector3<f64>)> {
    let n = step_count(sc.duration, sc.rates.sim_dt);
    let r = rollout_state(launch, sc.rates.sim_dt, n, sc.gates.ground_z, &sc.drag, &sc.bounce);
    hit_point(&r, sc.gates.z0).map(|h| (h.t, h.p))
}

fn sensor_rng(seed: u64, noise_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ noise_seed);
    rng.set_stream(1);
    rng
}

/// Runs one seeded trial.
pub fn run_trial(sc: &Scenario, seed: u64) -> Result<TrialResult> {
    run_trial_with(sc, seed, &TrialOptions::default())
}

pub fn run_trial_with(sc: &Scenario, seed: u64, opts: &TrialOptions) -> Result<TrialResult> {
    sc.validate()?;
    let launch = sc.launcher.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut srng = sensor_rng(seed, sc.noise.seed);
    let true_hit = true_hit_point(&launch, sc);
    let events = schedule(&sc.rates, sc.duration)?;
    let dt = sc.rates.sim_dt;
    let mut tr = Tracer::new(opts.trace);
    tr.emit(0.0, LoopId::Sim, "launch", json!({ "seed": seed, "p": launch.p, "v": launch.v, "true_hit": true_hit }));

    let mut ball = launch;
    let mut head = crate::geometry::Pose3D::from_position(sc.targets.head_origin);
    let mut cmd = assemble(None, &sc.robot_start, None, 0.0, &head, &sc.templates, &sc.targets, &sc.planner)?;
    let mut ex = ExecutorState::at_rest(sc.robot_start, &cmd, 0.0);

    let mut track = Track2D::empty();
    let mut est = Estimator::Idle;
    let mut active: Option<InterceptionPlan> = None;
    let mut fallback: Option<InterceptionPlan> = None;
    let mut published: Option<(Option<InterceptionPlan>, f64)> = None;
    let mut cmd_plan: Option<InterceptionPlan> = None;

    let mut counts = LoopCounts::default();
    let mut hit: Option<HitEvent> = None;
    let mut landing = None;
    let mut miss: Option<f64> = None;
    let mut series = Vec::new();
    let mut plans_exported = 0;
    let mut max_age: f64 = 0.0;

    for (t, id) in events {
        match id {
            LoopId::Sim => {
                counts.sim += 1;
                if t == 0.0 {
                    continue;
                }
                let (next, contact) = advance_with_ground(&ball, dt, &sc.drag, &sc.bounce, sc.gates.ground_z);
                ball = ProjectileState { t, ..next };
                if contact == GroundContact::Bounced {
                    tr.emit(t, id, "bounce", json!({ "p": ball.p, "v": ball.v }));
                }
                if !opts.freeze_executor {
                    ex = executor_step(&ex, &cmd, dt, &sc.executor)?;
                    ex.t = t;
                }
                if let Some(p) = cmd_plan.filter(|p| p.mode == SwingMode::Swing) {
                    let d = (ball.p - ex.racket_center()).norm();
                    miss = Some(miss.map_or(d, |m| m.min(d)));
                    if hit.is_none() {
                        if let Some(h) = contact_check(&ball, &ex, Some(&p), &sc.contact) {
                            ball.v = h.v_out;
                            let n = step_count(sc.duration, 0.005);
                            let r = rollout_state(&ball, 0.005, n, sc.gates.ground_z, &sc.drag, &sc.bounce);
                            landing = landing_point(&r, sc.gates.ground_z);
                            tr.emit(t, id, "contact", json!({ "distance": h.distance, "v_out": h.v_out, "landing": landing }));
                            hit = Some(h);
                        }
                    }
                }
                if !sc.bounds.contains(&ball.p) {
                    tr.emit(t, id, "exit", json!({ "p": ball.p }));
                    break;
                }
            }
            LoopId::Perception => {
                counts.perception += 1;
                let ext = camera_pose(&ex.base, &sc.camera.mount);
                let rig = SensorRig {
                    intrinsics: &sc.camera.intrinsics,
                    extrinsics: &ext,
                    noise: &sc.noise,
                    sigma_model: &sc.camera.sigma,
                    depth: &sc.camera.depth,
                    scene: &sc.scene,
                };
                let frame = render_frame(&ball, &rig, &mut srng);
                let kept = filter_rendered(&frame, &sc.filter);
                let dets: Vec<_> = kept.iter().map(|r| r.detection).collect();
                let (next_track, out) = track.step(&dets, t, &sc.assoc)?;
                track = next_track;

                let meas = match out {
                    TrackOutput::Measured { center, size, index } => {
                        match robust_depth(&kept[index].depth_patch, &sc.camera.depth)? {
                            Some(d) => {
                                let side = (size.x * size.y).sqrt();
                                let sig = sc.camera.sigma.sigmas(side, d);
                                lift(center.x, center.y, d, t, &sc.camera.intrinsics, &ext, &sig).ok()
                            }
                            None => None,
                        }
                    }
                    _ => None,
                };

                if track.state == TrackState::Empty {
                    est = Estimator::Idle;
                }
                let mut gate_info = None;
                est = match (est, meas) {
                    (Estimator::Idle, Some(m)) => Estimator::Primed(m),
                    (Estimator::Idle, None) => Estimator::Idle,
                    (Estimator::Primed(m0), Some(m1)) => {
                        let speed = (m1.z - m0.z).norm() / (m1.t - m0.t);
                        if speed > MAX_INIT_SPEED {
                            Estimator::Primed(m1)
                        } else {
                            Estimator::Running { belief: Belief::from_measurements(&m0, &m1, &sc.ekf)?, rejects: 0 }
                        }
                    }
                    (Estimator::Primed(m0), None) => {
                        if t - m0.t > PRIME_TIMEOUT {
                            Estimator::Idle
                        } else {
                            Estimator::Primed(m0)
                        }
                    }
                    (Estimator::Running { belief, rejects }, m) => match assimilate_detailed(&belief, m.as_ref(), t, &sc.ekf) {
                        Ok(rep) => {
                            gate_info = rep.gate.map(|g| (g.d_squared, g.accept));
                            match rep.gate {
                                Some(g) if !g.accept => {
                                    if rejects + 1 >= MAX_CONSECUTIVE_REJECTS {
                                        Estimator::Primed(m.expect("gated measurement"))
                                    } else {
                                        Estimator::Running { belief: rep.belief, rejects: rejects + 1 }
                                    }
                                }
                                Some(_) => Estimator::Running { belief: rep.belief, rejects: 0 },
                                None => Estimator::Running { belief: rep.belief, rejects },
                            }
                        }
                        Err(e) => {
                            tr.emit(t, id, "estimator_reset", json!({ "error": e.to_string() }));
                            Estimator::Idle
                        }
                    },
                };
                let (bp, bv, conf) = match &est {
                    Estimator::Running { belief, .. } => (Some(belief.position()), Some(belief.velocity()), belief.confidence),
                    _ => (None, None, 0.0),
                };
                tr.emit(
                    t,
                    id,
                    "frame",
                    json!({
                        "raw": frame.len(),
                        "kept": kept.len(),
                        "track": track.state,
                        "measurement": meas.map(|m| m.z),
                        "gate": gate_info,
                        "p": bp,
                        "v": bv,
                        "confidence": conf,
                    }),
                );
            }
            LoopId::Planning => {
                counts.planning += 1;
                let belief = match &est {
                    Estimator::Running { belief, .. } => Some(*belief),
                    _ => None,
                };
                let cand = belief.map(|b| export_candidate(&b, &sc.gates, &sc.ekf.drag, &sc.ekf.bounce, t));

                if let (Some(b), Some((th, ph)), None) = (belief, true_hit, hit) {
                    if t < th {
                        let r = rollout(&to_estimate(&b), &sc.gates, &sc.ekf.drag, &sc.ekf.bounce);
                        if let Some(hp) = hit_point(&r, sc.gates.z0) {
                            series.push((th - t, (hp.p - ph).norm()));
                        }
                    }
                }

                let prev = active;
                let valid_cand = cand.and_then(|c| c.ok());
                if valid_cand.is_some() {
                    plans_exported += 1;
                }
                let (next, fb) = plan_cycle(valid_cand.as_ref(), &ex.base, prev.as_ref(), fallback.as_ref(), t, &sc.planner);
                let next = next.map(|p| advance_mode(&p, &ex.base, t, &sc.planner));
                let cause = match (&prev, &next) {
                    (_, None) if prev.is_some() => "expired",
                    (_, None) => "idle",
                    (_, Some(p)) if p.created_at == t => "candidate",
                    (Some(q), Some(p)) if q.mode == SwingMode::Swing && p.p_hit == q.p_hit => "committed",
                    (_, Some(_)) => "fallback",
                };
                let transition = match (&prev, &next) {
                    (Some(q), Some(p)) if q.mode != p.mode => Some(format!("{:?}->{:?}", q.mode, p.mode)),
                    (None, Some(p)) => Some(format!("none->{:?}", p.mode)),
                    _ => None,
                };
                tr.emit(
                    t,
                    id,
                    "plan",
                    json!({
                        "candidate": match cand {
                            Some(Ok(c)) => json!({ "p_hit": c.p_hit, "t_hit": c.t_hit, "rising": c.crossing == Crossing::RisingAfterBounce }),
                            Some(Err(s)) => json!({ "suppressed": s.gate_name() }),
                            None => serde_json::Value::Null,
                        },
                        "cause": cause,
                        "transition": transition,
                        "plan": next,
                    }),
                );
                active = next;
                fallback = fb;
                published = Some((next, t));
            }
            LoopId::Command => {
                counts.command += 1;
                let plan_t = published.map(|(_, at)| at);
                let plan = match published {
                    Some((p, at)) => {
                        let age = t - at;
                        max_age = max_age.max(age);
                        debug_assert!(age <= 1.0 / sc.rates.planning_hz + 1.0 / sc.rates.command_hz + 1e-9);
                        p
                    }
                    None => None,
                };
                let ball_p = match &est {
                    Estimator::Running { belief, .. } => Some(belief.position()),
                    _ => None,
                };
                let phase = plan.map_or(0.0, |p| mode_phase(&p, &ex.base, t + sc.targets.phase_lead, &sc.targets, &sc.planner));
                cmd = assemble(plan.as_ref(), &ex.base, ball_p.as_ref(), phase, &head, &sc.templates, &sc.targets, &sc.planner)?;
                head = cmd.head;
                cmd_plan = plan;
                tr.emit(
                    t,
                    id,
                    "command",
                    json!({
                        "cmd": cmd,
                        "mode": plan.map(|p| p.mode),
                        "phase": phase,
                        "plan_t": plan_t,
                        "base": ex.base,
                        "racket": ex.racket_center(),
                        "ball": ball.p,
                    }),
                );
            }
        }
    }

    let returned = hit.is_some() && landing.is_some_and(|p: Vector3<f64>| sc.planner.target_region.contains(&p.xy()));
    tr.emit(
        ball.t,
        LoopId::Sim,
        "result",
        json!({ "hit": hit.is_some(), "returned": returned, "miss_distance": miss }),
    );
    let (trace_digest, trace) = tr.finish();
    Ok(TrialResult {
        seed,
        hit: hit.is_some(),
        returned,
        t_contact: hit.map(|h| h.t),
        miss_distance: miss,
        final_pred_error: series.last().map(|&(_, e)| e),
        prediction_error_series: series,
        launch,
        true_hit,
        landing,
        plans_exported,
        max_plan_age: max_age,
        events: counts,
        trace_digest,
        trace,
    })
}

/// Median of the finite values, `None` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_trials: usize,
    pub base_seed: u64,
    pub hit_rate: f64,
    pub return_rate: f64,
    pub median_final_pred_error: Option<f64>,
    pub median_miss_distance: Option<f64>,
    /// SHA-256 over the per-trial trace digests, in seed order.
    pub trace_digest: String,
    #[serde(skip)]
    pub trials: Vec<TrialResult>,
}

pub const CSV_HEADER: &str = "seed,hit,returned,t_contact,miss_distance,final_pred_error";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BatchSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed,
                r.hit,
                r.returned,
                opt(r.t_contact),
                opt(r.miss_distance),
                opt(r.final_pred_error)
            ));
        }
        out
    }
}

/// Runs seeds `base_seed .. base_seed + n` and aggregates.
pub fn run_batch(sc: &Scenario, n: usize, base_seed: u64, opts: &TrialOptions) -> Result<BatchSummary> {
    if n == 0 {
        return Err(Error::validation("trials", "must be >= 1"));
    }
    let trials = (0..n as u64)
        .map(|i| run_trial_with(sc, base_seed.wrapping_add(i), opts))
        .collect::<Result<Vec<_>>>()?;
    let mut h = Sha256::new();
    for r in &trials {
        h.update(r.trace_digest.as_bytes());
    }
    let rate = |f: fn(&TrialResult) -> bool| trials.iter().filter(|r| f(r)).count() as f64 / n as f64;
    Ok(BatchSummary {
        n_trials: n,
        base_seed,
        hit_rate: rate(|r| r.hit),
        return_rate: rate(|r| r.returned),
        median_final_pred_error: median(trials.iter().filter_map(|r| r.final_pred_error)),
        median_miss_distance: median(trials.iter().filter_map(|r| r.miss_distance)),
        trace_digest: hex::encode(h.finalize()),
        trials,
    })
}
