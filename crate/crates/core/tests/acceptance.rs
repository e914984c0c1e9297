//! Acceptance criteria. Runs as a plain binary (no libtest harness) and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{Matrix3, Matrix6, SVector, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volley_core::camera::{self, Extrinsics, Intrinsics, Measurement3D};
use volley_core::ekf::{self, Belief, EkfParams};
use volley_core::flightdyn::{self, BounceParams, DragParams, ProjectileState};
use volley_core::geometry::{rot_z, wrap_angle, BasePose2D, Pose3D};
use volley_core::harness::{run_batch, TrialOptions};
use volley_core::planner::{self, advance_mode, base_placement, build_plan, feasible, plan_cycle, PlannerConfig, SwingMode};
use volley_core::predictor::{rollout_state, Crossing, InterceptCandidate};
use volley_core::sensorsim::Detection2D;
use volley_core::targets::{assemble, SwingTemplates, TargetConfig};
use volley_core::track2d::{AssocGates, Track2D};
use volley_core::Scenario;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Name, check, runtime budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let n = 1000;
    let (mut worst_h, mut worst_f) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let k = Intrinsics {
            fx: rng.random_range(200.0..1000.0),
            fy: rng.random_range(200.0..1000.0),
            cx: rng.random_range(100.0..500.0),
            cy: rng.random_range(100.0..400.0),
            ..Intrinsics::default()
        };
        let ext = Extrinsics {
            rotation: random_rotation(&mut rng),
            translation: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)),
        };
        let x = Vector3::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), rng.random_range(0.3..20.0));
        let j = camera::measurement_jacobian(x[0], x[1], x[2], &k, &ext).unwrap();
        let fd = central_diff(|y: &Vector3<f64>| camera::cam_to_base(&camera::back_project(y[0], y[1], y[2], &k).unwrap(), &ext), &x);
        worst_h = worst_h.max(rel_err(&j, &fd));

        let drag = DragParams {
            g: 9.81,
            k1: rng.random_range(0.0..0.2),
            k2: rng.random_range(0.0..0.05),
        };
        let dt = rng.random_range(1e-3..0.05);
        let v = loop {
            let v = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            if v.norm() > 0.5 {
                break v;
            }
        };
        let s = Vector6::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..3.0), v.x, v.y, v.z);
        let f = ekf::process_jacobian(&v, dt, &drag);
        let flow = |s: &SVector<f64, 6>| {
            let (p, v) = flight_step(&s.fixed_rows::<3>(0).into(), &s.fixed_rows::<3>(3).into(), dt, drag.g, drag.k1, drag.k2);
            Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z)
        };
        worst_f = worst_f.max(rel_err(&f, &central_diff(flow, &s)));
    }
    outcome(
        worst_h < 1e-6 && worst_f < 1e-6,
        format!("{n} instances each; measurement max rel err {worst_h:.2e}, process {worst_f:.2e} (tol 1e-6)"),
    )
}

fn parabola() -> Outcome {
    let g = 9.81;
    let drag = DragParams::drag_free(g);
    let bounce = BounceParams::default();
    let p0 = Vector3::new(6.0, -0.3, 1.2);
    let v0 = Vector3::new(-5.5, 0.2, 4.8);
    let init = ProjectileState::new(p0, v0, 0.0);
    let dt = 1e-3;
    // Ground far below so the whole 2 s is free flight.
    let sim = flightdyn::simulate(&init, dt, 2.0, &drag, &bounce, -1e3).unwrap();
    let e_sim = sim.iter().map(|s| (s.p - ballistic(&p0, &v0, g, s.t)).norm()).fold(0.0, f64::max);
    let r = rollout_state(&init, dt, 2000, -1e3, &drag, &bounce);
    let e_roll = r.samples.iter().map(|s| (s.p - ballistic(&p0, &v0, g, s.tau)).norm()).fold(0.0, f64::max);

    let (h, e) = (1.0, bounce.e);
    let drop = ProjectileState::new(Vector3::new(0.0, 0.0, h), Vector3::zeros(), 0.0);
    let traj = flightdyn::simulate(&drop, dt, 2.0, &drag, &bounce, 0.0).unwrap();
    let first = traj.iter().position(|s| s.v.z > 0.0).unwrap();
    let second = traj[first..].iter().position(|s| s.v.z <= 0.0 && s.p.z <= 1e-12).map_or(traj.len(), |i| first + i);
    let apex = traj[first..second].iter().map(|s| s.p.z).fold(0.0, f64::max);
    let e_apex = (apex - bounce_apex(h, e)).abs();
    outcome(
        e_sim < 1e-6 && e_roll < 1e-6 && e_apex < 1e-3,
        format!("simulate {e_sim:.2e} m, rollout {e_roll:.2e} m (tol 1e-6); apex {apex:.5} vs e²h {:.5} (err {e_apex:.2e}, tol 1e-3)", bounce_apex(h, e)),
    )
}

fn nees() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let params = EkfParams {
        tau: f64::INFINITY,
        ..EkfParams::default()
    };
    let d = params.drag;
    let (dt, steps, runs) = (0.01, 80, 200);
    let r_sd = 0.01;
    let r = Matrix3::identity() * (r_sd * r_sd);
    let p0: Matrix6<f64> = Matrix6::from_diagonal(&Vector6::new(1e-4, 1e-4, 1e-4, 1.0, 1.0, 1.0));
    let q_sd: Vec<f64> = params.process_noise.iter().map(|q| (q * dt).sqrt()).collect();
    let mut run_means = Vec::with_capacity(runs);
    let mut unhealthy = 0;
    for _ in 0..runs {
        let mean0 = Vector6::new(5.0, 0.0, 2.0, -6.0, 0.3, 4.0);
        let mut truth = mean0 + Vector6::from_fn(|i, _| p0[(i, i)].sqrt() * normal(&mut rng));
        let mut b = Belief::new(mean0, p0, 0.0);
        let mut acc = 0.0;
        for k in 1..=steps {
            let (p, v) = flight_step(&truth.fixed_rows::<3>(0).into(), &truth.fixed_rows::<3>(3).into(), dt, d.g, d.k1, d.k2);
            let w = Vector6::from_fn(|i, _| q_sd[i] * normal(&mut rng));
            truth = Vector6::new(p.x, p.y, p.z, v.x, v.y, v.z) + w;
            let z = truth.fixed_rows::<3>(0) + gaussian3(&mut rng, r_sd);
            let t = k as f64 * dt;
            b = ekf::assimilate(&b, Some(&Measurement3D { z, cov: r, t }), t, &params).unwrap();
            if !b.is_healthy() {
                unhealthy += 1;
            }
            let e = truth - b.x;
            acc += e.dot(&b.p.cholesky().map_or(e * f64::INFINITY, |c| c.solve(&e)));
        }
        run_means.push(acc / steps as f64);
    }
    let avg = run_means.iter().sum::<f64>() / runs as f64;
    outcome(
        unhealthy == 0 && avg >= NEES_BAND.0 && avg <= NEES_BAND.1,
        format!("{runs} runs x {steps} steps: mean NEES {avg:.3} (band [{}, {}]); {unhealthy} unhealthy posteriors", NEES_BAND.0, NEES_BAND.1),
    )
}

fn gating() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let params = EkfParams::default();
    let d = params.drag;
    let (dt, steps, runs) = (0.01, 90, 100);
    let r_sd = 0.01;
    let r = Matrix3::identity() * (r_sd * r_sd);
    let (mut clean_err, mut dirty_err) = (Vec::new(), Vec::new());
    let (mut clean_final, mut dirty_final) = (Vec::new(), Vec::new());
    let (mut injected, mut rejected) = (0, 0);
    for _ in 0..runs {
        let mut p = Vector3::new(rng.random_range(5.5..6.5), rng.random_range(-0.5..0.5), rng.random_range(1.0..1.3));
        let mut v = Vector3::new(rng.random_range(-6.0..-5.0), rng.random_range(-0.3..0.3), rng.random_range(4.5..5.0));
        let mut truth = Vec::new();
        let mut meas = Vec::new();
        for k in 0..steps {
            if k > 0 {
                (p, v) = flight_step(&p, &v, dt, d.g, d.k1, d.k2);
            }
            truth.push(p);
            meas.push(Measurement3D { z: p + gaussian3(&mut rng, r_sd), cov: r, t: k as f64 * dt });
        }
        let outlier: Vec<bool> = (0..steps).map(|k| k >= 2 && rng.random::<f64>() < 0.05).collect();
        let dirty: Vec<Measurement3D> = meas
            .iter()
            .zip(&outlier)
            .map(|(m, &o)| {
                if !o {
                    return *m;
                }
                let dir = gaussian3(&mut rng, 1.0).normalize();
                Measurement3D { z: m.z + dir * 5.0, ..*m }
            })
            .collect();

        for (stream, errs, fin, count) in [(&meas, &mut clean_err, &mut clean_final, false), (&dirty, &mut dirty_err, &mut dirty_final, true)] {
            let mut b = Belief::from_measurements(&stream[0], &stream[1], &params).unwrap();
            for k in 2..steps {
                let rep = ekf::assimilate_detailed(&b, Some(&stream[k]), stream[k].t, &params).unwrap();
                if count && outlier[k] {
                    injected += 1;
                    if !rep.gate.unwrap().accept {
                        rejected += 1;
                    }
                }
                b = rep.belief;
                if k >= 10 {
                    errs.push((b.position() - truth[k]).norm());
                }
            }
            fin.push((b.position() - truth[steps - 1]).norm());
        }
    }
    let (rc, rd) = (rmse(&clean_err), rmse(&dirty_err));
    let (fc, fd) = (rmse(&clean_final), rmse(&dirty_final));
    let degrade = rd / rc - 1.0;
    outcome(
        injected > 0 && rejected == injected && degrade < 0.10,
        format!(
            "{rejected}/{injected} outliers rejected; position RMSE clean {:.2} mm, with outliers {:.2} mm ({:+.1}%); final-step RMSE {:.2} / {:.2} mm",
            rc * 1e3,
            rd * 1e3,
            degrade * 100.0,
            fc * 1e3,
            fd * 1e3
        ),
    )
}

/// Error of the sample whose time-to-impact is nearest `tti`, if within
/// half a planning period.
fn error_near(series: &[(f64, f64)], tti: f64) -> Option<f64> {
    series
        .iter()
        .min_by(|a, b| (a.0 - tti).abs().total_cmp(&(b.0 - tti).abs()))
        .filter(|s| (s.0 - tti).abs() <= 0.021)
        .map(|s| s.1)
}

fn prediction() -> Outcome {
    let sc = Scenario::default();
    let batch = run_batch(&sc, 100, 1, &TrialOptions::default()).unwrap();
    let late: Vec<f64> = batch
        .trials
        .iter()
        .flat_map(|t| t.prediction_error_series.iter().filter(|s| s.0 <= 0.3).map(|s| s.1))
        .collect();
    let at03 = median(batch.trials.iter().filter_map(|t| error_near(&t.prediction_error_series, 0.3)).collect());
    let at10 = median(batch.trials.iter().filter_map(|t| error_near(&t.prediction_error_series, 1.0)).collect());
    let med_late = median(late.clone());
    let pass = matches!((med_late, at03, at10), (Some(m), Some(a), Some(b)) if m < 0.05 && a < b);
    outcome(
        pass,
        format!(
            "100 trials, {} samples with tti <= 0.3 s: median {:.4} m (tol 0.05); median at 0.3 s {:.4} m vs at 1.0 s {:.4} m",
            late.len(),
            med_late.unwrap_or(f64::NAN),
            at03.unwrap_or(f64::NAN),
            at10.unwrap_or(f64::NAN)
        ),
    )
}

fn rotate_pose(b: &BasePose2D, th: f64) -> BasePose2D {
    let xy = rot_z(th) * Vector3::new(b.xy.x, b.xy.y, 0.0);
    BasePose2D::new(xy.x, xy.y, b.yaw + th)
}

fn pose_gap(a: &Pose3D, b: &Pose3D) -> f64 {
    let (qa, qb) = (a.orientation.quaternion(), b.orientation.quaternion());
    (a.position - b.position).norm().max((qa - qb).norm().min((qa + qb).norm()))
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let pcfg = PlannerConfig::default();
    let (tcfg, templates) = (TargetConfig::default(), SwingTemplates::default());
    let n = 5000;
    let (mut e_inv, mut e_plan, mut e_cmd) = (0.0f64, 0.0f64, 0.0f64);
    let mut feas_flips = 0;
    for i in 0..n {
        let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.3..2.0));
        let yaw = rng.random_range(-PI..PI);
        let off = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5));
        let b = base_placement(&p, yaw, &off);
        // Independent inverse: carry the offset by the placed heading.
        let c = b.yaw.cos();
        let s = b.yaw.sin();
        let back = b.xy + Vector2::new(c * off.x - s * off.y, s * off.x + c * off.y);
        e_inv = e_inv.max((back - p.xy()).norm());

        let v = loop {
            let v = Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-5.0..5.0));
            if v.xy().norm() > 0.2 {
                break v;
            }
        };
        let now = 0.0;
        let cand = InterceptCandidate {
            p_hit: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..1.5)),
            t_hit: rng.random_range(0.0..2.0),
            v_hit: v,
            p_land: None,
            confidence: 1.0,
            crossing: Crossing::Descending,
        };
        let robot = BasePose2D::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-PI..PI));
        let th = rng.random_range(-PI..PI);
        let rz = rot_z(th);
        let cand_r = InterceptCandidate { p_hit: rz * cand.p_hit, v_hit: rz * cand.v_hit, ..cand };
        let robot_r = rotate_pose(&robot, th);
        let mut plan = build_plan(&cand, &robot, now, &pcfg);
        let mut plan_r = build_plan(&cand_r, &robot_r, now, &pcfg);
        let expect = rotate_pose(&plan.base_des, th);
        e_plan = e_plan
            .max((plan_r.base_des.xy - expect.xy).norm())
            .max(wrap_angle(plan_r.base_des.yaw - expect.yaw).abs())
            .max((plan_r.d_swing - rz * plan.d_swing).norm());
        if feasible(&cand, &plan.base_des, &robot, now, &pcfg) != feasible(&cand_r, &plan_r.base_des, &robot_r, now, &pcfg) {
            // Only a flip on a knife edge is acceptable.
            let slack = cand.t_hit - now - pcfg.swing_lead;
            let travel = robot.distance_to(&plan.base_des) / pcfg.max_base_speed;
            let turn = wrap_angle(plan.base_des.yaw - robot.yaw).abs() / pcfg.max_yaw_rate;
            let reach = (cand.p_hit - plan.base_des.to_base(&pcfg.shoulder)).norm() - pcfg.arm_reach;
            let margin = (slack - travel).abs().min((slack - turn).abs()).min(reach.abs());
            if margin > 1e-9 {
                feas_flips += 1;
            }
        }

        // Commands live in the robot's heading frame, so a common rotation
        // of the world leaves them unchanged.
        let mode = [SwingMode::Approach, SwingMode::Swing, SwingMode::Recover][i % 3];
        plan.mode = mode;
        plan_r.mode = mode;
        let phase = rng.random_range(0.0..1.0);
        let ball = Vector3::new(rng.random_range(-3.0..6.0), rng.random_range(-3.0..3.0), rng.random_range(0.2..3.0));
        let head = Pose3D::from_position(tcfg.head_origin);
        let a = assemble(Some(&plan), &robot, Some(&ball), phase, &head, &templates, &tcfg, &pcfg).unwrap();
        let b = assemble(Some(&plan_r), &robot_r, Some(&(rz * ball)), phase, &head, &templates, &tcfg, &pcfg).unwrap();
        e_cmd = e_cmd
            .max(pose_gap(&a.head, &b.head))
            .max(pose_gap(&a.wrist_left, &b.wrist_left))
            .max(pose_gap(&a.wrist_right, &b.wrist_right))
            .max((a.base_height - b.base_height).abs())
            .max((a.nav.vx - b.nav.vx).abs())
            .max((a.nav.vy - b.nav.vy).abs())
            .max((a.nav.yaw_rate - b.nav.yaw_rate).abs());
    }
    outcome(
        e_inv < 1e-9 && e_plan < 1e-9 && e_cmd < 1e-9 && feas_flips == 0,
        format!("{n} instances: inversion {e_inv:.1e} m, planner {e_plan:.1e}, commands {e_cmd:.1e} (tol 1e-9); {feas_flips} feasibility flips"),
    )
}

fn closed_loop() -> Outcome {
    let sc = Scenario::default();
    let noisy = run_batch(&sc, 100, 1, &TrialOptions::default()).unwrap();
    let clean = run_batch(&sc.noiseless(), 100, 1, &TrialOptions::default()).unwrap();
    outcome(
        noisy.hit_rate >= 0.70 && noisy.return_rate >= 0.55 && clean.hit_rate == 1.0,
        format!(
            "default noise: hit {:.2} (>= 0.70), return {:.2} (>= 0.55); noiseless: hit {:.2} (= 1.00)",
            noisy.hit_rate, noisy.return_rate, clean.hit_rate
        ),
    )
}

fn determinism() -> Outcome {
    let sc = Scenario::default();
    let opts = TrialOptions::default();
    let a = run_batch(&sc, 20, 42, &opts).unwrap();
    let b = run_batch(&sc, 20, 42, &opts).unwrap();
    let same_trials = a.trials.iter().zip(&b.trials).all(|(x, y)| x.trace_digest == y.trace_digest);
    outcome(
        a.to_csv() == b.to_csv() && a.trace_digest == b.trace_digest && same_trials,
        format!("20 trials twice: CSV identical {}, batch digest {}", a.to_csv() == b.to_csv(), &a.trace_digest[..16]),
    )
}

fn detection(center: Vector2<f64>, side: f64, t: f64) -> Detection2D {
    Detection2D {
        center,
        size: Vector2::new(side, side),
        confidence: 0.9,
        appearance_score: 0.9,
        t,
    }
}

fn state_machines() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let steps = 100_000;

    let gates = AssocGates::default();
    let mut track = Track2D::empty();
    let mut bad_track = 0;
    let mut seen_track = std::collections::HashSet::new();
    for k in 0..steps {
        let t = k as f64 * 0.01;
        let n_det = match rng.random_range(0..10) {
            0..=2 => 0,
            3..=7 => 1,
            _ => rng.random_range(2..4),
        };
        let dets: Vec<Detection2D> = (0..n_det)
            .map(|_| {
                let near = track.center + track.vel * 0.01 + Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
                let far = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                let c = if rng.random::<f64>() < 0.7 { near } else { far };
                detection(c, rng.random_range(5.0..40.0), t)
            })
            .collect();
        let (next, _) = track.step(&dets, t, &gates).unwrap();
        if !track.state.can_transition_to(next.state) {
            bad_track += 1;
        }
        seen_track.insert((track.state, next.state));
        track = next;
    }

    let cfg = PlannerConfig::default();
    let (mut active, mut fallback): (Option<planner::InterceptionPlan>, Option<planner::InterceptionPlan>) = (None, None);
    let mut bad_plan = 0;
    let mut seen_plan = std::collections::HashSet::new();
    for k in 0..steps {
        let now = k as f64 * 0.04;
        let cand = (rng.random::<f64>() < 0.6).then(|| InterceptCandidate {
            p_hit: Vector3::new(rng.random_range(-0.5..1.5), rng.random_range(-1.0..0.5), rng.random_range(0.6..1.2)),
            t_hit: now + rng.random_range(0.1..1.5),
            v_hit: Vector3::new(rng.random_range(-7.0..-3.0), rng.random_range(-1.0..1.0), rng.random_range(-5.0..1.0)),
            p_land: None,
            confidence: 1.0,
            crossing: Crossing::Descending,
        });
        // Drift toward the active target most of the time so commits happen.
        let robot = match active {
            Some(p) if rng.random::<f64>() < 0.8 => BasePose2D::new(
                p.base_des.xy.x + rng.random_range(-0.1..0.1),
                p.base_des.xy.y + rng.random_range(-0.1..0.1),
                p.base_des.yaw + rng.random_range(-0.1..0.1),
            ),
            _ => BasePose2D::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI)),
        };
        let prev = active;
        let (next, fb) = plan_cycle(cand.as_ref(), &robot, prev.as_ref(), fallback.as_ref(), now, &cfg);
        let next = next.map(|p| advance_mode(&p, &robot, now, &cfg));
        if let (Some(a), Some(b)) = (prev, next) {
            if !a.mode.can_transition_to(b.mode) {
                bad_plan += 1;
            }
            if a.mode == SwingMode::Swing && b.p_hit != a.p_hit && b.mode == SwingMode::Swing {
                bad_plan += 1;
            }
            seen_plan.insert((a.mode, b.mode));
        }
        active = next;
        fallback = fb;
    }
    outcome(
        bad_track == 0 && bad_plan == 0 && seen_plan.len() >= 4 && seen_track.len() >= 5,
        format!(
            "{steps} steps each: tracker {bad_track} illegal ({} distinct transitions), planner {bad_plan} illegal ({} distinct transitions)",
            seen_track.len(),
            seen_plan.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("jacobian oracles", jacobians, Duration::from_secs(5)),
        ("analytic trajectory", parabola, Duration::from_secs(1)),
        ("filter consistency", nees, Duration::from_secs(30)),
        ("outlier gating", gating, Duration::from_secs(10)),
        ("prediction convergence", prediction, Duration::from_secs(60)),
        ("placement inversion and equivariance", equivariance, Duration::from_secs(5)),
        ("closed-loop hit and return", closed_loop, Duration::from_secs(300)),
        ("determinism", determinism, Duration::from_secs(60)),
        ("state-machine soundness", state_machines, Duration::from_secs(30)),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {} [{:.2} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
