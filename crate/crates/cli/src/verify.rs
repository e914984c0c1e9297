//! Oracle suites behind `volley verify`.
//!
//! Each suite compares a library routine against an independent reference
//! (finite differences, closed-form flight, Monte Carlo statistics, geometric
//! inversion) and reports the worst observed metric next to its tolerance.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use volley_core::camera::{self, Extrinsics, Intrinsics, Measurement3D};
use volley_core::ekf::{self, Belief, EkfParams};
use volley_core::flightdyn::{self, DragParams, ProjectileState};
use volley_core::planner::base_placement;

/// One discrete flight step; swapped out by the mutation tests.
pub type StepFn = fn(&ProjectileState, f64, &DragParams) -> volley_core::Result<ProjectileState>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    /// What `metric` measures, e.g. "max relative error".
    pub measure: &'static str,
    pub metric: f64,
    /// Acceptance band `[lo, hi]`; a one-sided bound has `lo = 0`.
    pub tolerance: [f64; 2],
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn upper(suite: &'static str, measure: &'static str, metric: f64, tol: f64, detail: String) -> Self {
        Self {
            suite,
            measure,
            metric,
            tolerance: [0.0, tol],
            passed: metric.is_finite() && metric < tol,
            detail,
        }
    }
}

pub const JACOBIAN_TOL: f64 = 1e-6;
pub const PARABOLA_TOL: f64 = 1e-6;
pub const LINEAR_DRAG_TOL: f64 = 1e-6;
pub const NEES_BAND: [f64; 2] = [5.3, 6.7];
pub const INVERSION_TOL: f64 = 1e-9;

fn rel_err<const R: usize, const C: usize>(a: &nalgebra::SMatrix<f64, R, C>, b: &nalgebra::SMatrix<f64, R, C>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-12)
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Camera measurement Jacobian and EKF process Jacobian against central
/// differences over `n` random instances each.
pub fn jacobian_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_cam = 0.0f64;
    let mut worst_f = 0.0f64;

    for _ in 0..n {
        let k = Intrinsics {
            fx: rng.random_range(200.0..1000.0),
            fy: rng.random_range(200.0..1000.0),
            cx: rng.random_range(200.0..400.0),
            cy: rng.random_range(150.0..300.0),
            ..Intrinsics::default()
        };
        let ext = Extrinsics {
            rotation: random_rotation(&mut rng),
            translation: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
        };
        let x = [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), rng.random_range(0.3..20.0)];
        let Ok(j) = camera::measurement_jacobian(x[0], x[1], x[2], &k, &ext) else {
            return SuiteReport::upper("jacobian", "max relative error", f64::NAN, JACOBIAN_TOL, "measurement_jacobian failed".into());
        };
        let map = |y: [f64; 3]| camera::cam_to_base(&camera::back_project(y[0], y[1], y[2], &k).unwrap(), &ext);
        let mut fd = Matrix3::zeros();
        for c in 0..3 {
            let h = 1e-6 * x[c].abs().max(1.0);
            let (mut a, mut b) = (x, x);
            a[c] += h;
            b[c] -= h;
            fd.set_column(c, &((map(a) - map(b)) / (2.0 * h)));
        }
        worst_cam = worst_cam.max(rel_err(&j, &fd));

        let drag = DragParams {
            g: 9.81,
            k1: rng.random_range(0.0..0.2),
            k2: rng.random_range(0.0..0.05),
        };
        let dt = rng.random_range(1e-3..0.05);
        let mut v = Vector3::from_fn(|_, _| rng.random_range(-15.0..15.0));
        if v.norm() < 0.5 {
            v += Vector3::new(1.0, 0.0, 0.0);
        }
        let s0 = Vector6::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.0..3.0),
            v.x,
            v.y,
            v.z,
        );
        let f = ekf::process_jacobian(&v, dt, &drag);
        let flow = |s: &Vector6<f64>| {
            let st = ProjectileState::new(s.fixed_rows::<3>(0).into(), s.fixed_rows::<3>(3).into(), 0.0);
            let n = flightdyn::step(&st, dt, &drag).unwrap();
            Vector6::new(n.p.x, n.p.y, n.p.z, n.v.x, n.v.y, n.v.z)
        };
        let mut fd = Matrix6::zeros();
        for c in 0..6 {
            let h = 1e-6 * s0[c].abs().max(1.0);
            let (mut a, mut b) = (s0, s0);
            a[c] += h;
            b[c] -= h;
            fd.set_column(c, &((flow(&a) - flow(&b)) / (2.0 * h)));
        }
        worst_f = worst_f.max(rel_err(&f, &fd));
    }
    let worst = worst_cam.max(worst_f);
    SuiteReport::upper(
        "jacobian",
        "max relative error",
        worst,
        JACOBIAN_TOL,
        format!("{n} camera + {n} process instances; camera {worst_cam:.2e}, process {worst_f:.2e}"),
    )
}

/// Worst position error of `step` integrated at 1 ms over 2 s against
/// `exact`.
fn flight_error(step: StepFn, drag: &DragParams, p0: Vector3<f64>, v0: Vector3<f64>, exact: impl Fn(f64) -> Vector3<f64>) -> f64 {
    let dt = 1e-3;
    let mut s = ProjectileState::new(p0, v0, 0.0);
    let mut worst = 0.0f64;
    for i in 1..=2000 {
        s = match step(&s, dt, drag) {
            Ok(n) => n,
            Err(_) => return f64::NAN,
        };
        worst = worst.max((s.p - exact(i as f64 * dt)).norm());
    }
    worst
}

/// Drag-free flight against the closed-form parabola, and linear drag against
/// the exact solution of the discrete recurrence, both with the given step
/// function.
pub fn parabola_suite(step: StepFn) -> Vec<SuiteReport> {
    let p0 = Vector3::new(0.5, -0.2, 1.0);
    let v0 = Vector3::new(-6.0, 0.5, 5.0);
    let g = 9.81;
    let gv = Vector3::new(0.0, 0.0, -g);

    let free = DragParams::drag_free(g);
    let e_free = flight_error(step, &free, p0, v0, |t| p0 + v0 * t + gv * (0.5 * t * t));

    // Under linear drag the velocity error relative to v∞ = g/k shrinks by
    // r = 1 − k·dt per step, and each step moves the ball by
    // (v − v∞)(dt − k·dt²/2) on top of v∞·dt; summing the geometric series
    // gives the discrete trajectory exactly.
    let k = 0.3;
    let dt = 1e-3;
    let lin = DragParams { g, k1: k, k2: 0.0 };
    let v_inf = gv / k;
    let r = 1.0 - k * dt;
    let e_lin = flight_error(step, &lin, p0, v0, |t| {
        let n = (t / dt).round();
        p0 + v_inf * t + (v0 - v_inf) * ((1.0 - 0.5 * k * dt) * (1.0 - r.powf(n)) / k)
    });
    let e_cont = flight_error(step, &lin, p0, v0, |t| {
        p0 + v_inf * t + (v0 - v_inf) * ((1.0 - (-k * t).exp()) / k)
    });

    vec![
        SuiteReport::upper(
            "parabola",
            "max position error (m)",
            e_free,
            PARABOLA_TOL,
            "drag-free, dt = 1 ms, 2 s horizon".into(),
        ),
        SuiteReport::upper(
            "linear-drag",
            "max position error (m)",
            e_lin,
            LINEAR_DRAG_TOL,
            format!("k1 = {k}, dt = 1 ms, 2 s horizon; {e_cont:.2e} m from the continuous solution"),
        ),
    ]
}

/// Monte Carlo NEES of the filter against a simulator drawing from the same
/// process and measurement models. Gating is disabled so every innovation
/// is used.
pub fn nees_suite(runs: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EkfParams {
        tau: f64::INFINITY,
        ..EkfParams::default()
    };
    let dt = 0.01;
    let steps = 60;
    let r_var = 1e-4;
    let r = Matrix3::identity() * r_var;
    let p0 = Matrix6::from_diagonal(&Vector6::new(r_var, r_var, r_var, 1.0, 1.0, 1.0));
    let q_sd = Vector6::from(params.process_noise).map(|q| (q * dt).sqrt());
    let p0_sd = p0.diagonal().map(f64::sqrt);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut total = 0.0;
    let mut unhealthy = 0usize;
    for _ in 0..runs {
        let x_hat = Vector6::new(4.0, 0.0, 2.5, -6.0, 0.0, 3.0);
        let mut truth = x_hat + Vector6::from_fn(|i, _| p0_sd[i] * normal());
        let mut b = Belief::new(x_hat, p0, 0.0);
        let mut sum = 0.0;
        for k in 1..=steps {
            let st = ProjectileState::new(truth.fixed_rows::<3>(0).into(), truth.fixed_rows::<3>(3).into(), 0.0);
            let n = flightdyn::step(&st, dt, &params.drag).expect("finite state");
            truth = Vector6::new(n.p.x, n.p.y, n.p.z, n.v.x, n.v.y, n.v.z) + Vector6::from_fn(|i, _| q_sd[i] * normal());
            let z = truth.fixed_rows::<3>(0) + Vector3::from_fn(|_, _| r_var.sqrt() * normal());
            let m = Measurement3D { z, cov: r, t: k as f64 * dt };
            b = match ekf::assimilate(&b, Some(&m), m.t, &params) {
                Ok(b) => b,
                Err(_) => {
                    unhealthy += 1;
                    break;
                }
            };
            match b.p.cholesky() {
                Some(c) => {
                    let e = truth - b.x;
                    sum += e.dot(&c.solve(&e));
                }
                None => unhealthy += 1,
            }
        }
        total += sum / steps as f64;
    }
    let avg = total / runs as f64;
    SuiteReport {
        suite: "nees",
        measure: "mean per-run average NEES",
        metric: avg,
        tolerance: NEES_BAND,
        passed: unhealthy == 0 && (NEES_BAND[0]..=NEES_BAND[1]).contains(&avg),
        detail: format!("{runs} runs x {steps} steps; {unhealthy} non-positive-definite posteriors"),
    }
}

/// Base placement round trip: the nominal contact offset, carried by the
/// placed base, lands back on the hit point.
pub fn inversion_suite(n: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.3..2.0));
        let r = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let b = base_placement(&p, yaw, &r);
        let back = b.to_base(&r);
        worst = worst.max((back.xy() - p.xy()).norm());
    }
    SuiteReport::upper(
        "inversion",
        "max planar round-trip error (m)",
        worst,
        INVERSION_TOL,
        format!("{n} random hit points, headings and offsets"),
    )
}

/// Every suite with the library's own flight step.
pub fn run_all() -> Vec<SuiteReport> {
    let mut out = vec![jacobian_suite(1000, 11)];
    out.extend(parabola_suite(flightdyn::step));
    out.push(nees_suite(200, 12));
    out.push(inversion_suite(1000, 13));
    out
}
