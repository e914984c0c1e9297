//! Extended Kalman filter over ball position and velocity.
//!
//! State `x = (p, v)` in the base frame, measured through `H = [I₃ 0]`. The
//! process model is the flight step of [`crate::flightdyn`]; its Jacobian is
//! derived analytically from the drag law. Measurements pass a Mahalanobis
//! gate before the Joseph-form update; rejected or missing measurements leave
//! the filter running prediction-only.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::Measurement3D;
use crate::error::{Error, Result};
use crate::flightdyn::{self, BounceParams, DragParams, ProjectileState};

type Matrix3x6 = SMatrix<f64, 3, 6>;

/// χ²₃ 99% quantile.
pub const CHI2_3_99: f64 = 11.345;

/// Condition number above which the innovation covariance is treated as
/// singular.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
    pub t: f64,
    pub confidence: f64,
    pub accepted_count: u32,
    pub rejected_count: u32,
}

/// The compact ball-state interface `(p, v, c)` consumed by planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectileEstimate {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub confidence: f64,
    pub t: f64,
}

impl ProjectileEstimate {
    pub fn as_state(&self) -> ProjectileState {
        ProjectileState::new(self.p, self.v, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfParams {
    /// Diagonal of the process noise density (per second): three position
    /// terms (m²/s) then three velocity terms ((m/s)²/s).
    pub process_noise: [f64; 6],
    /// Mahalanobis gate threshold (χ² units, 3 dof).
    pub tau: f64,
    pub drag: DragParams,
    pub bounce: BounceParams,
    /// Initial velocity variance at track start ((m/s)²).
    pub init_velocity_var: f64,
    /// Period over which one confidence decay factor applies (s).
    pub confidence_period: f64,
    pub confidence_decay: f64,
    pub confidence_gain: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        Self {
            process_noise: [1e-4, 1e-4, 1e-4, 0.5, 0.5, 0.5],
            tau: CHI2_3_99,
            drag: DragParams::default(),
            bounce: BounceParams::default(),
            init_velocity_var: 25.0,
            confidence_period: 0.01,
            confidence_decay: 0.95,
            confidence_gain: 0.3,
        }
    }
}

impl EkfParams {
    pub fn q(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from(self.process_noise))
    }

    pub fn validate(&self) -> Result<()> {
        if self.process_noise.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::validation("ekf.process_noise", "entries must be >= 0"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation("ekf.tau", "must be > 0"));
        }
        if !(self.init_velocity_var > 0.0) {
            return Err(Error::validation("ekf.init_velocity_var", "must be > 0"));
        }
        if !(self.confidence_period > 0.0) {
            return Err(Error::validation("ekf.confidence_period", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.confidence_decay) || !(0.0..=1.0).contains(&self.confidence_gain) {
            return Err(Error::validation("ekf.confidence_decay", "decay and gain must lie in [0, 1]"));
        }
        self.drag.validate()?;
        self.bounce.validate()
    }
}

/// Innovation statistics of one measurement against a belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub d_squared: f64,
    pub accept: bool,
    pub innovation: Vector3<f64>,
    pub innovation_cov: Matrix3<f64>,
}

/// Diagnostics from one [`assimilate_detailed`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub belief: Belief,
    pub gate: Option<GateResult>,
    pub bounced: bool,
}

fn h() -> Matrix3x6 {
    Matrix3x6::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn symmetrize(p: &Matrix6<f64>) -> Matrix6<f64> {
    (p + p.transpose()) * 0.5
}

impl Belief {
    /// A belief with no measurement history: confidence 0, zero tallies.
    pub fn new(x: Vector6<f64>, p: Matrix6<f64>, t: f64) -> Self {
        Self {
            x,
            p,
            t,
            confidence: 0.0,
            accepted_count: 0,
            rejected_count: 0,
        }
    }

    /// Starts a filter from two measurements: position from the later one,
    /// velocity by finite difference, covariance `diag(R_meas, σ_v²·I₃)`.
    pub fn from_measurements(first: &Measurement3D, second: &Measurement3D, params: &EkfParams) -> Result<Self> {
        let dt = second.t - first.t;
        if !(dt > 0.0) {
            return Err(Error::Ordering { last: first.t, got: second.t });
        }
        let v = (second.z - first.z) / dt;
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&second.z);
        x.fixed_rows_mut::<3>(3).copy_from(&v);
        let mut p = Matrix6::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&second.cov);
        p.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * params.init_velocity_var));
        Ok(Self::new(x, p, second.t))
    }

    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(3).into()
    }

    pub fn position_cov(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn velocity_cov(&self) -> Matrix3<f64> {
        self.p.fixed_view::<3, 3>(3, 3).into()
    }

    pub fn is_healthy(&self) -> bool {
        (self.p - self.p.transpose()).amax() < 1e-9 && self.p.cholesky().is_some() && (0.0..=1.0).contains(&self.confidence)
    }
}

/// `∂f/∂x` of the discrete flight step at velocity `v`.
pub fn process_jacobian(v: &Vector3<f64>, dt: f64, drag: &DragParams) -> Matrix6<f64> {
    let speed = v.norm();
    let a = if speed > 0.0 {
        -Matrix3::identity() * (drag.k1 + drag.k2 * speed) - v * v.transpose() * (drag.k2 / speed)
    } else {
        -Matrix3::identity() * drag.k1
    };
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt + a * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() + a * dt));
    f
}

pub fn predict(b: &Belief, dt: f64, params: &EkfParams) -> Result<Belief> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt", format!("must be > 0 (got {dt})")));
    }
    let s = flightdyn::step(&ProjectileState::new(b.position(), b.velocity(), b.t), dt, &params.drag)?;
    let f = process_jacobian(&b.velocity(), dt, &params.drag);
    let p = f * b.p * f.transpose() + params.q() * dt;
    let mut out = *b;
    out.x.fixed_rows_mut::<3>(0).copy_from(&s.p);
    out.x.fixed_rows_mut::<3>(3).copy_from(&s.v);
    out.p = symmetrize(&p);
    out.t = b.t + dt;
    Ok(out)
}

/// Mahalanobis test of `m` against the (already predicted) belief.
pub fn gate(b: &Belief, m: &Measurement3D, params: &EkfParams) -> Result<GateResult> {
    let r = m.z - b.position();
    let s = b.position_cov() + m.cov;
    let s = (s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::DegenerateCovariance(cond));
    }
    let chol = s.cholesky().ok_or(Error::DegenerateCovariance(f64::INFINITY))?;
    let d2 = r.dot(&chol.solve(&r));
    Ok(GateResult {
        d_squared: d2,
        accept: d2 < params.tau,
        innovation: r,
        innovation_cov: s,
    })
}

/// Joseph-form Kalman update. The caller is responsible for gating.
pub fn update(b: &Belief, m: &Measurement3D, params: &EkfParams) -> Result<Belief> {
    let g = gate(b, m, params)?;
    Ok(apply_update(b, m, &g, params))
}

fn apply_update(b: &Belief, m: &Measurement3D, g: &GateResult, params: &EkfParams) -> Belief {
    let h = h();
    let s_inv = g
        .innovation_cov
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| g.innovation_cov.try_inverse().unwrap_or_else(Matrix3::zeros));
    let k = b.p * h.transpose() * s_inv;
    let ikh = Matrix6::identity() - k * h;
    let p = ikh * b.p * ikh.transpose() + k * m.cov * k.transpose();
    let mut out = *b;
    out.x = b.x + k * g.innovation;
    out.p = symmetrize(&p);
    out.accepted_count += 1;
    out.confidence = (1.0 - params.confidence_gain) * b.confidence + params.confidence_gain;
    out
}

/// Applies the restitution bounce when the estimate is low and descending.
/// Returns the belief and whether the bounce fired.
pub fn maybe_bounce(b: &Belief, params: &EkfParams) -> (Belief, bool) {
    if b.x[2] < params.bounce.z_b && b.x[5] < 0.0 {
        let mut out = *b;
        out.x[5] = -params.bounce.e * b.x[5];
        let inflated = b.velocity_cov() * params.bounce.cov_inflation;
        out.p.fixed_view_mut::<3, 3>(3, 3).copy_from(&inflated);
        (out, true)
    } else {
        (*b, false)
    }
}

/// Predict to `t`, bounce if needed, then update with `m` if it passes the
/// gate. Missing or rejected measurements leave the predicted belief and
/// decay confidence.
pub fn assimilate(b: &Belief, m: Option<&Measurement3D>, t: f64, params: &EkfParams) -> Result<Belief> {
    assimilate_detailed(b, m, t, params).map(|r| r.belief)
}

pub fn assimilate_detailed(b: &Belief, m: Option<&Measurement3D>, t: f64, params: &EkfParams) -> Result<StepReport> {
    if !(t >= b.t) {
        return Err(Error::Ordering { last: b.t, got: t });
    }
    let dt = t - b.t;
    let predicted = if dt > 0.0 { predict(b, dt, params)? } else { *b };
    let (mut belief, bounced) = maybe_bounce(&predicted, params);

    let mut gate_result = None;
    let mut accepted = false;
    if let Some(m) = m {
        let g = gate(&belief, m, params)?;
        gate_result = Some(g);
        if g.accept {
            belief = apply_update(&belief, m, &g, params);
            accepted = true;
        } else {
            belief.rejected_count += 1;
        }
    }
    if !accepted && dt > 0.0 {
        belief.confidence *= params.confidence_decay.powf(dt / params.confidence_period);
    }
    Ok(StepReport {
        belief,
        gate: gate_result,
        bounced,
    })
}

pub fn to_estimate(b: &Belief) -> ProjectileEstimate {
    ProjectileEstimate {
        p: b.position(),
        v: b.velocity(),
        confidence: b.confidence,
        t: b.t,
    }
}
