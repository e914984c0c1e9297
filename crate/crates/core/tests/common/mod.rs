//! Reference computations shared by the integration and acceptance tests.
//! Nothing here calls into the code under test except through the closures
//! handed to the finite-difference helper.
#![allow(dead_code)]

use nalgebra::{SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Central-difference Jacobian of `f` at `x`, step scaled per coordinate.
pub fn central_diff<const N: usize, const M: usize>(
    f: impl Fn(&SVector<f64, N>) -> SVector<f64, M>,
    x: &SVector<f64, N>,
) -> SMatrix<f64, M, N> {
    let mut j = SMatrix::<f64, M, N>::zeros();
    for c in 0..N {
        let h = 1e-6 * x[c].abs().max(1.0);
        let mut a = *x;
        let mut b = *x;
        a[c] += h;
        b[c] -= h;
        j.set_column(c, &((f(&a) - f(&b)) / (2.0 * h)));
    }
    j
}

/// Max-abs difference relative to the larger of the two max-abs entries.
pub fn rel_err<const R: usize, const C: usize>(a: &SMatrix<f64, R, C>, b: &SMatrix<f64, R, C>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-12)
}

/// Drag-free ballistic position at time `t`.
pub fn ballistic(p0: &Vector3<f64>, v0: &Vector3<f64>, g: f64, t: f64) -> Vector3<f64> {
    p0 + v0 * t + Vector3::new(0.0, 0.0, -0.5 * g * t * t)
}

/// Apex after one bounce of a drop from rest at height `h`: the rebound
/// speed is `e·sqrt(2gh)`, which climbs back to `e²·h`.
pub fn bounce_apex(h: f64, e: f64) -> f64 {
    e * e * h
}

/// Gravity plus linear and quadratic drag.
pub fn accel(v: &Vector3<f64>, g: f64, k1: f64, k2: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -g) - v * k1 - v * (k2 * v.norm())
}

/// Frozen-acceleration flight step, written out independently of the
/// library, for generating ground truth.
pub fn flight_step(p: &Vector3<f64>, v: &Vector3<f64>, dt: f64, g: f64, k1: f64, k2: f64) -> (Vector3<f64>, Vector3<f64>) {
    let a = accel(v, g, k1, k2);
    (p + v * dt + a * (0.5 * dt * dt), v + a * dt)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian3(rng: &mut impl Rng, sd: f64) -> Vector3<f64> {
    Vector3::new(
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Two-sided 95% band of the χ²₆ run average used by the consistency check.
pub const NEES_BAND: (f64, f64) = (5.3, 6.7);

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn rmse(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Random 3D rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}
