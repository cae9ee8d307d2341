//! Uniform cumulative cubic B-spline on SO(3).
//!
//! Control pose `k` sits at time `t0 + k * dt`. A spline with `N` control
//! poses is evaluable on `[t0 + dt, t0 + (N - 2) * dt]`; the segment starting
//! at `t0 + i * dt` blends poses `i - 1 ..= i + 2`:
//!
//! ```text
//! R(t) = P0 * exp(B1(u) d1) * exp(B2(u) d2) * exp(B3(u) d3),   dj = log(P(j-1)^T Pj)
//! ```
//!
//! Angular velocity and acceleration are body-frame quantities
//! (`dR/dt = R [w]x`), computed with the recursive scheme that propagates
//! the velocity through each exponential factor.

use crate::so3::{exp_map, hat, log_map, right_jacobian, right_jacobian_inv, RotVec, Rotation};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("knot interval must be positive, got {0}")]
    BadKnotInterval(f64),
    #[error("spline needs at least 4 control poses, got {0}")]
    TooFewPoses(usize),
    #[error("time {t} outside evaluable span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("basis parameter u = {0} outside [0, 1)")]
    BasisOutOfRange(f64),
    #[error("insufficient span: {span} s covers fewer than 4 knot intervals of {knot_interval} s")]
    InsufficientSpan { span: f64, knot_interval: f64 },
    #[error("timestamps not strictly increasing at sample {index}")]
    NonMonotonic { index: usize },
    #[error("no samples")]
    Empty,
}

/// Cumulative cubic basis `(1/6) M (1, u, u^2, u^3)^T`.
pub fn cumulative_basis(u: f64) -> Result<[f64; 4], SplineError> {
    if !(0.0..1.0).contains(&u) {
        return Err(SplineError::BasisOutOfRange(u));
    }
    Ok(basis(u).0)
}

/// Basis values and their first and second derivatives with respect to `u`.
fn basis(u: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    let b = [
        1.0,
        (5.0 + 3.0 * u - 3.0 * u2 + u3) / 6.0,
        (1.0 + 3.0 * u + 3.0 * u2 - 2.0 * u3) / 6.0,
        u3 / 6.0,
    ];
    let db = [0.0, (3.0 - 6.0 * u + 3.0 * u2) / 6.0, (3.0 + 6.0 * u - 6.0 * u2) / 6.0, 0.5 * u2];
    let ddb = [0.0, u - 1.0, 1.0 - 2.0 * u, u];
    (b, db, ddb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So3Spline {
    t0: f64,
    knot_interval: f64,
    poses: Vec<Rotation>,
}

/// Spline value, derivatives and (optionally) control-pose Jacobians at one time.
///
/// Jacobians are with respect to right perturbations `P <- P exp(delta)` of
/// the four control poses `first_pose ..= first_pose + 3`. `d_rotation[k]`
/// maps `delta_k` to the right perturbation of `R(t)`.
#[derive(Debug, Clone)]
pub struct SplineSample {
    pub first_pose: usize,
    pub rotation: Rotation,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    pub d_rotation: [Matrix3<f64>; 4],
    pub d_omega: [Matrix3<f64>; 4],
}

impl So3Spline {
    pub fn new(t0: f64, knot_interval: f64, poses: Vec<Rotation>) -> Result<Self, SplineError> {
        if !(knot_interval > 0.0) || !knot_interval.is_finite() {
            return Err(SplineError::BadKnotInterval(knot_interval));
        }
        if poses.len() < 4 {
            return Err(SplineError::TooFewPoses(poses.len()));
        }
        Ok(Self { t0, knot_interval, poses })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn knot_interval(&self) -> f64 {
        self.knot_interval
    }

    pub fn poses(&self) -> &[Rotation] {
        &self.poses
    }

    pub fn poses_mut(&mut self) -> &mut [Rotation] {
        &mut self.poses
    }

    pub fn num_poses(&self) -> usize {
        self.poses.len()
    }

    pub fn start_time(&self) -> f64 {
        self.t0 + self.knot_interval
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + (self.poses.len() - 2) as f64 * self.knot_interval
    }

    pub fn contains(&self, t: f64) -> bool {
        let eps = 1e-9 * self.knot_interval;
        t >= self.start_time() - eps && t <= self.end_time() + eps
    }

    /// Left-multiply every control pose by `q`.
    pub fn left_multiplied(&self, q: &Rotation) -> Self {
        Self { t0: self.t0, knot_interval: self.knot_interval, poses: self.poses.iter().map(|p| q * p).collect() }
    }

    /// Segment lookup: index of the first blended pose and the local parameter.
    /// `u` may equal 1 only at the final endpoint.
    fn locate(&self, t: f64) -> Result<(usize, f64), SplineError> {
        if !t.is_finite() || !self.contains(t) {
            return Err(SplineError::OutOfSpan { t, start: self.start_time(), end: self.end_time() });
        }
        let s = (t - self.t0) / self.knot_interval;
        let last_segment = self.poses.len() - 3;
        let i = (s.floor() as isize).clamp(1, last_segment as isize) as usize;
        let u = (s - i as f64).clamp(0.0, 1.0);
        Ok((i - 1, u))
    }

    pub fn eval(&self, t: f64) -> Result<Rotation, SplineError> {
        let (first, u) = self.locate(t)?;
        let (b, _, _) = basis(u);
        let p = &self.poses[first..first + 4];
        let mut r = p[0];
        for j in 1..4 {
            let d = log_map(&(p[j - 1].transpose() * p[j]));
            r *= exp_map(&(d * b[j]));
        }
        Ok(r)
    }

    pub fn angular_velocity(&self, t: f64) -> Result<Vector3<f64>, SplineError> {
        Ok(self.sample(t, false)?.omega)
    }

    pub fn angular_acceleration(&self, t: f64) -> Result<Vector3<f64>, SplineError> {
        Ok(self.sample(t, false)?.omega_dot)
    }

    /// Evaluate rotation, velocity and acceleration; with `jacobians` also the
    /// derivatives with respect to the four blended control poses.
    pub fn sample(&self, t: f64, jacobians: bool) -> Result<SplineSample, SplineError> {
        let (first, u) = self.locate(t)?;
        let (b, db, ddb) = basis(u);
        let inv_dt = 1.0 / self.knot_interval;
        let p = &self.poses[first..first + 4];

        let mut d = [RotVec::zeros(); 4];
        let mut a = [Rotation::identity(); 4];
        for j in 1..4 {
            d[j] = log_map(&(p[j - 1].transpose() * p[j]));
            a[j] = exp_map(&(d[j] * b[j]));
        }

        // v[j] = A_j^T w_(j-1): velocity carried into factor j
        let mut v = [Vector3::zeros(); 4];
        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        for j in 1..4 {
            let bd = d[j] * (db[j] * inv_dt);
            v[j] = a[j].transpose() * omega;
            omega_dot = a[j].transpose() * omega_dot + d[j] * (ddb[j] * inv_dt * inv_dt) + v[j].cross(&bd);
            omega = v[j] + bd;
        }

        let rotation = p[0] * a[1] * a[2] * a[3];
        let mut out = SplineSample {
            first_pose: first,
            rotation,
            omega,
            omega_dot,
            d_rotation: [Matrix3::zeros(); 4],
            d_omega: [Matrix3::zeros(); 4],
        };
        if !jacobians {
            return Ok(out);
        }

        // suffix[j] = A_(j+1) ... A_3
        let mut suffix = [Matrix3::identity(); 4];
        for j in (0..3).rev() {
            suffix[j] = a[j + 1].matrix() * suffix[j + 1];
        }

        let mut dr_dd = [Matrix3::zeros(); 4];
        let mut dw_dd = [Matrix3::zeros(); 4];
        for j in 1..4 {
            let jr = right_jacobian(&(d[j] * b[j])) * b[j];
            let st = suffix[j].transpose();
            dr_dd[j] = st * jr;
            dw_dd[j] = st * (hat(&v[j]) * jr + Matrix3::identity() * (db[j] * inv_dt));
        }

        let mut jr_inv = [Matrix3::zeros(); 4];
        for j in 1..4 {
            jr_inv[j] = right_jacobian_inv(&d[j]);
        }

        for k in 0..4 {
            let mut jr_k = Matrix3::zeros();
            let mut jw_k = Matrix3::zeros();
            if k == 0 {
                jr_k += suffix[0].transpose();
            } else {
                jr_k += dr_dd[k] * jr_inv[k];
                jw_k += dw_dd[k] * jr_inv[k];
            }
            if k < 3 {
                // d_(k+1) = log(P_k^T P_(k+1)) responds to P_k through the left Jacobian inverse
                let jl_inv = jr_inv[k + 1].transpose();
                jr_k -= dr_dd[k + 1] * jl_inv;
                jw_k -= dw_dd[k + 1] * jl_inv;
            }
            out.d_rotation[k] = jr_k;
            out.d_omega[k] = jw_k;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_velocity(omega: Vector3<f64>, dt: f64, n: usize) -> So3Spline {
        let poses = (0..n).map(|i| exp_map(&(omega * (i as f64 * dt)))).collect();
        So3Spline::new(0.0, dt, poses).unwrap()
    }

    pub(crate) fn random_spline(rng: &mut ChaCha8Rng, n: usize) -> So3Spline {
        let mut r = exp_map(&Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0), 0.2));
        let mut poses = Vec::with_capacity(n);
        for _ in 0..n {
            poses.push(r);
            let step = Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            r *= exp_map(&step);
        }
        So3Spline::new(rng.gen_range(-1.0..1.0), rng.gen_range(0.05..0.2), poses).unwrap()
    }

    #[test]
    fn basis_at_zero() {
        let b = cumulative_basis(0.0).unwrap();
        assert_eq!(b[0], 1.0);
        assert_relative_eq!(b[1], 5.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(b[2], 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn basis_near_one() {
        let b = cumulative_basis(1.0 - 1e-12).unwrap();
        assert_relative_eq!(b[1], 1.0, epsilon = 1e-10);
        assert_relative_eq!(b[2], 5.0 / 6.0, epsilon = 1e-10);
        assert_relative_eq!(b[3], 1.0 / 6.0, epsilon = 1e-10);
    }

    fn basis_by_matrix(u: f64) -> nalgebra::Vector4<f64> {
        let m = nalgebra::Matrix4::new(
            6.0, 0.0, 0.0, 0.0, //
            5.0, 3.0, -3.0, 1.0, //
            1.0, 3.0, 3.0, -2.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        m * nalgebra::Vector4::new(1.0, u, u * u, u * u * u) / 6.0
    }

    #[test]
    fn basis_at_half() {
        // rows of M against (1, 1/2, 1/4, 1/8): 6, 5.875, 3, 0.125
        let b = cumulative_basis(0.5).unwrap();
        assert_relative_eq!(b[1], 47.0 / 48.0, epsilon = 1e-15);
        assert_relative_eq!(b[2], 0.5, epsilon = 1e-15);
        assert_relative_eq!(b[3], 1.0 / 48.0, epsilon = 1e-15);
    }

    #[test]
    fn basis_matches_matrix_form() {
        for i in 0..100 {
            let u = i as f64 / 100.0;
            let b = cumulative_basis(u).unwrap();
            let m = basis_by_matrix(u);
            for k in 0..4 {
                assert_relative_eq!(b[k], m[k], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn basis_rejects_out_of_range() {
        assert!(cumulative_basis(1.0).is_err());
        assert!(cumulative_basis(-0.1).is_err());
    }

    #[test]
    fn basis_monotone_and_bounded() {
        for i in 0..1000 {
            let u = i as f64 / 1000.0;
            let b = cumulative_basis(u).unwrap();
            assert_eq!(b[0], 1.0);
            for j in 0..3 {
                assert!(b[j] >= b[j + 1]);
            }
            assert!(b.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn span_limits() {
        let s = constant_velocity(Vector3::zeros(), 0.1, 10);
        assert_relative_eq!(s.start_time(), 0.1);
        assert_relative_eq!(s.end_time(), 0.8);
        assert!(s.eval(0.09).is_err());
        assert!(s.eval(0.81).is_err());
        assert!(s.eval(0.1).is_ok());
        assert!(s.eval(0.8).is_ok());
    }

    #[test]
    fn identity_spline() {
        let s = constant_velocity(Vector3::zeros(), 0.1, 8);
        for i in 0..50 {
            let t = 0.1 + 0.5 * i as f64 / 50.0;
            assert_eq!(s.eval(t).unwrap(), Rotation::identity());
            assert_eq!(s.angular_velocity(t).unwrap(), Vector3::zeros());
        }
    }

    #[test]
    fn constant_velocity_reproduces_screw_motion() {
        let w = Vector3::new(0.3, -0.7, 1.1);
        let s = constant_velocity(w, 0.1, 12);
        let mut t = s.start_time();
        while t <= s.end_time() {
            let r = s.eval(t).unwrap();
            assert!(crate::so3::angle_between(&r, &exp_map(&(w * t))) < 1e-9);
            assert_relative_eq!(s.angular_velocity(t).unwrap(), w, epsilon = 1e-8);
            assert_relative_eq!(s.angular_acceleration(t).unwrap(), Vector3::zeros(), epsilon = 1e-8);
            t += 0.0037;
        }
    }

    #[test]
    fn continuity_at_knots() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spline(&mut rng, 10);
        let eps = 1e-7;
        for k in 2..(s.num_poses() - 2) {
            let tk = s.t0() + k as f64 * s.knot_interval();
            let a = s.eval(tk - eps).unwrap();
            let b = s.eval(tk + eps).unwrap();
            let w = s.angular_velocity(tk).unwrap().norm();
            assert!(log_map(&(a.transpose() * b)).norm() <= 10.0 * eps * w.max(1.0));
            let wa = s.angular_velocity(tk - eps).unwrap();
            let wb = s.angular_velocity(tk + eps).unwrap();
            let acc = s.angular_acceleration(tk).unwrap().norm();
            assert!((wa - wb).norm() <= 4.0 * eps * acc + 1e-9);
        }
    }

    #[test]
    fn velocity_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let s = random_spline(&mut rng, 7);
            let t = rng.gen_range(s.start_time() + h..s.end_time() - h);
            let w = s.angular_velocity(t).unwrap();
            let fd = log_map(&(s.eval(t - h).unwrap().transpose() * s.eval(t + h).unwrap())) / (2.0 * h);
            assert!((w - fd).norm() < 1e-5);
            worst = worst.max((w - fd).norm() / w.norm().max(1e-3));
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn acceleration_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-5;
        for _ in 0..300 {
            let s = random_spline(&mut rng, 7);
            let t = rng.gen_range(s.start_time() + h..s.end_time() - h);
            let a = s.angular_acceleration(t).unwrap();
            let fd = (s.angular_velocity(t + h).unwrap() - s.angular_velocity(t - h).unwrap()) / (2.0 * h);
            assert!((a - fd).norm() <= 1e-4 * fd.norm().max(1.0), "{a} vs {fd}");
        }
    }

    #[test]
    fn pose_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-6;
        for _ in 0..200 {
            let s = random_spline(&mut rng, 6);
            let t = rng.gen_range(s.start_time()..s.end_time());
            let sample = s.sample(t, true).unwrap();
            for k in 0..4 {
                for c in 0..3 {
                    let mut delta = Vector3::zeros();
                    delta[c] = h;
                    let perturbed = |sign: f64| {
                        let mut sp = s.clone();
                        let idx = sample.first_pose + k;
                        sp.poses_mut()[idx] *= exp_map(&(delta * sign));
                        sp
                    };
                    let (plus, minus) = (perturbed(1.0), perturbed(-1.0));
                    let r0 = sample.rotation;
                    let dr = (log_map(&(r0.transpose() * plus.eval(t).unwrap()))
                        - log_map(&(r0.transpose() * minus.eval(t).unwrap())))
                        / (2.0 * h);
                    let dw = (plus.angular_velocity(t).unwrap() - minus.angular_velocity(t).unwrap()) / (2.0 * h);
                    let ar = sample.d_rotation[k].column(c).into_owned();
                    let aw = sample.d_omega[k].column(c).into_owned();
                    assert!((ar - dr).norm() <= 1e-4 * dr.norm().max(1.0), "rot k={k} c={c}: {ar} vs {dr}");
                    assert!((aw - dw).norm() <= 1e-4 * dw.norm().max(1.0), "vel k={k} c={c}: {aw} vs {dw}");
                }
            }
        }
    }

    #[test]
    fn left_composition_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_spline(&mut rng, 8);
        let q = exp_map(&Vector3::new(0.4, -1.2, 2.0));
        let sq = s.left_multiplied(&q);
        for i in 0..40 {
            let t = s.start_time() + (s.end_time() - s.start_time()) * i as f64 / 40.0;
            let expected = q * s.eval(t).unwrap();
            assert!(crate::so3::angle_between(&expected, &sq.eval(t).unwrap()) < 1e-10);
            assert_relative_eq!(s.angular_velocity(t).unwrap(), sq.angular_velocity(t).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn outputs_stay_in_so3() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let s = random_spline(&mut rng, 9);
            let t = rng.gen_range(s.start_time()..s.end_time());
            assert!(crate::so3::orthonormality_error(&s.eval(t).unwrap()) < 1e-10);
        }
    }
}
