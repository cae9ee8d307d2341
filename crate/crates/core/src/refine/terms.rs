//! Residual terms of the joint cost and their analytic Jacobians.
//!
//! All rotation Jacobians are with respect to right perturbations
//! `R <- R exp(δ)`. Pose 0 is held fixed to remove the world-frame gauge, so
//! pose `k > 0` owns band columns `3(k − 1) .. 3k`.

use super::problem::{CalibrationState, Layout};
use crate::lsq::JacobianSegment;
use crate::motion::SensorKind;
use crate::so3::{hat, log_map, right_jacobian_inv, Rotation};
use crate::spline::{SplineError, SplineSample};
use nalgebra::{Matrix3, Vector3};

/// What a residual block compares against the spline.
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    /// body rate stamped `t`
    Rate { t: f64, omega: Vector3<f64> },
    /// relative rotation `R_cj_ci` between stamps `t_i < t_j`
    Pair { t_i: f64, t_j: f64, rotation: Rotation },
}

/// One residual block. `sensor` indexes the calibrated sensors; `None` is the
/// event camera, whose rates are compared with the spline directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub sensor: Option<usize>,
    pub kind: SensorKind,
    pub measurement: Measurement,
}

/// Unweighted residual and, on request, its Jacobian segments.
pub struct Evaluated {
    pub residual: Vector3<f64>,
    pub jacobian: Vec<JacobianSegment>,
}

fn pose_segments(s: &SplineSample, pre: &Matrix3<f64>, which: &[Matrix3<f64>; 4], out: &mut Vec<JacobianSegment>) {
    for (k, m) in which.iter().enumerate() {
        let pose = s.first_pose + k;
        if pose > 0 {
            out.push(JacobianSegment::from_matrix3(3 * (pose - 1), &(pre * m)));
        }
    }
}

impl Term {
    pub fn evaluate(&self, state: &CalibrationState, layout: &Layout, jacobians: bool) -> Result<Evaluated, SplineError> {
        let spline = &state.spline;
        let mut jac = Vec::new();
        match (&self.measurement, self.sensor) {
            (Measurement::Rate { t, omega }, None) => {
                let s = spline.sample(*t, jacobians)?;
                if jacobians {
                    pose_segments(&s, &Matrix3::identity(), &s.d_omega, &mut jac);
                }
                Ok(Evaluated { residual: s.omega - omega, jacobian: jac })
            }
            (Measurement::Rate { t, omega }, Some(k)) => {
                let p = &state.sensors[k];
                let s = spline.sample(t + p.tau, jacobians)?;
                let v = omega + p.bias;
                let rv = p.rotation * v;
                if jacobians {
                    let col = layout.border_start + layout.offsets[k];
                    pose_segments(&s, &Matrix3::identity(), &s.d_omega, &mut jac);
                    jac.push(JacobianSegment::from_matrix3(col, &(p.rotation.matrix() * hat(&v))));
                    jac.push(JacobianSegment::from_vector(col + 3, &s.omega_dot));
                    if layout.has_bias[k] {
                        jac.push(JacobianSegment::from_matrix3(col + 4, &(-p.rotation.matrix())));
                    }
                }
                Ok(Evaluated { residual: s.omega - rv, jacobian: jac })
            }
            (Measurement::Pair { t_i, t_j, rotation }, Some(k)) => {
                let p = &state.sensors[k];
                let a = spline.sample(t_i + p.tau, jacobians)?;
                let b = spline.sample(t_j + p.tau, jacobians)?;
                let x = p.rotation.matrix();
                let m = rotation.matrix();
                let f = x.transpose() * a.rotation.matrix().transpose() * b.rotation.matrix() * x;
                let e = f * m;
                let r = log_map(&Rotation::from_matrix_unchecked(e));
                if jacobians {
                    let jinv = right_jacobian_inv(&r);
                    let via_a = jinv * (-e.transpose() * x.transpose());
                    let xm_t = (x * m).transpose();
                    let via_b = jinv * xm_t;
                    pose_segments(&a, &via_a, &a.d_rotation, &mut jac);
                    pose_segments(&b, &via_b, &b.d_rotation, &mut jac);
                    let col = layout.border_start + layout.offsets[k];
                    jac.push(JacobianSegment::from_matrix3(col, &(jinv * m.transpose() * (Matrix3::identity() - f.transpose()))));
                    jac.push(JacobianSegment::from_vector(col + 3, &(via_a * a.omega + via_b * b.omega)));
                }
                Ok(Evaluated { residual: r, jacobian: jac })
            }
            (Measurement::Pair { .. }, None) => unreachable!("event camera terms are rates"),
        }
    }

    /// Event times this term queries, for any offset `tau`.
    pub fn query_times(&self, tau: f64) -> (f64, f64) {
        match self.measurement {
            Measurement::Rate { t, .. } => (t + tau, t + tau),
            Measurement::Pair { t_i, t_j, .. } => (t_i + tau, t_j + tau),
        }
    }
}

/// Huber loss on the squared norm `s`: `s` inside `δ²`, `2δ√s − δ²` outside.
pub fn huber(s: f64, delta: f64) -> (f64, f64) {
    if s <= delta * delta {
        (s, 1.0)
    } else {
        let n = s.sqrt();
        (2.0 * delta * n - delta * delta, delta / n)
    }
}
