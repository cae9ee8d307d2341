//! Rotation-group primitives: exponential and logarithm maps, skew matrices
//! and the right Jacobians used by the spline and the optimizer.
//!
//! Rotations are stored as `nalgebra::Rotation3<f64>` (a 3x3 orthonormal
//! matrix). Tangent vectors are rotation vectors (axis times angle, radians).

use nalgebra::{Matrix3, Rotation3, Vector3};

/// A proper rotation matrix.
pub type Rotation = Rotation3<f64>;

/// Rotation vector (axis x angle, radians).
pub type RotVec = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-6;

/// Skew-symmetric cross-product matrix, `hat(a) * b == a x b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula, with a series expansion below 1e-6 rad.
pub fn exp_map(v: &RotVec) -> Rotation {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm, `|result| <= pi`.
///
/// At exactly pi the axis is ambiguous up to sign; the axis whose first
/// nonzero component is positive is returned.
pub fn log_map(r: &Rotation) -> RotVec {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin_theta = 0.5 * w.norm();

    if cos_theta > 0.0 {
        // atan2 keeps full precision for small angles where acos would not
        let theta = sin_theta.atan2(cos_theta);
        let scale = if theta < SMALL_ANGLE {
            0.5 * (1.0 + theta * theta / 6.0)
        } else {
            0.5 * theta / theta.sin()
        };
        return w * scale;
    }

    let theta = sin_theta.atan2(cos_theta);
    if sin_theta > 1e-5 {
        return w * (0.5 * theta / sin_theta);
    }

    // Near pi: recover the axis from the symmetric part, R + R^T = 2 a a^T (1 - cos) + 2 cos I.
    let s = (m + m.transpose()) * 0.5;
    let denom = 1.0 - cos_theta;
    let diag = Vector3::new(
        ((s[(0, 0)] - cos_theta) / denom).max(0.0).sqrt(),
        ((s[(1, 1)] - cos_theta) / denom).max(0.0).sqrt(),
        ((s[(2, 2)] - cos_theta) / denom).max(0.0).sqrt(),
    );
    let pivot = diag.imax();
    let mut axis = Vector3::zeros();
    axis[pivot] = diag[pivot];
    for i in 0..3 {
        if i != pivot {
            axis[i] = s[(pivot, i)] / (denom * diag[pivot]);
        }
    }
    axis.normalize_mut();
    // Resolve the residual sign with the antisymmetric part when it carries
    // information, otherwise use the first-positive-component convention.
    if w.dot(&axis) < 0.0 {
        axis = -axis;
    }
    if sin_theta <= 1e-12 {
        let first = axis.iter().position(|c| c.abs() > 1e-12).unwrap_or(0);
        if axis[first] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Right Jacobian of the exponential map:
/// `exp(v + d) ~= exp(v) * exp(right_jacobian(v) * d)`.
pub fn right_jacobian(v: &RotVec) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(v);
    let (a, b) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse of [`right_jacobian`]:
/// `log(exp(v) * exp(d)) ~= v + right_jacobian_inv(v) * d`.
pub fn right_jacobian_inv(v: &RotVec) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(v);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// Left Jacobian inverse, `log(exp(d) * exp(v)) ~= v + left_jacobian_inv(v) * d`.
pub fn left_jacobian_inv(v: &RotVec) -> Matrix3<f64> {
    right_jacobian_inv(v).transpose()
}

/// Project an arbitrary 3x3 matrix onto the closest rotation (Frobenius norm).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Rotation::from_matrix_unchecked(u * fix * v_t)
}

/// Re-orthonormalize to undo accumulated rounding.
pub fn renormalize(r: &Rotation) -> Rotation {
    project_to_rotation(r.matrix())
}

/// Angle (radians) of the rotation `a^T b`.
pub fn angle_between(a: &Rotation, b: &Rotation) -> f64 {
    log_map(&(a.transpose() * b)).norm()
}

/// Max deviation of `R^T R` from identity and of `det R` from one.
pub fn orthonormality_error(r: &Rotation) -> f64 {
    let m = r.matrix();
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    ortho.max((m.determinant() - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotvec(rng: &mut ChaCha8Rng, max_angle: f64) -> RotVec {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            .normalize();
        axis * rng.gen_range(0.0..max_angle)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = exp_map(&Vector3::zeros());
        assert_eq!(r, Rotation::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = exp_map(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_map(&Rotation::identity()), Vector3::zeros());
    }

    #[test]
    fn log_exp_fixed_vector() {
        let v = Vector3::new(0.1, -0.2, 0.3);
        assert_relative_eq!(log_map(&exp_map(&v)), v, epsilon = 1e-12);
    }

    #[test]
    fn half_turn_about_x_uses_positive_axis() {
        let r = Rotation::from_matrix_unchecked(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
        assert_relative_eq!(log_map(&r), Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
        let r = exp_map(&Vector3::new(-PI, 0.0, 0.0));
        assert_relative_eq!(log_map(&r), Vector3::new(PI, 0.0, 0.0), epsilon = 1e-9);
        let r = exp_map(&(Vector3::new(0.0, -1.0, 1.0).normalize() * PI));
        let expected = Vector3::new(0.0, 1.0, -1.0).normalize() * PI;
        assert_relative_eq!(log_map(&r), expected, epsilon = 1e-9);
    }

    #[test]
    fn round_trip_over_many_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            // include tiny and near-pi angles
            let max = match i % 4 {
                0 => 1e-7,
                1 => 1e-3,
                _ => PI - 1e-6,
            };
            let v = random_rotvec(&mut rng, max);
            let r = exp_map(&v);
            assert!(orthonormality_error(&r) < 1e-10);
            worst = worst.max((log_map(&r) - v).norm());
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    #[test]
    fn near_pi_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let axis = random_rotvec(&mut rng, 1.0).normalize();
            let v = axis * (PI - rng.gen_range(1e-6..1e-3));
            assert!((log_map(&exp_map(&v)) - v).norm() < 1e-9);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..200 {
            let v = random_rotvec(&mut rng, 2.5);
            let jr = right_jacobian(&v);
            let jr_inv = right_jacobian_inv(&v);
            assert_relative_eq!(jr * jr_inv, Matrix3::identity(), epsilon = 1e-10);
            for k in 0..3 {
                let mut dv = Vector3::zeros();
                dv[k] = h;
                let plus = exp_map(&v).transpose() * exp_map(&(v + dv));
                let minus = exp_map(&v).transpose() * exp_map(&(v - dv));
                let col = (log_map(&plus) - log_map(&minus)) / (2.0 * h);
                assert_relative_eq!(col, jr.column(k).into_owned(), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn projection_fixes_reflections() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let r = project_to_rotation(&m);
        assert!(orthonormality_error(&r) < 1e-12);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }
}
