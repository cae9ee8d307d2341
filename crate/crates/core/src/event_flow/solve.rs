//! Rotation-only motion-field solve over normal-flow observations.

use super::camera::CameraIntrinsics;
use super::flow::NormalFlowObservation;
use crate::motion::AngularVelocitySample;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// inlier threshold as a multiple of the best model's median |residual|
    pub threshold_factor: f64,
    /// lower bound on the inlier threshold, px/s
    pub threshold_floor: f64,
    pub min_inlier_fraction: f64,
    pub min_observations: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 200, threshold_factor: 1.5, threshold_floor: 0.1, min_inlier_fraction: 0.5, min_observations: 10 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("{n} normal-flow observations, need {min}")]
    TooFewObservations { n: usize, min: usize },
    #[error("inlier set does not constrain all three rotation axes")]
    Degenerate,
    #[error("{inliers} of {total} observations are inliers, below fraction {min_fraction}")]
    LowSupport { inliers: usize, total: usize, min_fraction: f64 },
    #[error("{inliers} inliers, need {min}")]
    TooFewInliers { inliers: usize, min: usize },
}

/// Rotation-only motion field at normalized coordinates: `ẋ = B(x) ω`.
pub fn motion_field_matrix(p: &Vector2<f64>) -> Matrix2x3<f64> {
    let (x, y) = (p.x, p.y);
    Matrix2x3::new(x * y, -(1.0 + x * x), y, 1.0 + y * y, -x * y, -x)
}

/// Pixel flow induced by body angular velocity `omega` at pixel `px`.
pub fn pixel_flow(cam: &CameraIntrinsics, px: &Vector2<f64>, omega: &Vector3<f64>) -> Vector2<f64> {
    let xn = cam.undistort_pixel(px);
    let s = Matrix2::new(cam.fx, 0.0, 0.0, cam.fy);
    s * cam.distortion_jacobian(&xn) * motion_field_matrix(&xn) * omega
}

/// One linear constraint `a·ω = rhs` per observation, scaled by `1/‖n‖` so the
/// residual is the normal-flow magnitude error in px/s.
pub fn constraint_row(cam: &CameraIntrinsics, o: &NormalFlowObservation) -> (Vector3<f64>, f64) {
    let xn = cam.undistort_pixel(&o.x);
    let s = Matrix2::new(cam.fx, 0.0, 0.0, cam.fy);
    let m = s * cam.distortion_jacobian(&xn) * motion_field_matrix(&xn);
    let norm = o.n.norm();
    ((m.transpose() * o.n) / norm, norm)
}

fn least_squares(rows: &[(Vector3<f64>, f64)], idx: impl Iterator<Item = usize>) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for i in idx {
        let (a, b) = &rows[i];
        ata += a * a.transpose();
        atb += a * *b;
    }
    let eig = SymmetricEigen::new(ata).eigenvalues;
    if !(eig.min() > 1e-12 * eig.max().max(f64::MIN_POSITIVE)) {
        return None;
    }
    ata.cholesky().map(|c| c.solve(&atb))
}

fn median_abs(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Robust angular velocity from normal flow, stamped at `t_mid`.
///
/// Hypotheses come from random minimal triples and are ranked by median
/// absolute residual. The winner's inliers are refit in least squares.
pub fn estimate_angular_velocity<R: Rng>(
    obs: &[NormalFlowObservation],
    cam: &CameraIntrinsics,
    t_mid: f64,
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<AngularVelocitySample, EstimateError> {
    let n = obs.len();
    let min = cfg.min_observations.max(3);
    if n < min {
        return Err(EstimateError::TooFewObservations { n, min });
    }
    let rows: Vec<(Vector3<f64>, f64)> = obs.iter().map(|o| constraint_row(cam, o)).collect();
    let residuals = |w: &Vector3<f64>, out: &mut Vec<f64>| {
        out.clear();
        out.extend(rows.iter().map(|(a, b)| (a.dot(w) - b).abs()));
    };

    let mut scratch = Vec::with_capacity(n);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for _ in 0..cfg.iterations {
        let pick = sample(rng, n, 3);
        let m = Matrix3::from_rows(&[rows[pick.index(0)].0.transpose(), rows[pick.index(1)].0.transpose(), rows[pick.index(2)].0.transpose()]);
        let rhs = Vector3::new(rows[pick.index(0)].1, rows[pick.index(1)].1, rows[pick.index(2)].1);
        let scale = m.row(0).norm() * m.row(1).norm() * m.row(2).norm();
        if !(m.determinant().abs() > 1e-9 * scale) {
            continue;
        }
        let Some(w) = m.lu().solve(&rhs) else { continue };
        residuals(&w, &mut scratch);
        let med = median_abs(&mut scratch);
        if best.map_or(true, |(b, _)| med < b) {
            best = Some((med, w));
        }
    }
    let (best_median, mut omega) = match best {
        Some(b) => b,
        None => least_squares(&rows, 0..n).map(|w| (f64::INFINITY, w)).ok_or(EstimateError::Degenerate)?,
    };
    let threshold = if best_median.is_finite() {
        (cfg.threshold_factor * best_median).max(cfg.threshold_floor)
    } else {
        f64::INFINITY
    };

    for _ in 0..2 {
        residuals(&omega, &mut scratch);
        let inliers: Vec<usize> = (0..n).filter(|&i| scratch[i] <= threshold).collect();
        if inliers.len() < 3 {
            return Err(EstimateError::Degenerate);
        }
        omega = least_squares(&rows, inliers.iter().copied()).ok_or(EstimateError::Degenerate)?;
    }
    residuals(&omega, &mut scratch);
    let count = (0..n).filter(|&i| scratch[i] <= threshold).count();
    let support = count as f64 / n as f64;
    if support < cfg.min_inlier_fraction {
        return Err(EstimateError::LowSupport { inliers: count, total: n, min_fraction: cfg.min_inlier_fraction });
    }
    if count < min {
        return Err(EstimateError::TooFewInliers { inliers: count, min });
    }
    Ok(AngularVelocitySample { t: t_mid, omega, inliers: count, support })
}

/// Indices of observations within `threshold` px/s of the model.
pub fn inlier_mask(obs: &[NormalFlowObservation], cam: &CameraIntrinsics, omega: &Vector3<f64>, threshold: f64) -> Vec<bool> {
    obs.iter()
        .map(|o| {
            let (a, b) = constraint_row(cam, o);
            (a.dot(omega) - b).abs() <= threshold
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(200.0, 200.0, 120.0, 90.0, 240, 180)
    }

    /// Exact flows projected onto random unit directions.
    fn synth(cam: &CameraIntrinsics, omega: &Vector3<f64>, count: usize, seed: u64) -> Vec<NormalFlowObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < count {
            let px = Vector2::new(rng.gen_range(0.0..cam.width as f64), rng.gen_range(0.0..cam.height as f64));
            let u = pixel_flow(cam, &px, omega);
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let d = Vector2::new(ang.cos(), ang.sin());
            let mag = d.dot(&u);
            if mag.abs() < 1.0 {
                continue;
            }
            out.push(NormalFlowObservation { x: px, t: 0.0, n: d * mag, var_norm: 0.0 });
        }
        out
    }

    #[test]
    fn principal_point_flow() {
        let u = pixel_flow(&cam(), &Vector2::new(120.0, 90.0), &Vector3::new(0.0, 0.7, 0.0));
        assert!((u - Vector2::new(-200.0 * 0.7, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn motion_field_matches_projection_derivative() {
        // project a fixed world direction through a rotating camera and difference
        let omega = Vector3::new(0.3, -0.8, 0.5);
        let p0 = Vector3::new(0.2, -0.15, 1.0);
        let h = 1e-6;
        let proj = |t: f64| {
            let r = crate::so3::exp_map(&(omega * t));
            let pc = r.inverse() * p0;
            Vector2::new(pc.x / pc.z, pc.y / pc.z)
        };
        let fd = (proj(h) - proj(-h)) / (2.0 * h);
        let analytic = motion_field_matrix(&Vector2::new(0.2, -0.15)) * omega;
        assert!((fd - analytic).norm() < 1e-8);
    }

    #[test]
    fn noise_free_recovery() {
        let c = cam();
        let omega = Vector3::new(0.0, 0.0, 0.5);
        let obs = synth(&c, &omega, 60, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = estimate_angular_velocity(&obs, &c, 1.0, &RansacConfig::default(), &mut rng).unwrap();
        assert!((s.omega - omega).norm() < 1e-9);
        assert_eq!(s.inliers, 60);
        for o in &obs {
            let (a, b) = constraint_row(&c, o);
            assert!((a.dot(&omega) - b).abs() < 1e-10);
        }
    }

    #[test]
    fn distorted_camera_recovery() {
        let c = CameraIntrinsics { distortion: [-0.25, 0.06, 0.001, -0.001], ..cam() };
        let omega = Vector3::new(0.4, -1.1, 0.2);
        let obs = synth(&c, &omega, 80, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = estimate_angular_velocity(&obs, &c, 0.0, &RansacConfig::default(), &mut rng).unwrap();
        assert!((s.omega - omega).norm() < 1e-8);
    }

    #[test]
    fn outliers_are_rejected() {
        let c = cam();
        let omega = Vector3::new(0.6, -0.4, 1.2);
        let mut obs = synth(&c, &omega, 200, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n_out = 60;
        for o in obs.iter_mut().take(n_out) {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            o.n = Vector2::new(ang.cos(), ang.sin()) * rng.gen_range(5.0..400.0);
        }
        let s = estimate_angular_velocity(&obs, &c, 0.0, &RansacConfig::default(), &mut rng).unwrap();
        assert!((s.omega - omega).norm() < 1e-3);
        let mask = inlier_mask(&obs, &c, &s.omega, 0.1);
        assert!(mask[n_out..].iter().all(|&m| m));
        assert!(mask[..n_out].iter().filter(|&&m| m).count() <= 1);
    }

    #[test]
    fn optical_axis_rotation_permutes_omega() {
        let c = cam();
        let omega = Vector3::new(0.3, 0.9, -0.4);
        let obs = synth(&c, &omega, 100, 4);
        // rotate pixels by +90° about the principal point
        let rot = |v: Vector2<f64>| Vector2::new(-v.y, v.x);
        let pp = Vector2::new(c.cx, c.cy);
        let turned: Vec<_> = obs
            .iter()
            .map(|o| NormalFlowObservation { x: pp + rot(o.x - pp), n: rot(o.n), ..*o })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = estimate_angular_velocity(&obs, &c, 0.0, &RansacConfig::default(), &mut rng).unwrap();
        let b = estimate_angular_velocity(&turned, &c, 0.0, &RansacConfig::default(), &mut rng).unwrap();
        let expected = Vector3::new(-a.omega.y, a.omega.x, a.omega.z);
        assert!((b.omega - expected).norm() < 1e-6);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = cam();
        let mut obs = synth(&c, &Vector3::new(0.1, 0.2, 0.3), 50, 5);
        obs[3].n *= 7.0;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            estimate_angular_velocity(&obs, &c, 0.0, &RansacConfig::default(), &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.omega.map(f64::to_bits), b.omega.map(f64::to_bits));
    }

    #[test]
    fn errors() {
        let c = cam();
        let obs = synth(&c, &Vector3::new(0.1, 0.2, 0.3), 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            estimate_angular_velocity(&obs, &c, 0.0, &RansacConfig::default(), &mut rng),
            Err(EstimateError::TooFewObservations { n: 5, min: 10 })
        ));
        // every flow at the same pixel and direction constrains one axis only
        let same = vec![NormalFlowObservation { x: Vector2::new(120.0, 90.0), t: 0.0, n: Vector2::new(3.0, 0.0), var_norm: 0.0 }; 20];
        assert_eq!(
            estimate_angular_velocity(&same, &c, 0.0, &RansacConfig::default(), &mut rng),
            Err(EstimateError::Degenerate)
        );
    }
}
