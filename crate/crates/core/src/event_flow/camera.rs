//! Pinhole camera with radial-tangential distortion.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// `[k1, k2, p1, p2]`
    #[serde(default)]
    pub distortion: [f64; 4],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, distortion: [0.0; 4], width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0 && self.height > 0
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion.iter().any(|&k| k != 0.0)
    }

    /// Apply lens distortion to undistorted normalized coordinates.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2] = self.distortion;
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Jacobian of [`distort`](Self::distort) at undistorted normalized coordinates.
    pub fn distortion_jacobian(&self, p: &Vector2<f64>) -> Matrix2<f64> {
        let [k1, k2, p1, p2] = self.distortion;
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        let dradial = 2.0 * (k1 + 2.0 * k2 * r2);
        Matrix2::new(
            radial + x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
            x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }

    /// Pixel coordinates to undistorted normalized coordinates.
    pub fn undistort_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let target = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        if !self.has_distortion() {
            return target;
        }
        let mut p = target;
        for _ in 0..20 {
            let err = self.distort(&p) - target;
            if err.norm() < 1e-14 {
                break;
            }
            match self.distortion_jacobian(&p).try_inverse() {
                Some(inv) => p -= inv * err,
                None => break,
            }
        }
        p
    }

    /// Project a camera-frame direction to pixels; `None` behind the camera.
    pub fn project(&self, bearing: &Vector3<f64>) -> Option<Vector2<f64>> {
        if bearing.z <= 1e-6 {
            return None;
        }
        let d = self.distort(&Vector2::new(bearing.x / bearing.z, bearing.y / bearing.z));
        Some(Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy))
    }

    pub fn in_bounds(&self, px: &Vector2<f64>) -> bool {
        px.x > -0.5 && px.y > -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn distorted() -> CameraIntrinsics {
        CameraIntrinsics { distortion: [-0.2, 0.05, 0.001, -0.002], ..CameraIntrinsics::pinhole(200.0, 210.0, 120.0, 90.0, 240, 180) }
    }

    #[test]
    fn undistort_inverts_projection() {
        let cam = distorted();
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.2), (-0.5, 0.4), (0.1, 0.35)] {
            let px = cam.project(&Vector3::new(x, y, 1.0)).unwrap();
            assert_relative_eq!(cam.undistort_pixel(&px), Vector2::new(x, y), epsilon = 1e-12);
        }
    }

    #[test]
    fn distortion_jacobian_matches_finite_differences() {
        let cam = distorted();
        let p = Vector2::new(0.27, -0.31);
        let j = cam.distortion_jacobian(&p);
        let h = 1e-7;
        for c in 0..2 {
            let mut dp = Vector2::zeros();
            dp[c] = h;
            let fd = (cam.distort(&(p + dp)) - cam.distort(&(p - dp))) / (2.0 * h);
            assert_relative_eq!(j.column(c).into_owned(), fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn behind_camera_is_not_projected() {
        assert!(distorted().project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }
}
