//! Local plane fit `t = a x + b y + c` on the time surface.

use super::time_surface::TimeSurface;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaneConfig {
    /// Half-width of the square neighborhood in pixels.
    pub radius: u32,
    pub min_support: usize,
    /// Upper bound on the condition number of `XᵀX`.
    pub max_condition: f64,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self { radius: 2, min_support: 8, max_condition: 1e8 }
    }
}

/// `p = (a, b, c)` with `(a, b)` in s/px and `c` the surface time at the
/// center pixel. Coordinates are centered on the fit pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub p: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub n: usize,
    pub rss: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneReject {
    #[error("no event at the center pixel")]
    EmptyCenter,
    #[error("neighborhood radius {0} below 2")]
    RadiusTooSmall(u32),
    #[error("insufficient support: {n} events, need {min}")]
    InsufficientSupport { n: usize, min: usize },
    #[error("degenerate geometry: condition number {0:.3e}")]
    Degenerate(f64),
}

/// Fit a plane to the same-polarity neighbors of `(cx, cy)` whose stored time
/// lies within `max_age` of the center's.
///
/// `Cov(p) = σ² (XᵀX)⁻¹ / (N − 3)` with `σ²` the raw residual sum of squares.
pub fn fit_local_plane(
    surface: &TimeSurface,
    cx: u32,
    cy: u32,
    max_age: f64,
    cfg: &PlaneConfig,
) -> Result<PlaneFit, PlaneReject> {
    if cfg.radius < 2 {
        return Err(PlaneReject::RadiusTooSmall(cfg.radius));
    }
    let t_c = surface.time(cx, cy);
    if t_c == TimeSurface::NEVER {
        return Err(PlaneReject::EmptyCenter);
    }
    let pol = surface.polarity(cx, cy);
    let r = cfg.radius as i64;
    let mut xtx = Matrix3::zeros();
    let mut xtt = Vector3::zeros();
    let mut samples = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for dy in -r..=r {
        let y = cy as i64 + dy;
        if y < 0 || y >= surface.height() as i64 {
            continue;
        }
        for dx in -r..=r {
            let x = cx as i64 + dx;
            if x < 0 || x >= surface.width() as i64 {
                continue;
            }
            let t = surface.time(x as u32, y as u32);
            if t == TimeSurface::NEVER || surface.polarity(x as u32, y as u32) != pol {
                continue;
            }
            // times are kept relative to the center to avoid cancellation
            let dt = t - t_c;
            if dt.abs() > max_age {
                continue;
            }
            let row = Vector3::new(dx as f64, dy as f64, 1.0);
            xtx += row * row.transpose();
            xtt += row * dt;
            samples.push((row, dt));
        }
    }
    let n = samples.len();
    if n < cfg.min_support.max(4) {
        return Err(PlaneReject::InsufficientSupport { n, min: cfg.min_support.max(4) });
    }
    let eig = SymmetricEigen::new(xtx).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > cfg.max_condition {
        return Err(PlaneReject::Degenerate(condition));
    }
    let chol = xtx.cholesky().ok_or(PlaneReject::Degenerate(condition))?;
    let q = chol.solve(&xtt);
    let rss: f64 = samples.iter().map(|(row, dt)| (dt - row.dot(&q)).powi(2)).sum();
    let cov = chol.inverse() * (rss / (n as f64 - 3.0));
    Ok(PlaneFit { p: Vector3::new(q.x, q.y, q.z + t_c), cov: 0.5 * (cov + cov.transpose()), n, rss })
}
