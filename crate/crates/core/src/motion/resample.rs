//! Per-axis cubic interpolation of angular-velocity tracks.

use super::AngularVelocitySample;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("cubic interpolation needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonic(usize),
    #[error("query time {t} outside track span [{start}, {end}]")]
    Extrapolation { t: f64, start: f64, end: f64 },
}

/// End conditions of the interpolating cubic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubicBoundary {
    /// Third derivative continuous across the second and second-to-last
    /// samples; reproduces cubic polynomials exactly.
    #[default]
    NotAKnot,
    /// Zero second derivative at both ends.
    Natural,
}

/// Interpolating cubic spline through every sample, one per axis.
#[derive(Debug, Clone)]
pub struct CubicTrack {
    t: Vec<f64>,
    y: Vec<Vector3<f64>>,
    /// second derivatives at the samples
    m: Vec<Vector3<f64>>,
}

impl CubicTrack {
    pub fn new(samples: &[AngularVelocitySample], boundary: CubicBoundary) -> Result<Self, ResampleError> {
        let n = samples.len();
        if n < 4 {
            return Err(ResampleError::TooFewSamples(n));
        }
        for i in 1..n {
            if !(samples[i].t > samples[i - 1].t) {
                return Err(ResampleError::NonMonotonic(i));
            }
        }
        let t: Vec<f64> = samples.iter().map(|s| s.t).collect();
        let y: Vec<Vector3<f64>> = samples.iter().map(|s| s.omega).collect();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();

        // Unknowns are the interior second derivatives M_1 .. M_(n-2).
        let k = n - 2;
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![Vector3::zeros(); k];
        for r in 0..k {
            let i = r + 1;
            sub[r] = h[i - 1];
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            sup[r] = h[i];
            rhs[r] = ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]) * 6.0;
        }
        if boundary == CubicBoundary::NotAKnot {
            // M_0 = ((h0 + h1) M_1 - h0 M_2) / h1 folded into the first row
            let (h0, h1) = (h[0], h[1]);
            diag[0] = (h0 + h1) * (h0 + 2.0 * h1) / h1;
            sup[0] = (h1 * h1 - h0 * h0) / h1;
            let (ha, hb) = (h[n - 3], h[n - 2]);
            diag[k - 1] = (ha + hb) * (2.0 * ha + hb) / ha;
            sub[k - 1] = (ha * ha - hb * hb) / ha;
        }
        let interior = solve_tridiagonal(&sub, &diag, &sup, &rhs);

        let mut m = vec![Vector3::zeros(); n];
        m[1..(k + 1)].copy_from_slice(&interior);
        if boundary == CubicBoundary::NotAKnot {
            let (h0, h1) = (h[0], h[1]);
            m[0] = (m[1] * (h0 + h1) - m[2] * h0) / h1;
            let (ha, hb) = (h[n - 3], h[n - 2]);
            m[n - 1] = (m[n - 2] * (ha + hb) - m[n - 3] * hb) / ha;
        }
        Ok(Self { t, y, m })
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> Result<Vector3<f64>, ResampleError> {
        if !(x >= self.start() && x <= self.end()) {
            return Err(ResampleError::Extrapolation { t: x, start: self.start(), end: self.end() });
        }
        let i = match self.t.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return Ok(self.y[i]),
            Err(i) => i - 1,
        };
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - x) / h;
        let b = (x - self.t[i]) / h;
        Ok(self.y[i] * a
            + self.y[i + 1] * b
            + (self.m[i] * (a * a * a - a) + self.m[i + 1] * (b * b * b - b)) * (h * h / 6.0))
    }
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![Vector3::zeros(); n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - d[i - 1] * sub[i]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - d[i + 1] * c[i];
    }
    d
}

/// Interpolate `samples` at `times`. Every query must lie within the track.
pub fn resample_cubic(
    samples: &[AngularVelocitySample],
    times: &[f64],
    boundary: CubicBoundary,
) -> Result<Vec<AngularVelocitySample>, ResampleError> {
    let track = CubicTrack::new(samples, boundary)?;
    times.iter().map(|&t| Ok(AngularVelocitySample::new(t, track.eval(t)?))).collect()
}
