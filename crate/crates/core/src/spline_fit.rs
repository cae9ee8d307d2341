//! Fit an SO(3) spline to angular-velocity samples.
//!
//! Control poses are first obtained by integrating the (linearly
//! interpolated) rates from the first pose, which is held at identity, then
//! polished by least squares on the spline's body-frame velocity.

use crate::lsq::{levenberg_marquardt, JacobianSegment, LinearizedBlock, LmOptions, NormalEquations, Problem, SolveError};
use crate::motion::{relative_to_omega, AngularVelocitySample, MotionError, RelativeRotationSample};
use crate::so3::{exp_map, Rotation};
use crate::spline::{So3Spline, SplineError};
use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

#[derive(Debug, Clone)]
pub struct SplineFit {
    pub spline: So3Spline,
    /// RMS of `|w_spline(t_k) - w_k|` over the input samples, rad/s.
    pub velocity_rms: f64,
    pub iterations: usize,
}

/// Fit over exactly the samples' span. The spline gets
/// `ceil(span / knot_interval) + 3` control poses.
pub fn fit_spline_to_samples(samples: &[AngularVelocitySample], knot_interval: f64) -> Result<SplineFit, FitError> {
    let (first, last) = check_samples(samples)?;
    let span = last - first;
    if span < 4.0 * knot_interval {
        return Err(SplineError::InsufficientSpan { span, knot_interval }.into());
    }
    fit_spline_over(samples, knot_interval, first, last)
}

/// Relative-rotation variant: rotations are converted to midpoint rates first.
pub fn fit_spline_to_relative_rotations(
    samples: &[RelativeRotationSample],
    knot_interval: f64,
) -> Result<SplineFit, FitError> {
    let rates: Vec<_> = samples.iter().map(relative_to_omega).collect::<Result<_, _>>()?;
    fit_spline_to_samples(&rates, knot_interval)
}

/// Fit a spline whose evaluable span covers `[start, end]`, which may extend
/// beyond the samples (rates are held constant outside them).
pub fn fit_spline_over(
    samples: &[AngularVelocitySample],
    knot_interval: f64,
    start: f64,
    end: f64,
) -> Result<SplineFit, FitError> {
    check_samples(samples)?;
    if !(knot_interval > 0.0) {
        return Err(SplineError::BadKnotInterval(knot_interval).into());
    }
    let span = end - start;
    let n = (span / knot_interval - 1e-9).ceil().max(1.0) as usize + 3;
    let t0 = start - knot_interval;

    let rate_at = |t: f64| -> Vector3<f64> {
        match samples.partition_point(|s| s.t <= t) {
            0 => samples[0].omega,
            i if i == samples.len() => samples[i - 1].omega,
            i => {
                let (a, b) = (&samples[i - 1], &samples[i]);
                let f = (t - a.t) / (b.t - a.t);
                a.omega * (1.0 - f) + b.omega * f
            }
        }
    };
    let mut poses = Vec::with_capacity(n);
    let mut r = Rotation::identity();
    poses.push(r);
    for k in 1..n {
        let mid = t0 + (k as f64 - 0.5) * knot_interval;
        r *= exp_map(&(rate_at(mid) * knot_interval));
        poses.push(r);
    }
    let spline = So3Spline::new(t0, knot_interval, poses)?;

    let usable: Vec<AngularVelocitySample> = samples.iter().copied().filter(|s| spline.contains(s.t)).collect();
    let problem = VelocityFit { samples: &usable, num_poses: n };
    let opts = LmOptions { max_iterations: 30, relative_cost_tolerance: 1e-12, ..LmOptions::default() };
    let outcome = levenberg_marquardt(&problem, spline, &opts)?;
    let final_cost = problem.cost(&outcome.state)?;
    let velocity_rms = if usable.is_empty() { 0.0 } else { (final_cost / usable.len() as f64).sqrt() };
    Ok(SplineFit { spline: outcome.state, velocity_rms, iterations: outcome.iterations })
}

fn check_samples(samples: &[AngularVelocitySample]) -> Result<(f64, f64), SplineError> {
    if samples.is_empty() {
        return Err(SplineError::Empty);
    }
    for i in 1..samples.len() {
        if !(samples[i].t > samples[i - 1].t) {
            return Err(SplineError::NonMonotonic { index: i });
        }
    }
    Ok((samples[0].t, samples[samples.len() - 1].t))
}

struct VelocityFit<'a> {
    samples: &'a [AngularVelocitySample],
    num_poses: usize,
}

impl Problem for VelocityFit<'_> {
    type State = So3Spline;
    type Error = FitError;

    fn band_dim(&self) -> usize {
        3 * (self.num_poses - 1)
    }

    fn border_dim(&self) -> usize {
        0
    }

    fn linearize(&self, spline: &So3Spline) -> Result<NormalEquations, FitError> {
        let blocks: Vec<LinearizedBlock> = self
            .samples
            .par_iter()
            .map(|s| {
                let e = spline.sample(s.t, true)?;
                let jacobian = (0..4)
                    .filter(|&k| e.first_pose + k > 0)
                    .map(|k| JacobianSegment::from_matrix3(3 * (e.first_pose + k - 1), &e.d_omega[k]))
                    .collect();
                Ok(LinearizedBlock { residual: e.omega - s.omega, jacobian })
            })
            .collect::<Result<_, SplineError>>()?;
        Ok(NormalEquations::assemble(self.band_dim(), 0, &blocks))
    }

    fn cost(&self, spline: &So3Spline) -> Result<f64, FitError> {
        let parts: Vec<f64> = self
            .samples
            .par_iter()
            .map(|s| Ok((spline.angular_velocity(s.t)? - s.omega).norm_squared()))
            .collect::<Result<_, SplineError>>()?;
        Ok(parts.iter().sum())
    }

    fn retract(&self, spline: &So3Spline, delta: &DVector<f64>) -> So3Spline {
        let mut out = spline.clone();
        for (k, pose) in out.poses_mut().iter_mut().enumerate().skip(1) {
            let d = Vector3::new(delta[3 * (k - 1)], delta[3 * (k - 1) + 1], delta[3 * (k - 1) + 2]);
            *pose = crate::so3::renormalize(&(*pose * exp_map(&d)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled(rate_hz: f64, duration: f64, f: impl Fn(f64) -> Vector3<f64>) -> Vec<AngularVelocitySample> {
        let n = (duration * rate_hz).round() as usize;
        (0..=n).map(|i| i as f64 / rate_hz).map(|t| AngularVelocitySample::new(t, f(t))).collect()
    }

    #[test]
    fn constant_rate_gives_constant_velocity_spline() {
        let w = Vector3::new(0.5, -1.0, 0.25);
        let samples = sampled(100.0, 3.0, |_| w);
        let fit = fit_spline_to_samples(&samples, 0.1).unwrap();
        assert!(fit.velocity_rms < 1e-6, "rms {}", fit.velocity_rms);
        assert_eq!(fit.spline.num_poses(), 30 + 3);
        assert!(fit.spline.contains(0.0) && fit.spline.contains(3.0));
    }

    #[test]
    fn zero_rate_gives_identity_spline() {
        let samples = sampled(100.0, 1.0, |_| Vector3::zeros());
        let fit = fit_spline_to_samples(&samples, 0.1).unwrap();
        assert!(fit.spline.poses().iter().all(|p| *p == Rotation::identity()));
    }

    #[test]
    fn sinusoidal_rate_fit() {
        let amp = 2.0;
        let f = |t: f64| {
            let w = 2.0 * std::f64::consts::PI;
            Vector3::new(amp * (w * 0.5 * t).sin(), amp * (w * 0.8 * t + 1.0).sin(), amp * (w * 0.3 * t).cos())
        };
        let samples = sampled(100.0, 5.0, f);
        let fit = fit_spline_to_samples(&samples, 0.1).unwrap();
        assert!(fit.velocity_rms < 0.01 * amp, "rms {}", fit.velocity_rms);
    }

    #[test]
    fn rejects_short_or_unsorted_input() {
        let samples = sampled(100.0, 0.3, |_| Vector3::zeros());
        assert!(matches!(
            fit_spline_to_samples(&samples, 0.1),
            Err(FitError::Spline(SplineError::InsufficientSpan { .. }))
        ));
        let mut bad = sampled(100.0, 1.0, |_| Vector3::zeros());
        bad.swap(3, 4);
        assert!(matches!(
            fit_spline_to_samples(&bad, 0.1),
            Err(FitError::Spline(SplineError::NonMonotonic { index: 4 }))
        ));
    }

    #[test]
    fn relative_rotation_input() {
        let w = Vector3::new(0.0, 0.7, -0.2);
        let dt = 0.05;
        let rel: Vec<_> = (0..60)
            .map(|k| {
                let t = k as f64 * dt;
                RelativeRotationSample::new(t, t + dt, &exp_map(&(w * dt)).transpose())
            })
            .collect();
        let fit = fit_spline_to_relative_rotations(&rel, 0.1).unwrap();
        assert!(fit.velocity_rms < 1e-6);
    }
}
