//! Per-sensor motion tracks.
//!
//! Every sensor contributes either body-frame angular velocities (event
//! camera, gyroscope) or relative rotations between consecutive frames or
//! scans (frame camera, LiDAR). Relative rotations follow the `R_cj_ci`
//! convention: the stored rotation maps coordinates in the frame at `t_i`
//! into the frame at `t_j`.

mod io;
mod resample;

pub use io::{load_track, load_track_with, save_track, LoadOptions, TrackError};
pub use resample::{resample_cubic, CubicBoundary, CubicTrack, ResampleError};

use crate::so3::{exp_map, log_map, RotVec, Rotation};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Event,
    Imu,
    Frame,
    Lidar,
}

impl SensorKind {
    /// Whether the sensor reports relative rotations rather than rates.
    pub fn is_relative(self) -> bool {
        matches!(self, SensorKind::Frame | SensorKind::Lidar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Event => "event",
            SensorKind::Imu => "imu",
            SensorKind::Frame => "frame",
            SensorKind::Lidar => "lidar",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "event" => Ok(SensorKind::Event),
            "imu" | "gyro" => Ok(SensorKind::Imu),
            "frame" | "camera" => Ok(SensorKind::Frame),
            "lidar" => Ok(SensorKind::Lidar),
            other => Err(format!("unknown sensor kind '{other}'")),
        }
    }
}

/// First-order kinematic state of a sensor at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularVelocitySample {
    pub t: f64,
    /// rad/s, sensor body frame
    pub omega: Vector3<f64>,
    pub inliers: usize,
    pub support: f64,
}

impl AngularVelocitySample {
    pub fn new(t: f64, omega: Vector3<f64>) -> Self {
        Self { t, omega, inliers: 0, support: 1.0 }
    }
}

/// Rotation between two sensor frames, `R_cj_ci` convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeRotationSample {
    pub t_i: f64,
    pub t_j: f64,
    /// rotation vector of `R_cj_ci`
    pub rotvec: RotVec,
}

impl RelativeRotationSample {
    pub fn new(t_i: f64, t_j: f64, rotation: &Rotation) -> Self {
        Self { t_i, t_j, rotvec: log_map(rotation) }
    }

    pub fn rotation(&self) -> Rotation {
        exp_map(&self.rotvec)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("interval must be positive: t_i = {t_i}, t_j = {t_j}")]
    BadInterval { t_i: f64, t_j: f64 },
    #[error("relative rotation of {angle:.4} rad between {t_i} and {t_j} is at the pi ambiguity; sample more finely")]
    AmbiguousRotation { t_i: f64, t_j: f64, angle: f64 },
}

/// Average angular velocity over a relative-rotation interval, stamped at the
/// interval midpoint.
pub fn relative_to_omega(s: &RelativeRotationSample) -> Result<AngularVelocitySample, MotionError> {
    let dt = s.t_j - s.t_i;
    if !(dt > 0.0) {
        return Err(MotionError::BadInterval { t_i: s.t_i, t_j: s.t_j });
    }
    let v = log_map(&s.rotation());
    let angle = v.norm();
    if angle > std::f64::consts::PI - 1e-6 {
        return Err(MotionError::AmbiguousRotation { t_i: s.t_i, t_j: s.t_j, angle });
    }
    // R_cj_ci is the inverse of the body increment R_ci_cj = exp(w dt)
    Ok(AngularVelocitySample::new(0.5 * (s.t_i + s.t_j), -v / dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrack {
    pub id: String,
    pub kind: SensorKind,
    pub angular_velocity: Vec<AngularVelocitySample>,
    pub relative_rotations: Vec<RelativeRotationSample>,
}

impl SensorTrack {
    pub fn from_rates(id: impl Into<String>, kind: SensorKind, samples: Vec<AngularVelocitySample>) -> Self {
        Self { id: id.into(), kind, angular_velocity: samples, relative_rotations: Vec::new() }
    }

    pub fn from_relative(id: impl Into<String>, kind: SensorKind, samples: Vec<RelativeRotationSample>) -> Self {
        Self { id: id.into(), kind, angular_velocity: Vec::new(), relative_rotations: samples }
    }

    pub fn len(&self) -> usize {
        if self.kind.is_relative() {
            self.relative_rotations.len()
        } else {
            self.angular_velocity.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time span `(first, last)` covered by the track.
    pub fn span(&self) -> Option<(f64, f64)> {
        if self.kind.is_relative() {
            Some((self.relative_rotations.first()?.t_i, self.relative_rotations.last()?.t_j))
        } else {
            Some((self.angular_velocity.first()?.t, self.angular_velocity.last()?.t))
        }
    }

    /// Native sample rate in Hz.
    pub fn rate_hz(&self) -> f64 {
        match self.span() {
            Some((a, b)) if b > a && self.len() > 1 => {
                let n = if self.kind.is_relative() { self.len() } else { self.len() - 1 };
                n as f64 / (b - a)
            }
            _ => 0.0,
        }
    }

    /// Angular velocities, converting relative rotations to midpoint rates.
    pub fn omega_samples(&self) -> Result<Vec<AngularVelocitySample>, MotionError> {
        if self.kind.is_relative() {
            self.relative_rotations.iter().map(relative_to_omega).collect()
        } else {
            Ok(self.angular_velocity.clone())
        }
    }

    /// Copy of the track with every timestamp shifted by `delta` seconds.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.angular_velocity {
            s.t += delta;
        }
        for s in &mut out.relative_rotations {
            s.t_i += delta;
            s.t_j += delta;
        }
        out
    }

    /// Samples fully inside `[start, end]`.
    pub fn windowed(&self, start: f64, end: f64) -> Self {
        let mut out = self.clone();
        out.angular_velocity.retain(|s| s.t >= start && s.t <= end);
        out.relative_rotations.retain(|s| s.t_i >= start && s.t_j <= end);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_rotation_gives_zero_rate() {
        let s = RelativeRotationSample::new(1.0, 1.3, &Rotation::identity());
        let w = relative_to_omega(&s).unwrap();
        assert_eq!(w.omega, Vector3::zeros());
        assert_relative_eq!(w.t, 1.15);
    }

    #[test]
    fn constant_rate_is_recovered() {
        // 0.1 rad/s about z over 50 ms: body increment 0.005 rad
        let w = Vector3::new(0.0, 0.0, 0.1);
        let dt = 0.05;
        let s = RelativeRotationSample::new(2.0, 2.0 + dt, &exp_map(&(w * dt)).transpose());
        let out = relative_to_omega(&s).unwrap();
        assert_relative_eq!(out.omega, w, epsilon = 1e-12);
        assert_relative_eq!(out.t, 2.025);
    }

    #[test]
    fn constant_rate_sequence_is_exact() {
        let w = Vector3::new(0.4, -1.3, 0.8);
        let dt = 1.0 / 30.0;
        for k in 0..100 {
            let t_i = k as f64 * dt;
            let s = RelativeRotationSample::new(t_i, t_i + dt, &exp_map(&(w * dt)).transpose());
            assert!((relative_to_omega(&s).unwrap().omega - w).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_interval_and_half_turn() {
        let s = RelativeRotationSample::new(1.0, 1.0, &Rotation::identity());
        assert!(matches!(relative_to_omega(&s), Err(MotionError::BadInterval { .. })));
        let s = RelativeRotationSample { t_i: 0.0, t_j: 0.1, rotvec: Vector3::new(std::f64::consts::PI, 0.0, 0.0) };
        assert!(matches!(relative_to_omega(&s), Err(MotionError::AmbiguousRotation { .. })));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("IMU".parse::<SensorKind>().unwrap(), SensorKind::Imu);
        assert!("radar".parse::<SensorKind>().is_err());
    }
}
