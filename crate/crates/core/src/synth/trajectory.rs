use crate::so3::exp_map;
use crate::spline::So3Spline;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// Knot interval of generated ground-truth trajectories.
pub const TRUTH_KNOT_INTERVAL: f64 = 0.02;
/// Seconds of trajectory generated beyond each end of `[0, duration]`.
pub const TRUTH_MARGIN: f64 = 0.5;
/// Smallest acceptable eigenvalue of the angular-velocity covariance.
pub const MIN_EXCITATION: f64 = 1e-4;

#[derive(Debug, Clone)]
struct Sinusoid {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

/// Body angular velocity profile as a sum of sinusoids per axis.
#[derive(Debug, Clone)]
pub struct RateProfile {
    constant: Vector3<f64>,
    axes: [Vec<Sinusoid>; 3],
}

impl RateProfile {
    pub fn random(rng: &mut impl Rng, richness: u32) -> Self {
        if richness == 0 {
            let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dir = if dir.norm() > 1e-3 { dir.normalize() } else { Vector3::z() };
            return Self { constant: dir * rng.gen_range(1.0..3.0), axes: Default::default() };
        }
        let count = (2 + richness as usize).min(6);
        let mut axes: [Vec<Sinusoid>; 3] = Default::default();
        for axis in axes.iter_mut() {
            let peak = rng.gen_range(1.0..3.0);
            let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights {
                axis.push(Sinusoid {
                    amplitude: peak * w / total,
                    frequency: rng.gen_range(0.2..2.0),
                    phase: rng.gen_range(0.0..TAU),
                });
            }
        }
        Self { constant: Vector3::zeros(), axes }
    }

    pub fn constant(omega: Vector3<f64>) -> Self {
        Self { constant: omega, axes: Default::default() }
    }

    /// `amplitude * sin(2π frequency t)`, one shared phase on all axes.
    pub fn sinusoid(amplitude: Vector3<f64>, frequency: f64) -> Self {
        let axes = [0, 1, 2].map(|k| vec![Sinusoid { amplitude: amplitude[k], frequency, phase: 0.0 }]);
        Self { constant: Vector3::zeros(), axes }
    }

    pub fn eval(&self, t: f64) -> Vector3<f64> {
        let mut w = self.constant;
        for (k, axis) in self.axes.iter().enumerate() {
            w[k] += axis.iter().map(|s| s.amplitude * (TAU * s.frequency * t + s.phase).sin()).sum::<f64>();
        }
        w
    }
}

/// Spline over `[-TRUTH_MARGIN, duration + TRUTH_MARGIN]` whose body rate
/// follows `profile`, starting from `initial`.
pub fn spline_from_profile(profile: &RateProfile, duration: f64, initial: crate::so3::Rotation) -> So3Spline {
    let dt = TRUTH_KNOT_INTERVAL;
    let t0 = -TRUTH_MARGIN - dt;
    let n = ((duration + 2.0 * TRUTH_MARGIN) / dt).ceil() as usize + 3;
    let mut poses = Vec::with_capacity(n);
    poses.push(initial);
    for k in 1..n {
        // d_k drives the velocity around t0 + (k - 1/2) dt
        let d = profile.eval(t0 + (k as f64 - 0.5) * dt) * dt;
        let next = poses[k - 1] * exp_map(&d);
        poses.push(next);
    }
    So3Spline::new(t0, dt, poses).expect("truth spline parameters are valid")
}

/// Covariance of the spline's body rate sampled at 100 Hz over `[0, duration]`.
pub fn rate_covariance(spline: &So3Spline, duration: f64) -> Matrix3<f64> {
    let n = (duration * 100.0).floor() as usize + 1;
    let samples: Vec<Vector3<f64>> =
        (0..n).filter_map(|k| spline.angular_velocity(k as f64 * 0.01).ok()).collect();
    let mean: Vector3<f64> = samples.iter().sum::<Vector3<f64>>() / samples.len() as f64;
    samples.iter().map(|w| (w - mean) * (w - mean).transpose()).sum::<Matrix3<f64>>() / (samples.len() as f64 - 1.0)
}

/// Seeded smooth pure-rotation trajectory.
///
/// `richness` 0 gives constant angular velocity; otherwise each axis carries
/// `min(2 + richness, 6)` sinusoids between 0.2 and 2 Hz with a peak of 1 to
/// 3 rad/s. Non-constant profiles are redrawn until every axis is excited.
pub fn gen_trajectory(seed: u64, duration: f64, richness: u32) -> So3Spline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let initial = exp_map(&Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let profile = RateProfile::random(&mut rng, richness);
        let spline = spline_from_profile(&profile, duration.max(0.0), initial);
        if richness == 0 || duration < 1.0 {
            return spline;
        }
        let eig = rate_covariance(&spline, duration).symmetric_eigenvalues();
        if eig.min() > MIN_EXCITATION {
            return spline;
        }
        log::debug!("trajectory seed {seed}: excitation {:.2e} too low, redrawing", eig.min());
    }
}
