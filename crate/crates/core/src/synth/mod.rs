//! Synthetic rig: ground-truth trajectory and simulated sensor streams.
//!
//! Conventions, shared with the refinement residuals:
//! - the trajectory `R(t)` maps event-camera coordinates into the world;
//! - sensor `o` with extrinsic `R^e_o` has orientation `R(t) R^e_o`, so that
//!   `ω_e = R^e_o ω_o`;
//! - a sample stamped `t` by sensor `o` observes the trajectory at `t + τ_o`.

pub mod events;
pub mod trajectory;

pub use events::{simulate_events, SimulatedEvents};
pub use trajectory::{gen_trajectory, spline_from_profile, RateProfile};

use crate::event_flow::{CameraIntrinsics, Event};
use crate::motion::{AngularVelocitySample, RelativeRotationSample, SensorKind, SensorTrack};
use crate::so3::{exp_map, RotVec, Rotation};
use crate::spline::So3Spline;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventCameraSpec {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub landmarks: usize,
    /// edge length in pixels; 0 gives point landmarks
    pub edge_length_px: f64,
    pub edge_spacing_px: f64,
    /// pixel displacement per event
    pub theta_px: f64,
    /// timestamp jitter standard deviation, s
    pub jitter: f64,
    /// spurious events per second over the whole sensor
    pub spurious_rate: f64,
    /// integration step of the simulator, s
    pub sim_step: f64,
}

impl Default for EventCameraSpec {
    fn default() -> Self {
        Self {
            id: "event".into(),
            intrinsics: CameraIntrinsics::pinhole(250.0, 250.0, 172.5, 129.5, 346, 260),
            landmarks: 2000,
            edge_length_px: 6.0,
            edge_spacing_px: 0.7,
            theta_px: 1.0,
            jitter: 1e-4,
            spurious_rate: 2000.0,
            sim_step: 2e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    /// rotation vector of `R^e_o`, rad
    pub rotation: RotVec,
    /// time offset `τ^e_o`, s
    pub offset: f64,
    pub rate_hz: f64,
    /// gyro white noise in rad/s, or per-pair rotation noise in rad
    pub noise: f64,
    /// gyro bias, rad/s
    #[serde(default)]
    pub bias: Vector3<f64>,
}

impl SensorSpec {
    pub fn extrinsic(&self) -> Rotation {
        exp_map(&self.rotation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSpec {
    pub duration: f64,
    pub richness: u32,
    pub tau_max: f64,
    pub event: EventCameraSpec,
    pub sensors: Vec<SensorSpec>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("sensor '{id}': rate must be positive, got {rate}")]
    BadRate { id: String, rate: f64 },
    #[error("sensor '{id}': |offset| {offset} s exceeds tau_max {tau_max} s")]
    OffsetTooLarge { id: String, offset: f64, tau_max: f64 },
    #[error("sensor '{id}': kind '{kind}' cannot be simulated as an extra sensor")]
    BadKind { id: String, kind: SensorKind },
    #[error("duplicate sensor id '{0}'")]
    DuplicateId(String),
    #[error("invalid event camera intrinsics")]
    BadIntrinsics,
    #[error("negative noise or duration")]
    Negative,
}

const DEG: f64 = std::f64::consts::PI / 180.0;

impl Default for RigSpec {
    fn default() -> Self {
        Self::four_sensor(30.0)
    }
}

impl RigSpec {
    /// Event camera, IMU, frame camera and LiDAR with default noise.
    pub fn four_sensor(duration: f64) -> Self {
        Self {
            duration,
            richness: 3,
            tau_max: 0.2,
            event: EventCameraSpec::default(),
            sensors: vec![
                SensorSpec {
                    id: "imu".into(),
                    kind: SensorKind::Imu,
                    rotation: Vector3::new(12.0, -35.0, 80.0) * DEG,
                    offset: 0.012,
                    rate_hz: 200.0,
                    noise: 0.005,
                    bias: Vector3::new(0.01, -0.02, 0.005),
                },
                SensorSpec {
                    id: "frame".into(),
                    kind: SensorKind::Frame,
                    rotation: Vector3::new(-40.0, 15.0, 5.0) * DEG,
                    offset: -0.025,
                    rate_hz: 20.0,
                    noise: 0.05 * DEG,
                    bias: Vector3::zeros(),
                },
                SensorSpec {
                    id: "lidar".into(),
                    kind: SensorKind::Lidar,
                    rotation: Vector3::new(3.0, 92.0, -20.0) * DEG,
                    offset: 0.041,
                    rate_hz: 10.0,
                    noise: 0.05 * DEG,
                    bias: Vector3::zeros(),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<(), RigError> {
        if !self.event.intrinsics.is_valid() || !(self.event.theta_px > 0.0) || !(self.event.sim_step > 0.0) {
            return Err(RigError::BadIntrinsics);
        }
        if self.duration < 0.0 || self.event.jitter < 0.0 || self.event.spurious_rate < 0.0 {
            return Err(RigError::Negative);
        }
        let mut ids = vec![self.event.id.clone()];
        for s in &self.sensors {
            if ids.contains(&s.id) {
                return Err(RigError::DuplicateId(s.id.clone()));
            }
            ids.push(s.id.clone());
            if s.kind == SensorKind::Event {
                return Err(RigError::BadKind { id: s.id.clone(), kind: s.kind });
            }
            if !(s.rate_hz > 0.0) {
                return Err(RigError::BadRate { id: s.id.clone(), rate: s.rate_hz });
            }
            if !(s.offset.abs() < self.tau_max) || self.tau_max > trajectory::TRUTH_MARGIN {
                return Err(RigError::OffsetTooLarge { id: s.id.clone(), offset: s.offset, tau_max: self.tau_max });
            }
            if s.noise < 0.0 {
                return Err(RigError::Negative);
            }
        }
        Ok(())
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }
}

/// Sample stamps `k / rate` inside `[0, duration]`.
fn stamps(rate_hz: f64, duration: f64) -> impl Iterator<Item = f64> {
    let n = if duration >= 0.0 { (duration * rate_hz + 1e-9).floor() as usize + 1 } else { 0 };
    (0..n).map(move |k| k as f64 / rate_hz)
}

/// Gyro samples `ω_i(t) = R^e_iᵀ ω(t + τ) − b + n`.
pub fn simulate_imu(spline: &So3Spline, spec: &SensorSpec, duration: f64, rng: &mut impl Rng) -> Vec<AngularVelocitySample> {
    let re_t = spec.extrinsic().inverse();
    let noise = Normal::new(0.0, spec.noise).unwrap();
    stamps(spec.rate_hz, duration)
        .filter_map(|t| {
            let w = spline.angular_velocity(t + spec.offset).ok()?;
            let n = Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            Some(AngularVelocitySample::new(t, re_t * w - spec.bias + n))
        })
        .collect()
}

/// Consecutive-pair rotations `R^{c_j}_{c_i} = R_c(t_j)ᵀ R_c(t_i)` with
/// `R_c(t) = R(t + τ) R^e`, perturbed by `exp(n)` on the right.
pub fn simulate_relative_rotations(
    spline: &So3Spline,
    spec: &SensorSpec,
    duration: f64,
    rng: &mut impl Rng,
) -> Vec<RelativeRotationSample> {
    let re = spec.extrinsic();
    let noise = Normal::new(0.0, spec.noise).unwrap();
    let poses: Vec<(f64, Rotation)> = stamps(spec.rate_hz, duration)
        .filter_map(|t| Some((t, spline.eval(t + spec.offset).ok()? * re)))
        .collect();
    poses
        .windows(2)
        .map(|w| {
            let (ti, ri) = w[0];
            let (tj, rj) = w[1];
            let n = Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            RelativeRotationSample::new(ti, tj, &(rj.inverse() * ri * exp_map(&n)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulatedRig {
    pub spec: RigSpec,
    pub seed: u64,
    pub truth: So3Spline,
    pub events: Vec<Event>,
    /// non-event sensors in spec order
    pub tracks: Vec<SensorTrack>,
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    crate::event_flow::track::window_seed(seed, k as usize)
}

/// Simulate every sensor of `spec`.
pub fn simulate_rig(spec: &RigSpec, seed: u64) -> Result<SimulatedRig, RigError> {
    spec.validate()?;
    let truth = gen_trajectory(seed, spec.duration, spec.richness);
    let events = simulate_events(&truth, &spec.event, spec.duration, sub_seed(seed, 1)).events;
    let tracks = simulate_tracks(&truth, spec, seed);
    Ok(SimulatedRig { spec: spec.clone(), seed, truth, events, tracks })
}

/// Only the non-event sensors; the event camera is left out.
pub fn simulate_tracks(truth: &So3Spline, spec: &RigSpec, seed: u64) -> Vec<SensorTrack> {
    spec.sensors
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2 + k as u64));
            match s.kind {
                SensorKind::Imu | SensorKind::Event => {
                    SensorTrack::from_rates(s.id.clone(), s.kind, simulate_imu(truth, s, spec.duration, &mut rng))
                }
                SensorKind::Frame | SensorKind::Lidar => SensorTrack::from_relative(
                    s.id.clone(),
                    s.kind,
                    simulate_relative_rotations(truth, s, spec.duration, &mut rng),
                ),
            }
        })
        .collect()
}

/// The event camera's own angular velocity sampled from the truth, as a
/// direct stand-in for the normal-flow front end.
pub fn event_rate_track(truth: &So3Spline, rate_hz: f64, duration: f64, noise: f64, rng: &mut impl Rng) -> Vec<AngularVelocitySample> {
    let spec = SensorSpec {
        id: "event".into(),
        kind: SensorKind::Event,
        rotation: Vector3::zeros(),
        offset: 0.0,
        rate_hz,
        noise,
        bias: Vector3::zeros(),
    };
    simulate_imu(truth, &spec, duration, rng)
}
