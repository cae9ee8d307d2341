//! Targetless rotational and temporal calibration for event-centric
//! multi-sensor rigs.
//!
//! The pipeline recovers each sensor's rotational motion (event-camera
//! angular velocity from normal flow, gyroscope rates, relative rotations
//! from frame cameras and LiDAR), initializes every extrinsic rotation and
//! time offset against the event camera by trace-correlation analysis, and
//! refines everything jointly on a continuous-time SO(3) spline.

pub mod cca;
pub mod event_flow;
pub mod lsq;
pub mod motion;
pub mod refine;
pub mod so3;
pub mod spline;
pub mod spline_fit;
pub mod synth;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
