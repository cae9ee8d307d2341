//! Event-camera angular velocity from normal flow on the time surface.

pub mod camera;
pub mod events;
pub mod flow;
pub mod plane;
pub mod solve;
pub mod time_surface;
pub mod track;

pub use camera::CameraIntrinsics;
pub use events::{load_events, save_events_binary, save_events_text, Event, EventIoError, EventStream};
pub use flow::{filter_by_variance, normal_flow, FlowError, NormalFlowObservation};
pub use plane::{fit_local_plane, PlaneConfig, PlaneFit, PlaneReject};
pub use solve::{estimate_angular_velocity, motion_field_matrix, pixel_flow, EstimateError, RansacConfig};
pub use time_surface::{build_time_surface, SurfaceError, TimeSurface};
pub use track::{angular_velocity_track, FlowConfig, FlowTrack, MaxAge, SkippedWindow};
