//! Windowed angular-velocity track from an event stream.

use super::camera::CameraIntrinsics;
use super::events::Event;
use super::flow::{filter_by_variance, normal_flow, NormalFlowObservation};
use super::plane::{fit_local_plane, PlaneConfig};
use super::solve::{estimate_angular_velocity, RansacConfig};
use super::time_surface::{build_time_surface, TimeSurface};
use crate::motion::AngularVelocitySample;
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Neighborhood age limit for plane fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxAge {
    /// `factor` times the median one-pixel time step of the window,
    /// clamped to `[floor, cap]` seconds.
    Adaptive { factor: f64, floor: f64, cap: f64 },
    Fixed(f64),
}

impl Default for MaxAge {
    fn default() -> Self {
        MaxAge::Adaptive { factor: 4.0, floor: 2e-4, cap: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub window: f64,
    pub stride: f64,
    pub max_age: MaxAge,
    pub plane: PlaneConfig,
    /// flows faster than this (px/s) are rejected
    pub max_flow: f64,
    pub discard_fraction: f64,
    /// plane fits attempted per window
    pub max_centers: usize,
    pub ransac: RansacConfig,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window: 0.01,
            stride: 0.01,
            max_age: MaxAge::default(),
            plane: PlaneConfig::default(),
            max_flow: 5000.0,
            discard_fraction: 0.2,
            max_centers: 2000,
            ransac: RansacConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedWindow {
    pub index: usize,
    pub t_mid: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FlowTrack {
    pub samples: Vec<AngularVelocitySample>,
    pub skipped: Vec<SkippedWindow>,
}

/// Per-window RNG seed so that parallel and serial runs agree.
pub fn window_seed(seed: u64, index: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index as u64))
}

fn median_step(surface: &TimeSurface, centers: &[(u32, u32)], cap: f64) -> Option<f64> {
    let mut steps = Vec::with_capacity(centers.len());
    for &(x, y) in centers {
        let t = surface.time(x, y);
        let pol = surface.polarity(x, y);
        let mut worst: Option<f64> = None;
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= surface.width() as i64 || ny >= surface.height() as i64 {
                continue;
            }
            let tn = surface.time(nx as u32, ny as u32);
            if tn == TimeSurface::NEVER || surface.polarity(nx as u32, ny as u32) != pol {
                continue;
            }
            let d = (tn - t).abs();
            if d <= cap && d > 0.0 {
                worst = Some(worst.map_or(d, |w: f64| w.max(d)));
            }
        }
        if let Some(w) = worst {
            steps.push(w);
        }
    }
    if steps.is_empty() {
        return None;
    }
    let mid = steps.len() / 2;
    let (_, m, _) = steps.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Normal-flow observations for one window `[start, end)`.
pub fn window_observations(
    events: &[Event],
    cam: &CameraIntrinsics,
    start: f64,
    end: f64,
    cfg: &FlowConfig,
) -> Result<Vec<NormalFlowObservation>, String> {
    let first = events.partition_point(|e| e.t < start);
    let hi = events.partition_point(|e| e.t < end);
    if hi <= first {
        return Err("no events".into());
    }
    let surface_over = |back: f64, horizon: f64| {
        let lo = events.partition_point(|e| e.t < start - back);
        let top = events.partition_point(|e| e.t <= horizon);
        build_time_surface(&events[lo..top], cam.width, cam.height, horizon).map_err(|e| e.to_string())
    };

    let count = hi - first;
    let take = count.min(cfg.max_centers.max(1));
    let mut seen = vec![false; cam.width as usize * cam.height as usize];
    let mut centers = Vec::with_capacity(take);
    for k in 0..take {
        let e = &events[first + k * count / take];
        let idx = e.y as usize * cam.width as usize + e.x as usize;
        if !seen[idx] {
            seen[idx] = true;
            centers.push((e.x as u32, e.y as u32));
        }
    }

    let max_age = match cfg.max_age {
        MaxAge::Fixed(a) => a,
        MaxAge::Adaptive { factor, floor, cap } => match median_step(&surface_over(cap, end)?, &centers, cap) {
            Some(step) => (factor * step).clamp(floor, cap),
            None => return Err("no pixel neighbors to estimate max age".into()),
        },
    };
    // neighbors up to max_age after the window keep late fits centered in time
    let surface = surface_over(max_age, end + max_age)?;

    let mut obs = Vec::with_capacity(centers.len());
    for &(x, y) in &centers {
        let t = surface.time(x, y);
        if t >= end {
            // the pixel fired again after the window, e.g. on a reversing edge
            continue;
        }
        let Ok(fit) = fit_local_plane(&surface, x, y, max_age, &cfg.plane) else { continue };
        if let Ok(o) = normal_flow(&fit, Vector2::new(x as f64, y as f64), t, cfg.max_flow) {
            obs.push(o);
        }
    }
    Ok(obs)
}

fn process_window(events: &[Event], cam: &CameraIntrinsics, index: usize, t0: f64, cfg: &FlowConfig) -> Result<AngularVelocitySample, SkippedWindow> {
    let start = t0 + index as f64 * cfg.stride;
    let end = start + cfg.window;
    let t_mid = 0.5 * (start + end);
    let skip = |reason: String| SkippedWindow { index, t_mid, reason };
    let obs = window_observations(events, cam, start, end, cfg).map_err(skip)?;
    if obs.len() < cfg.ransac.min_observations {
        return Err(skip(format!("{} normal flows, need {}", obs.len(), cfg.ransac.min_observations)));
    }
    let kept = filter_by_variance(&obs, cfg.discard_fraction).map_err(|e| skip(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(window_seed(cfg.seed, index));
    estimate_angular_velocity(&kept, cam, t_mid, &cfg.ransac, &mut rng).map_err(|e| skip(e.to_string()))
}

/// Angular velocity per window, stamped at window midpoints.
///
/// Windows start at the first event and advance by `stride`; the last window
/// ends at or before the final event. Windows that fail are reported in
/// [`FlowTrack::skipped`].
pub fn angular_velocity_track(events: &[Event], cam: &CameraIntrinsics, cfg: &FlowConfig) -> Result<FlowTrack, String> {
    if !(cfg.window > 0.0 && cfg.stride > 0.0) {
        return Err(format!("window {} and stride {} must be positive", cfg.window, cfg.stride));
    }
    if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(format!("events not sorted by time at index {}", i + 1));
    }
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Ok(FlowTrack::default());
    };
    let span = last.t - first.t;
    if span < cfg.window {
        return Ok(FlowTrack::default());
    }
    let count = ((span - cfg.window) / cfg.stride + 1e-9).floor() as usize + 1;
    let results: Vec<_> = (0..count)
        .into_par_iter()
        .map(|k| process_window(events, cam, k, first.t, cfg))
        .collect();
    let mut track = FlowTrack::default();
    for r in results {
        match r {
            Ok(s) => track.samples.push(s),
            Err(skip) => {
                log::debug!("window {} at {:.4}s skipped: {}", skip.index, skip.t_mid, skip.reason);
                track.skipped.push(skip);
            }
        }
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_events_no_samples() {
        let cam = CameraIntrinsics::pinhole(200.0, 200.0, 120.0, 90.0, 240, 180);
        let t = angular_velocity_track(&[], &cam, &FlowConfig::default()).unwrap();
        assert!(t.samples.is_empty() && t.skipped.is_empty());
    }

    #[test]
    fn window_seeds_differ() {
        assert_ne!(window_seed(1, 0), window_seed(1, 1));
        assert_ne!(window_seed(1, 0), window_seed(2, 0));
        assert_eq!(window_seed(7, 3), window_seed(7, 3));
    }

    #[test]
    fn rejects_unsorted_events() {
        let cam = CameraIntrinsics::pinhole(200.0, 200.0, 120.0, 90.0, 240, 180);
        let ev = [Event::new(0, 0, 0.2, 1), Event::new(0, 0, 0.1, 1)];
        assert!(angular_velocity_track(&ev, &cam, &FlowConfig::default()).is_err());
    }
}
