//! Geometric event generation from edge landmarks on the unit sphere.

use super::EventCameraSpec;
use crate::event_flow::Event;
use crate::spline::So3Spline;
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone, Default)]
pub struct SimulatedEvents {
    pub events: Vec<Event>,
    /// landmark index per event; `None` for spurious events
    pub sources: Vec<Option<u32>>,
}

#[derive(Debug, Clone)]
pub struct Landmark {
    pub center: Vector3<f64>,
    pub points: Vec<Vector3<f64>>,
    /// unit tangent of the edge; zero for point landmarks
    pub tangent: Vector3<f64>,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Landmark bearings spread uniformly over the sphere.
pub fn sample_landmarks(spec: &EventCameraSpec, rng: &mut impl Rng) -> Vec<Landmark> {
    let f = spec.intrinsics.fx;
    let count = if spec.edge_length_px > 0.0 { (spec.edge_length_px / spec.edge_spacing_px).floor() as usize + 1 } else { 1 };
    (0..spec.landmarks)
        .map(|_| {
            let center = random_unit(rng);
            if count == 1 {
                return Landmark { center, points: vec![center], tangent: Vector3::zeros() };
            }
            let tangent = random_unit(rng).cross(&center).normalize();
            let points = (0..count)
                .map(|j| {
                    let s = (j as f64 - 0.5 * (count - 1) as f64) * spec.edge_spacing_px / f;
                    (center + tangent * s).normalize()
                })
                .collect();
            Landmark { center, points, tangent }
        })
        .collect()
}

fn landmark_seed(seed: u64, index: usize) -> u64 {
    crate::event_flow::track::window_seed(seed ^ 0x5EED_0F_E7E7, index)
}

/// Simulate the event stream of a camera whose orientation is `spline(t)`.
///
/// Each landmark point emits one event every `theta_px` of accumulated image
/// displacement across the edge (total displacement for point landmarks), stamped at the interpolated crossing time plus Gaussian
/// jitter. Polarity is the side of the edge the motion points to. Spurious
/// events arrive as a Poisson process over random pixels.
pub fn simulate_events(spline: &So3Spline, spec: &EventCameraSpec, duration: f64, seed: u64) -> SimulatedEvents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let landmarks = sample_landmarks(spec, &mut rng);
    let cam = &spec.intrinsics;
    let step = spec.sim_step;
    let steps = if duration > 0.0 { (duration / step).floor() as usize + 1 } else { 0 };
    let cam_from_world: Vec<Matrix3<f64>> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * step;
            spline.eval(t).map(|r| r.inverse().into_inner()).unwrap_or_else(|_| Matrix3::zeros())
        })
        .collect();

    let half_w = (cam.width as f64 * 0.5 / cam.fx).max(cam.width as f64 * 0.5 / cam.fy);
    let half_h = (cam.height as f64 * 0.5 / cam.fy).max(cam.height as f64 * 0.5 / cam.fx);
    let edge_half = 0.5 * spec.edge_length_px / cam.fx;
    let cone = ((half_w * half_w + half_h * half_h).sqrt().atan() + edge_half + 0.1).min(std::f64::consts::FRAC_PI_2);
    let min_z = cone.cos();
    let theta = spec.theta_px;
    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).unwrap();

    let per_landmark: Vec<Vec<Event>> = landmarks
        .par_iter()
        .enumerate()
        .map(|(li, lm)| {
            let mut rng = ChaCha8Rng::seed_from_u64(landmark_seed(seed, li));
            let mut out = Vec::new();
            let mut prev: Vec<Option<Vector2<f64>>> = vec![None; lm.points.len()];
            let mut acc = vec![0.0; lm.points.len()];
            for (k, r) in cam_from_world.iter().enumerate() {
                if (r * lm.center).z < min_z {
                    prev.iter_mut().for_each(|p| *p = None);
                    continue;
                }
                let edge_dir = if lm.tangent == Vector3::zeros() {
                    None
                } else {
                    let a = cam.project(&(r * (lm.center + lm.tangent * 1e-3)));
                    let b = cam.project(&(r * (lm.center - lm.tangent * 1e-3)));
                    a.zip(b).map(|(a, b)| a - b)
                };
                for (j, b) in lm.points.iter().enumerate() {
                    let px = match cam.project(&(r * b)) {
                        Some(px) if cam.in_bounds(&px) => px,
                        _ => {
                            prev[j] = None;
                            continue;
                        }
                    };
                    if let Some(p0) = prev[j] {
                        let seg = px - p0;
                        // an edge only changes brightness when it moves across itself
                        let (len, polarity) = match edge_dir {
                            Some(e) => {
                                let cross = (e.x * seg.y - e.y * seg.x) / e.norm();
                                (cross.abs(), if cross < 0.0 { -1 } else { 1 })
                            }
                            None => (seg.norm(), 1),
                        };
                        let mut along = 0.0;
                        while acc[j] + (len - along) >= theta {
                            along += theta - acc[j];
                            acc[j] = 0.0;
                            let frac = along / len;
                            let t = ((k - 1) as f64 + frac) * step + jitter.sample(&mut rng);
                            if !(0.0..=duration).contains(&t) {
                                continue;
                            }
                            let p = p0 + seg * frac;
                            let x = p.x.round().clamp(0.0, cam.width as f64 - 1.0) as u16;
                            let y = p.y.round().clamp(0.0, cam.height as f64 - 1.0) as u16;
                            out.push(Event::new(x, y, t, polarity));
                        }
                        acc[j] += len - along;
                    }
                    prev[j] = Some(px);
                }
            }
            out
        })
        .collect();

    let mut tagged: Vec<(Event, Option<u32>)> = per_landmark
        .into_iter()
        .enumerate()
        .flat_map(|(li, evs)| evs.into_iter().map(move |e| (e, Some(li as u32))))
        .collect();

    if spec.spurious_rate > 0.0 && duration > 0.0 {
        let mean = spec.spurious_rate * duration;
        let count = Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..count {
            let e = Event::new(
                rng.gen_range(0..cam.width) as u16,
                rng.gen_range(0..cam.height) as u16,
                rng.gen_range(0.0..duration),
                if rng.gen::<bool>() { 1 } else { -1 },
            );
            tagged.push((e, None));
        }
    }
    tagged.sort_by(|a, b| {
        a.0.t
            .total_cmp(&b.0.t)
            .then(a.0.y.cmp(&b.0.y))
            .then(a.0.x.cmp(&b.0.x))
            .then(a.0.polarity.cmp(&b.0.polarity))
    });
    let (events, sources) = tagged.into_iter().unzip();
    SimulatedEvents { events, sources }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Rotation;
    use crate::synth::trajectory::{spline_from_profile, RateProfile};

    fn spec() -> EventCameraSpec {
        EventCameraSpec { spurious_rate: 0.0, jitter: 0.0, ..EventCameraSpec::default() }
    }

    fn constant(omega: Vector3<f64>, duration: f64) -> So3Spline {
        spline_from_profile(&RateProfile::constant(omega), duration, Rotation::identity())
    }

    #[test]
    fn stationary_gives_only_spurious_events() {
        let s = constant(Vector3::zeros(), 2.0);
        let quiet = simulate_events(&s, &spec(), 2.0, 1);
        assert!(quiet.events.is_empty());
        let noisy = simulate_events(&s, &EventCameraSpec { spurious_rate: 500.0, ..spec() }, 2.0, 1);
        assert!(noisy.events.len() > 800 && noisy.events.len() < 1200);
        assert!(noisy.sources.iter().all(Option::is_none));
    }

    #[test]
    fn optical_axis_rotation_traces_circles() {
        let s = constant(Vector3::new(0.0, 0.0, 1.5), 2.0);
        let sp = EventCameraSpec { edge_length_px: 0.0, landmarks: 400, ..spec() };
        let sim = simulate_events(&s, &sp, 2.0, 7);
        assert!(!sim.events.is_empty());
        let (cx, cy) = (sp.intrinsics.cx, sp.intrinsics.cy);
        let mut radii: std::collections::BTreeMap<u32, (f64, f64)> = Default::default();
        for (e, src) in sim.events.iter().zip(&sim.sources) {
            let r = ((e.x as f64 - cx).powi(2) + (e.y as f64 - cy).powi(2)).sqrt();
            let entry = radii.entry(src.unwrap()).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            entry.0 = entry.0.min(r);
            entry.1 = entry.1.max(r);
        }
        for (lo, hi) in radii.values() {
            // rounding to pixel centers moves each point by at most sqrt(2)/2
            assert!(hi - lo <= 2.0 * std::f64::consts::FRAC_1_SQRT_2 + 1e-9, "radius spread {}", hi - lo);
        }
    }

    #[test]
    fn deterministic_output() {
        let s = crate::synth::gen_trajectory(4, 2.0, 2);
        let sp = EventCameraSpec { jitter: 1e-4, spurious_rate: 100.0, ..spec() };
        let a = simulate_events(&s, &sp, 2.0, 9);
        let b = simulate_events(&s, &sp, 2.0, 9);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn count_scales_with_speed_and_threshold() {
        let count = |w: f64, theta: f64| {
            let s = constant(Vector3::new(0.3, -0.5, 0.8).normalize() * w, 2.0);
            simulate_events(&s, &EventCameraSpec { theta_px: theta, landmarks: 2000, ..spec() }, 2.0, 3).events.len() as f64
        };
        let base = count(0.5, 1.0);
        let fast = count(2.0, 1.0);
        let fine = count(0.5, 0.25);
        assert!((fast / base / 4.0 - 1.0).abs() < 0.1, "speed ratio {}", fast / base);
        assert!((fine / base / 4.0 - 1.0).abs() < 0.1, "threshold ratio {}", fine / base);
    }
}
