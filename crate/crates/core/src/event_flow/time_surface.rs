use super::events::Event;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("events not sorted by time at index {0}")]
    Unsorted(usize),
    #[error("event {index} at ({x}, {y}) outside the surface")]
    OutOfBounds { index: usize, x: u16, y: u16 },
}

/// Per-pixel timestamp of the latest event at or before `t_ref`.
#[derive(Debug, Clone)]
pub struct TimeSurface {
    width: u32,
    height: u32,
    t_ref: f64,
    times: Vec<f64>,
    polarity: Vec<i8>,
}

impl TimeSurface {
    /// Untouched pixels hold `f64::NEG_INFINITY`.
    pub const NEVER: f64 = f64::NEG_INFINITY;

    pub fn new(width: u32, height: u32, t_ref: f64) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, t_ref, times: vec![Self::NEVER; n], polarity: vec![0; n] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn time(&self, x: u32, y: u32) -> f64 {
        self.times[self.index(x, y)]
    }

    pub fn polarity(&self, x: u32, y: u32) -> i8 {
        self.polarity[self.index(x, y)]
    }

    /// Insert one event. Events after `t_ref` are ignored and stored times never decrease.
    pub fn insert(&mut self, e: &Event) {
        if e.t > self.t_ref {
            return;
        }
        let i = self.index(e.x as u32, e.y as u32);
        if e.t >= self.times[i] {
            self.times[i] = e.t;
            self.polarity[i] = e.polarity;
        }
    }
}

/// Build a surface from time-sorted events, keeping those at or before `t_ref`.
pub fn build_time_surface(events: &[Event], width: u32, height: u32, t_ref: f64) -> Result<TimeSurface, SurfaceError> {
    let mut surface = TimeSurface::new(width, height, t_ref);
    for (i, e) in events.iter().enumerate() {
        if i > 0 && e.t < events[i - 1].t {
            return Err(SurfaceError::Unsorted(i));
        }
        if e.x as u32 >= width || e.y as u32 >= height {
            return Err(SurfaceError::OutOfBounds { index: i, x: e.x, y: e.y });
        }
        surface.insert(e);
    }
    Ok(surface)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_surface_is_never() {
        let s = build_time_surface(&[], 4, 3, 1.0).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(s.time(x, y), TimeSurface::NEVER);
            }
        }
    }

    #[test]
    fn latest_event_wins() {
        let ev = [Event::new(1, 1, 0.1, 1), Event::new(1, 1, 0.2, -1)];
        let s = build_time_surface(&ev, 4, 4, 1.0).unwrap();
        assert_eq!(s.time(1, 1), 0.2);
        assert_eq!(s.polarity(1, 1), -1);
    }

    #[test]
    fn events_after_reference_are_ignored() {
        let ev = [Event::new(0, 0, 0.1, 1), Event::new(0, 0, 0.5, 1)];
        let s = build_time_surface(&ev, 2, 2, 0.3).unwrap();
        assert_eq!(s.time(0, 0), 0.1);
    }

    #[test]
    fn rejects_unsorted() {
        let ev = [Event::new(0, 0, 0.2, 1), Event::new(1, 0, 0.1, 1)];
        assert_eq!(build_time_surface(&ev, 2, 2, 1.0).unwrap_err(), SurfaceError::Unsorted(1));
    }

    #[test]
    fn matches_per_pixel_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ev: Vec<Event> = (0..5000)
            .map(|_| Event::new(rng.gen_range(0..16), rng.gen_range(0..12), rng.gen_range(0.0..2.0), 1))
            .collect();
        ev.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let t_ref = 1.5;
        let s = build_time_surface(&ev, 16, 12, t_ref).unwrap();
        for y in 0..12u16 {
            for x in 0..16u16 {
                let brute = ev
                    .iter()
                    .filter(|e| e.x == x && e.y == y && e.t <= t_ref)
                    .map(|e| e.t)
                    .fold(TimeSurface::NEVER, f64::max);
                assert_eq!(s.time(x as u32, y as u32), brute);
            }
        }
    }
}
