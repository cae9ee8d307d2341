//! Time offset and extrinsic rotation initialization by trace correlation.
//!
//! A sample of sensor `o` stamped `t` observes the motion at event time
//! `t + τ`, so the offset-compensated track is `ω_o'(s) = ω_o(s − τ)`. The
//! rotation returned is `R^e_o` with `ω_e = R^e_o ω_o`.

use crate::motion::{AngularVelocitySample, CubicBoundary, CubicTrack, ResampleError};
use crate::so3::{project_to_rotation, Rotation};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest acceptable eigenvalue of `Σ_ee` in (rad/s)².
pub const MIN_EXCITATION: f64 = 1e-4;
const MAX_CONDITION: f64 = 1e10;
const MIN_PAIRS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcaError {
    #[error("{n} paired samples, need at least {MIN_PAIRS}")]
    TooFewPairs { n: usize },
    #[error("{which} is near singular (condition {condition:.3e}); weakly excited directions: {weak:?}")]
    Degenerate { which: &'static str, condition: f64, weak: Vec<[f64; 3]> },
    #[error("tracks overlap for {overlap:.3} s over the offset range, need {min} s")]
    InsufficientOverlap { overlap: f64, min: f64 },
    #[error("correlation peaks at the range boundary τ = {tau:.4} s; widen the search range")]
    BoundaryPeak { tau: f64 },
    #[error("offset range {range} s and step {step} s must be positive")]
    BadGrid { range: f64, step: f64 },
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// Which track's timestamps define the paired grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridTarget {
    /// the sensor with more samples per second; the other is interpolated
    #[default]
    HigherRate,
    Event,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcaConfig {
    /// search `τ ∈ [−range, range]`
    pub range: f64,
    pub step: f64,
    /// parabolic sub-step refinement of the peak
    pub refine: bool,
    pub min_overlap: f64,
    pub grid: GridTarget,
    pub boundary: CubicBoundary,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self { range: 0.1, step: 0.01, refine: true, min_overlap: 5.0, grid: GridTarget::default(), boundary: CubicBoundary::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub see: Matrix3<f64>,
    pub soo: Matrix3<f64>,
    pub seo: Matrix3<f64>,
    pub soe: Matrix3<f64>,
    pub n: usize,
    pub mean_e: Vector3<f64>,
    pub mean_o: Vector3<f64>,
}

impl CovarianceSet {
    /// Sample covariances of paired vectors with `1/(N−1)` normalization.
    pub fn from_pairs(e: &[Vector3<f64>], o: &[Vector3<f64>]) -> Result<Self, CcaError> {
        let n = e.len().min(o.len());
        if n < MIN_PAIRS {
            return Err(CcaError::TooFewPairs { n });
        }
        let mean_e = e[..n].iter().sum::<Vector3<f64>>() / n as f64;
        let mean_o = o[..n].iter().sum::<Vector3<f64>>() / n as f64;
        let (mut see, mut soo, mut seo) = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
        for (a, b) in e[..n].iter().zip(&o[..n]) {
            let (da, db) = (a - mean_e, b - mean_o);
            see += da * da.transpose();
            soo += db * db.transpose();
            seo += da * db.transpose();
        }
        let k = 1.0 / (n as f64 - 1.0);
        let (see, soo, seo) = (see * k, soo * k, seo * k);
        let set = Self { see, soo, seo, soe: seo.transpose(), n, mean_e, mean_o };
        check_conditioning("Σ_ee", &set.see)?;
        check_conditioning("Σ_oo", &set.soo)?;
        Ok(set)
    }

    /// Smallest eigenvalue of `Σ_ee`.
    pub fn excitation(&self) -> f64 {
        self.see.symmetric_eigenvalues().min()
    }
}

fn check_conditioning(which: &'static str, m: &Matrix3<f64>) -> Result<(), CcaError> {
    let eig = SymmetricEigen::new(*m);
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION || !(hi > 0.0) {
        let weak = (0..3)
            .filter(|&k| !(eig.eigenvalues[k] * MAX_CONDITION > hi) || hi <= 0.0)
            .map(|k| {
                let v = eig.eigenvectors.column(k);
                [v[0], v[1], v[2]]
            })
            .collect();
        return Err(CcaError::Degenerate { which, condition, weak });
    }
    Ok(())
}

/// `r̄ = sqrt(Tr(Σ_ee⁻¹ Σ_eo Σ_oo⁻¹ Σ_oe) / 3)`, clamped to `[0, 1]`.
pub fn trace_correlation(c: &CovarianceSet) -> Result<f64, CcaError> {
    let singular = |which| CcaError::Degenerate { which, condition: f64::INFINITY, weak: Vec::new() };
    let ee = c.see.cholesky().ok_or_else(|| singular("Σ_ee"))?;
    let oo = c.soo.cholesky().ok_or_else(|| singular("Σ_oo"))?;
    let m = ee.solve(&(c.seo * oo.solve(&c.soe)));
    let r2 = m.trace() / 3.0;
    let r = r2.max(0.0).sqrt();
    if !(0.0..=1.0).contains(&r) {
        log::debug!("trace correlation {r} clamped to [0, 1]");
    }
    Ok(r.clamp(0.0, 1.0))
}

/// `R^e_o` from `Σ_oo⁻¹ Σ_oe = U S Vᵀ`.
///
/// With `ω_e = R ω_o` the regression matrix equals `Rᵀ`, so the
/// determinant-corrected projection `U diag(1, 1, det(UVᵀ)) Vᵀ` is
/// transposed before returning.
pub fn extrinsic_rotation(c: &CovarianceSet) -> Result<Rotation, CcaError> {
    let sv = c.soe.singular_values();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[order[1]] > 1e-8 * sv[order[0]]) {
        // the weak directions are the event-frame right singular vectors
        let svd = c.soe.svd(false, true);
        let vt = svd.v_t.unwrap();
        let weak = (0..3)
            .filter(|&k| !(svd.singular_values[k] > 1e-8 * sv[order[0]]))
            .map(|k| [vt[(k, 0)], vt[(k, 1)], vt[(k, 2)]])
            .collect();
        return Err(CcaError::Degenerate { which: "Σ_oe", condition: f64::INFINITY, weak });
    }
    let oo = c
        .soo
        .cholesky()
        .ok_or(CcaError::Degenerate { which: "Σ_oo", condition: f64::INFINITY, weak: Vec::new() })?;
    Ok(project_to_rotation(&oo.solve(&c.soe)).inverse())
}

/// Event-track samples paired with offset-compensated samples of the other
/// sensor, ready for [`CovarianceSet::from_pairs`].
struct Pairing {
    e: CubicTrack,
    o: CubicTrack,
    e_times: Vec<f64>,
    o_times: Vec<f64>,
    use_event_grid: bool,
}

impl Pairing {
    fn new(e: &[AngularVelocitySample], o: &[AngularVelocitySample], cfg: &CcaConfig) -> Result<Self, CcaError> {
        let et = CubicTrack::new(e, cfg.boundary)?;
        let ot = CubicTrack::new(o, cfg.boundary)?;
        let rate = |s: &[AngularVelocitySample]| (s.len() - 1) as f64 / (s[s.len() - 1].t - s[0].t);
        let use_event_grid = match cfg.grid {
            GridTarget::Event => true,
            GridTarget::Other => false,
            GridTarget::HigherRate => rate(e) >= rate(o),
        };
        Ok(Self {
            e: et,
            o: ot,
            e_times: e.iter().map(|s| s.t).collect(),
            o_times: o.iter().map(|s| s.t).collect(),
            use_event_grid,
        })
    }

    /// Event-time interval on which both tracks are evaluable for every
    /// offset in `[lo, hi]`.
    fn common_span(&self, lo: f64, hi: f64) -> (f64, f64) {
        (self.e.start().max(self.o.start() + hi), self.e.end().min(self.o.end() + lo))
    }

    /// Paired vectors at offset `tau` on the grid restricted to `span`.
    fn pairs(&self, tau: f64, span: (f64, f64)) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), CcaError> {
        let (a, b) = span;
        let mut pe = Vec::new();
        let mut po = Vec::new();
        if self.use_event_grid {
            for &s in self.e_times.iter().filter(|&&s| s >= a && s <= b) {
                pe.push(self.e.eval(s)?);
                po.push(self.o.eval(s - tau)?);
            }
        } else {
            for &t in self.o_times.iter().filter(|&&t| t + tau >= a && t + tau <= b) {
                pe.push(self.e.eval(t + tau)?);
                po.push(self.o.eval(t)?);
            }
        }
        Ok((pe, po))
    }
}

/// Covariances of the event track and the other track compensated by `tau`,
/// paired on the overlap at that offset.
pub fn covariances(
    e: &[AngularVelocitySample],
    o: &[AngularVelocitySample],
    tau: f64,
    cfg: &CcaConfig,
) -> Result<CovarianceSet, CcaError> {
    if e.len() < 4 || o.len() < 4 {
        return Err(CcaError::TooFewPairs { n: e.len().min(o.len()) });
    }
    let p = Pairing::new(e, o, cfg)?;
    let (pe, po) = p.pairs(tau, p.common_span(tau, tau))?;
    CovarianceSet::from_pairs(&pe, &po)
}

/// Output of the offset grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSearch {
    pub taus: Vec<f64>,
    pub curve: Vec<f64>,
    /// refined offset, s
    pub tau: f64,
    /// best grid offset before refinement, s
    pub tau_grid: f64,
    pub r_peak: f64,
    pub pairs: usize,
}

/// Exhaustive search of `r̄(τ)` over `[−range, range]` in `step` increments.
///
/// Every grid point is evaluated on the same set of event times, the part of
/// the overlap that stays valid for all offsets in the range.
pub fn search_time_offset(
    e: &[AngularVelocitySample],
    o: &[AngularVelocitySample],
    cfg: &CcaConfig,
) -> Result<OffsetSearch, CcaError> {
    if !(cfg.range > 0.0 && cfg.step > 0.0) {
        return Err(CcaError::BadGrid { range: cfg.range, step: cfg.step });
    }
    if e.len() < 4 || o.len() < 4 {
        return Err(CcaError::TooFewPairs { n: e.len().min(o.len()) });
    }
    let p = Pairing::new(e, o, cfg)?;
    let half = (cfg.range / cfg.step + 1e-9).floor() as i64;
    let taus: Vec<f64> = (-half..=half).map(|k| k as f64 * cfg.step).collect();
    let span = p.common_span(taus[0], *taus.last().unwrap());
    let overlap = span.1 - span.0;
    if !(overlap >= cfg.min_overlap) {
        return Err(CcaError::InsufficientOverlap { overlap: overlap.max(0.0), min: cfg.min_overlap });
    }
    let evaluated: Result<Vec<(f64, usize)>, CcaError> = taus
        .par_iter()
        .map(|&tau| {
            let (pe, po) = p.pairs(tau, span)?;
            let c = CovarianceSet::from_pairs(&pe, &po)?;
            Ok((trace_correlation(&c)?, c.n))
        })
        .collect();
    let evaluated = evaluated?;
    let curve: Vec<f64> = evaluated.iter().map(|v| v.0).collect();
    let pairs = evaluated.iter().map(|v| v.1).min().unwrap_or(0);
    let best = (0..curve.len()).fold(0, |b, k| if curve[k] > curve[b] { k } else { b });
    if best == 0 || best + 1 == curve.len() {
        return Err(CcaError::BoundaryPeak { tau: taus[best] });
    }
    let mut tau = taus[best];
    let mut r_peak = curve[best];
    if cfg.refine {
        let (a, b, c) = (curve[best - 1], curve[best], curve[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            let delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            tau += delta * cfg.step;
            r_peak = b - 0.25 * (a - c) * delta;
        }
    }
    let tau_grid = taus[best];
    Ok(OffsetSearch { taus, curve, tau, tau_grid, r_peak: r_peak.min(1.0), pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    pub search: OffsetSearch,
    pub tau: f64,
    pub rotation: Rotation,
    /// smallest eigenvalue of `Σ_ee` at the chosen offset
    pub excitation: f64,
    pub mean_e: Vector3<f64>,
    /// mean of the offset-compensated other track
    pub mean_o: Vector3<f64>,
}

impl CcaResult {
    /// Curve dump with header `tau_s,trace_corr`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("tau_s,trace_corr\n");
        for (t, r) in self.search.taus.iter().zip(&self.search.curve) {
            s.push_str(&format!("{t:.6},{r:.12}\n"));
        }
        s
    }
}

/// Offset search followed by the rotation at the refined offset.
pub fn initialize_pair(
    e: &[AngularVelocitySample],
    o: &[AngularVelocitySample],
    cfg: &CcaConfig,
) -> Result<CcaResult, CcaError> {
    let search = search_time_offset(e, o, cfg)?;
    let c = covariances(e, o, search.tau, cfg)?;
    let rotation = extrinsic_rotation(&c)?;
    let excitation = c.excitation();
    if excitation < MIN_EXCITATION {
        log::warn!(
            "weak excitation: smallest Σ_ee eigenvalue {excitation:.3e} (rad/s)² is below {MIN_EXCITATION:.0e}; results may be unreliable"
        );
    }
    Ok(CcaResult { tau: search.tau, search, rotation, excitation, mean_e: c.mean_e, mean_o: c.mean_o })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{angle_between, exp_map};
    use crate::synth::gen_trajectory;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_vectors(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng))).collect()
    }

    /// Event rates from a random trajectory and the other sensor's view:
    /// stamp `t` sees event time `t + tau`, rotated by `R^e_oᵀ`.
    fn tracks(seed: u64, tau: f64, r: &Rotation, rate_e: f64, rate_o: f64) -> (Vec<AngularVelocitySample>, Vec<AngularVelocitySample>) {
        let spline = gen_trajectory(seed, 20.0, 3);
        let e = (0..(20.0 * rate_e) as usize)
            .map(|k| {
                let t = k as f64 / rate_e;
                AngularVelocitySample::new(t, spline.angular_velocity(t).unwrap())
            })
            .collect();
        let o = (0..(19.0 * rate_o) as usize)
            .map(|k| {
                let t = 0.3 + k as f64 / rate_o;
                AngularVelocitySample::new(t, r.inverse() * spline.angular_velocity(t + tau).unwrap())
            })
            .collect();
        (e, o)
    }

    #[test]
    fn identical_tracks_share_covariances() {
        let v = random_vectors(200, 1);
        let c = CovarianceSet::from_pairs(&v, &v).unwrap();
        assert_eq!(c.see, c.soo);
        assert_eq!(c.see, c.seo);
        assert!((trace_correlation(&c).unwrap() - 1.0).abs() < 1e-12);
        assert!(angle_between(&extrinsic_rotation(&c).unwrap(), &Rotation::identity()) < 1e-9);
    }

    #[test]
    fn constant_event_rate_is_degenerate() {
        let e = vec![Vector3::new(0.1, 0.2, 0.3); 50];
        let o = random_vectors(50, 2);
        assert!(matches!(CovarianceSet::from_pairs(&e, &o), Err(CcaError::Degenerate { which: "Σ_ee", .. })));
        assert!(matches!(CovarianceSet::from_pairs(&o[..9], &o[..9]), Err(CcaError::TooFewPairs { n: 9 })));
    }

    #[test]
    fn matches_pairwise_difference_covariance() {
        let e = random_vectors(300, 3);
        let o: Vec<_> = random_vectors(300, 4).iter().zip(&e).map(|(a, b)| a * 0.3 + b).collect();
        let c = CovarianceSet::from_pairs(&e, &o).unwrap();
        // Σ_xy = Σ_i Σ_j (x_i − x_j)(y_i − y_j)ᵀ / (2 N (N − 1))
        let n = e.len();
        let mut naive = [Matrix3::zeros(); 3];
        for i in 0..n {
            for j in 0..n {
                naive[0] += (e[i] - e[j]) * (e[i] - e[j]).transpose();
                naive[1] += (o[i] - o[j]) * (o[i] - o[j]).transpose();
                naive[2] += (e[i] - e[j]) * (o[i] - o[j]).transpose();
            }
        }
        let k = 1.0 / (2.0 * n as f64 * (n as f64 - 1.0));
        assert!((c.see - naive[0] * k).amax() < 1e-12);
        assert!((c.soo - naive[1] * k).amax() < 1e-12);
        assert!((c.seo - naive[2] * k).amax() < 1e-12);
        assert!((c.soe - c.seo.transpose()).amax() < 1e-12);
    }

    #[test]
    fn rotated_copy_correlates_fully() {
        let e = random_vectors(500, 5);
        let r = exp_map(&Vector3::new(0.4, -1.1, 0.7));
        let o: Vec<_> = e.iter().map(|w| r.inverse() * w).collect();
        let c = CovarianceSet::from_pairs(&e, &o).unwrap();
        assert!((trace_correlation(&c).unwrap() - 1.0).abs() < 1e-9);
        assert!(angle_between(&extrinsic_rotation(&c).unwrap(), &r) < 1e-9);
    }

    #[test]
    fn independent_noise_correlates_weakly() {
        let c = CovarianceSet::from_pairs(&random_vectors(10_000, 6), &random_vectors(10_000, 7)).unwrap();
        assert!(trace_correlation(&c).unwrap() < 0.1);
    }

    #[test]
    fn reflection_is_corrected() {
        // Σ_oe with negative determinant pushes the raw projection to a reflection
        let soo = Matrix3::identity();
        let soe = Matrix3::from_diagonal(&Vector3::new(1.0, 0.8, -0.5));
        let c = CovarianceSet { see: Matrix3::identity(), soo, seo: soe.transpose(), soe, n: 100, mean_e: Vector3::zeros(), mean_o: Vector3::zeros() };
        let r = extrinsic_rotation(&c).unwrap();
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!(crate::so3::orthonormality_error(&r) < 1e-12);
    }

    #[test]
    fn single_axis_excitation_names_weak_axes() {
        let s: Vec<f64> = (0..200).map(|k| (k as f64 * 0.1).sin()).collect();
        let e: Vec<_> = s.iter().map(|&a| Vector3::new(0.0, 0.0, a)).collect();
        match CovarianceSet::from_pairs(&e, &e) {
            Err(CcaError::Degenerate { weak, .. }) => {
                assert_eq!(weak.len(), 2);
                for w in weak {
                    assert!(w[2].abs() < 1e-9, "weak axis {w:?} should be orthogonal to z");
                }
            }
            other => panic!("expected degenerate excitation, got {other:?}"),
        }
        // a hand-built rank-one cross covariance reaches the rotation check
        let soe = Vector3::z() * Vector3::z().transpose();
        let c = CovarianceSet { see: Matrix3::identity(), soo: Matrix3::identity(), seo: soe, soe, n: 200, mean_e: Vector3::zeros(), mean_o: Vector3::zeros() };
        assert!(matches!(extrinsic_rotation(&c), Err(CcaError::Degenerate { which: "Σ_oe", .. })));
    }

    #[test]
    fn recovers_35ms_offset() {
        let r = exp_map(&Vector3::new(0.2, 0.5, -0.3));
        let (e, o) = tracks(8, 0.035, &r, 100.0, 200.0);
        let s = search_time_offset(&e, &o, &CcaConfig::default()).unwrap();
        assert!((s.tau_grid - 0.035).abs() <= 0.005 + 1e-12, "grid peak {}", s.tau_grid);
        assert!((s.tau - 0.035).abs() < 0.002, "refined {}", s.tau);
        assert_eq!(s.curve.len(), 21);
        let best = s.curve.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(s.curve[s.taus.iter().position(|&t| t == s.tau_grid).unwrap()], best);
    }

    #[test]
    fn zero_offset_within_half_step() {
        let (e, o) = tracks(9, 0.0, &Rotation::identity(), 100.0, 100.0);
        let s = search_time_offset(&e, &o, &CcaConfig::default()).unwrap();
        assert!(s.tau.abs() <= 0.005);
    }

    #[test]
    fn peak_at_true_shift_over_seeds() {
        for seed in 0..50 {
            let r = exp_map(&(Vector3::new(0.3, -0.2, 0.9) * (seed as f64 * 0.1)));
            let (e, o) = tracks(100 + seed, 0.04, &r, 100.0, 50.0);
            let s = search_time_offset(&e, &o, &CcaConfig { refine: false, ..CcaConfig::default() }).unwrap();
            assert!((s.tau_grid - 0.04).abs() < 1e-9, "seed {seed}: {}", s.tau_grid);
        }
    }

    #[test]
    fn boundary_peak_is_an_error() {
        let (e, o) = tracks(10, 0.15, &Rotation::identity(), 100.0, 100.0);
        assert!(matches!(search_time_offset(&e, &o, &CcaConfig::default()), Err(CcaError::BoundaryPeak { .. })));
    }

    #[test]
    fn short_overlap_is_an_error() {
        let (e, o) = tracks(10, 0.0, &Rotation::identity(), 100.0, 100.0);
        let cut: Vec<_> = o.into_iter().filter(|s| s.t < 4.0).collect();
        assert!(matches!(search_time_offset(&e, &cut, &CcaConfig::default()), Err(CcaError::InsufficientOverlap { .. })));
    }

    #[test]
    fn round_trip_with_gyro_noise() {
        let r_true = exp_map(&Vector3::new(-0.6, 0.25, 1.2));
        let (e, mut o) = tracks(11, -0.062, &r_true, 100.0, 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Normal::new(0.0, 0.01).unwrap();
        for s in &mut o {
            s.omega += Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng));
        }
        let res = initialize_pair(&e, &o, &CcaConfig::default()).unwrap();
        assert!((res.tau + 0.062).abs() < 0.002, "tau {}", res.tau);
        assert!(angle_between(&res.rotation, &r_true).to_degrees() < 1.0);
        assert!(res.excitation > MIN_EXCITATION);
        let csv = res.curve_csv();
        assert!(csv.starts_with("tau_s,trace_corr\n"));
        assert_eq!(csv.lines().count(), 22);
    }

    #[test]
    fn grid_choice_does_not_move_the_peak() {
        let (e, o) = tracks(12, 0.02, &Rotation::identity(), 100.0, 200.0);
        for grid in [GridTarget::Event, GridTarget::Other, GridTarget::HigherRate] {
            let s = search_time_offset(&e, &o, &CcaConfig { grid, ..CcaConfig::default() }).unwrap();
            assert!((s.tau - 0.02).abs() < 0.002, "{grid:?}: {}", s.tau);
        }
    }

    #[test]
    fn parallel_search_is_deterministic() {
        let (e, o) = tracks(13, 0.01, &Rotation::identity(), 100.0, 200.0);
        let a = search_time_offset(&e, &o, &CcaConfig::default()).unwrap();
        let b = search_time_offset(&e, &o, &CcaConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn correlation_invariant_to_rotating_other(seed in 0u64..1000, q in prop::array::uniform3(-3.0f64..3.0)) {
            let e = random_vectors(100, seed);
            let o: Vec<_> = random_vectors(100, seed + 1).iter().zip(&e).map(|(a, b)| a + b * 0.5).collect();
            let rq = exp_map(&Vector3::from(q));
            let oq: Vec<_> = o.iter().map(|w| rq * w).collect();
            let a = trace_correlation(&CovarianceSet::from_pairs(&e, &o).unwrap()).unwrap();
            let b = trace_correlation(&CovarianceSet::from_pairs(&e, &oq).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn rotation_always_proper(seed in 0u64..1000) {
            let e = random_vectors(30, seed);
            let o = random_vectors(30, seed + 7);
            if let Ok(c) = CovarianceSet::from_pairs(&e, &o) {
                let r = extrinsic_rotation(&c).unwrap();
                prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shifting_stamps_shifts_the_peak() {
        let (e, o) = tracks(14, 0.0, &Rotation::identity(), 100.0, 200.0);
        let base = search_time_offset(&e, &o, &CcaConfig::default()).unwrap().tau;
        let delta = 0.03;
        let shifted: Vec<_> = o.iter().map(|s| AngularVelocitySample::new(s.t - delta, s.omega)).collect();
        let moved = search_time_offset(&e, &shifted, &CcaConfig::default()).unwrap().tau;
        assert!((moved - base - delta).abs() < 0.002, "{base} -> {moved}");
    }
}
