//! Joint refinement of extrinsic rotations, time offsets, gyro bias and the
//! trajectory spline.
//!
//! The cost sums four kinds of squared residuals against one SO(3) spline in
//! the event-camera frame: event rates `ω(t) − ω_e`, gyro rates
//! `ω(t + τ) − R (ω_i + b)`, and frame or LiDAR pairs
//! `log(Rᵀ R(t_i + τ)ᵀ R(t_j + τ) R R_rel)`.

mod problem;
mod report;
mod terms;

pub use problem::{CalibrationState, Layout, ProblemError, RefineProblem, SensorParams};
pub use report::{render_report, ResultDocument, SensorEntry, Stage};
pub use terms::{huber, Measurement, Term};

use crate::event_flow::{angular_velocity_track, CameraIntrinsics, Event, FlowConfig};
use crate::cca::{initialize_pair, CcaConfig, CcaError, CcaResult};
use crate::lsq::{levenberg_marquardt, LmOptions, Termination};
use crate::motion::{AngularVelocitySample, MotionError, SensorKind, SensorTrack};
use crate::so3::{log_map, Rotation};
use crate::spline::{So3Spline, SplineError};
use crate::spline_fit::{fit_spline_over, FitError};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// each term class whitened by its noise level
    #[default]
    InverseStd,
    /// plain squared residuals
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// s
    pub knot_interval: f64,
    /// bound on every |τ|, s
    pub tau_max: f64,
    pub weighting: Weighting,
    /// Huber threshold on whitened residual norms
    pub huber: Option<f64>,
    /// gyro noise, rad/s
    pub imu_noise: f64,
    /// frame and LiDAR rotation noise, degrees
    pub rotation_noise_deg: f64,
    /// per-sensor noise overrides in the units above
    pub noise: BTreeMap<String, f64>,
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// compare analytic Jacobians with finite differences before solving
    pub check_jacobians: bool,
    pub cca: CcaConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            knot_interval: 0.02,
            tau_max: 0.2,
            weighting: Weighting::default(),
            huber: None,
            imu_noise: 0.005,
            rotation_noise_deg: 0.05,
            noise: BTreeMap::new(),
            max_iterations: 100,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            check_jacobians: false,
            cca: CcaConfig::default(),
        }
    }
}

impl RefineConfig {
    fn lm(&self) -> LmOptions {
        LmOptions {
            max_iterations: self.max_iterations,
            relative_cost_tolerance: self.relative_cost_tolerance,
            gradient_tolerance: self.gradient_tolerance,
            ..LmOptions::default()
        }
    }

    /// Noise standard deviation of a sensor in residual units (rad/s or rad).
    pub fn noise_of(&self, id: &str, kind: SensorKind) -> f64 {
        let v = self.noise.get(id).copied();
        match kind {
            SensorKind::Imu | SensorKind::Event => v.unwrap_or(self.imu_noise),
            SensorKind::Frame | SensorKind::Lidar => v.unwrap_or(self.rotation_noise_deg).to_radians(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("input: {0}")]
    Input(String),
    #[error("event angular velocity: {0}")]
    Flow(String),
    #[error("motion recovery for '{sensor}': {source}")]
    Motion { sensor: String, source: MotionError },
    #[error("initialization of '{sensor}': {source}")]
    Init { sensor: String, source: CcaError },
    #[error("spline initialization: {0}")]
    Fit(#[from] FitError),
    #[error("refinement: {0}")]
    Refine(#[from] ProblemError),
}

impl From<SplineError> for CalibrationError {
    fn from(e: SplineError) -> Self {
        CalibrationError::Refine(ProblemError::Spline(e))
    }
}

/// Residual statistics of one sensor's terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub sensor: String,
    pub kind: SensorKind,
    pub count: usize,
    /// terms dropped because their shifted stamps leave the spline span
    pub excluded: usize,
    /// RMS of the unweighted residual norm (rad/s or rad)
    pub rms: f64,
    pub max: f64,
    /// weighted contribution to the total cost
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub terms: Vec<TermReport>,
    pub total_cost: f64,
}

/// A problem ready to optimize.
pub struct Built {
    pub problem: RefineProblem,
    pub state: CalibrationState,
    pub event_id: String,
    /// per-axis event rate noise estimated from the initial spline fit, rad/s
    pub event_sigma: f64,
    /// excluded term count per sensor, event camera first
    pub excluded: Vec<usize>,
}

/// Spline over the event track widened by `tau_max`, terms for every sample
/// that stays evaluable for any admissible offset, and the given initial
/// sensor parameters.
pub fn build_problem(
    event_id: &str,
    event: &[AngularVelocitySample],
    others: &[(SensorTrack, SensorParams)],
    cfg: &RefineConfig,
) -> Result<Built, CalibrationError> {
    if event.is_empty() {
        return Err(CalibrationError::Input(format!("event track '{event_id}' is empty")));
    }
    let (first, last) = (event[0].t, event[event.len() - 1].t);
    if last - first < 4.0 * cfg.knot_interval {
        return Err(CalibrationError::Input(format!(
            "event track spans {:.3} s, fewer than 4 knots of {} s",
            last - first,
            cfg.knot_interval
        )));
    }
    let fit = fit_spline_over(event, cfg.knot_interval, first - cfg.tau_max, last + cfg.tau_max)?;
    let event_sigma = (fit.velocity_rms / 3f64.sqrt()).max(1e-6);
    build_problem_on(fit.spline, event_sigma, event_id, event, others, cfg)
}

/// [`build_problem`] around a given spline, with the event rate noise
/// `event_sigma` (rad/s per axis) supplied by the caller.
pub fn build_problem_on(
    spline: So3Spline,
    event_sigma: f64,
    event_id: &str,
    event: &[AngularVelocitySample],
    others: &[(SensorTrack, SensorParams)],
    cfg: &RefineConfig,
) -> Result<Built, CalibrationError> {
    let evaluable = |a: f64, b: f64| spline.contains(a - cfg.tau_max) && spline.contains(b + cfg.tau_max);
    let mut terms = Vec::new();
    let mut excluded = vec![0; others.len() + 1];
    for s in event {
        if evaluable(s.t + cfg.tau_max, s.t - cfg.tau_max) {
            terms.push(Term { sensor: None, kind: SensorKind::Event, measurement: Measurement::Rate { t: s.t, omega: s.omega } });
        } else {
            excluded[0] += 1;
        }
    }
    let mut weights = vec![if cfg.weighting == Weighting::InverseStd { 1.0 / event_sigma } else { 1.0 }];
    for (k, (track, _)) in others.iter().enumerate() {
        if track.kind == SensorKind::Event {
            return Err(CalibrationError::Input(format!("'{}' is a second event track", track.id)));
        }
        let before = terms.len();
        if track.kind.is_relative() {
            for r in &track.relative_rotations {
                if evaluable(r.t_i, r.t_j) {
                    let measurement = Measurement::Pair { t_i: r.t_i, t_j: r.t_j, rotation: r.rotation() };
                    terms.push(Term { sensor: Some(k), kind: track.kind, measurement });
                } else {
                    excluded[k + 1] += 1;
                }
            }
        } else {
            for s in &track.angular_velocity {
                if evaluable(s.t, s.t) {
                    terms.push(Term { sensor: Some(k), kind: track.kind, measurement: Measurement::Rate { t: s.t, omega: s.omega } });
                } else {
                    excluded[k + 1] += 1;
                }
            }
        }
        if terms.len() == before {
            return Err(CalibrationError::Input(format!("sensor '{}' has no samples within the event track span", track.id)));
        }
        weights.push(match cfg.weighting {
            Weighting::InverseStd => 1.0 / cfg.noise_of(&track.id, track.kind).max(1e-12),
            Weighting::Unweighted => 1.0,
        });
    }
    let state = CalibrationState { spline, sensors: others.iter().map(|(_, p)| p.clone()).collect() };
    let layout = Layout::new(&state);
    let problem = RefineProblem { terms, weights, huber: cfg.huber, tau_max: cfg.tau_max, layout };
    Ok(Built { problem, state, event_id: event_id.to_string(), event_sigma, excluded })
}

/// Per-sensor residual statistics at `state`.
pub fn evaluate_cost(built: &Built, state: &CalibrationState) -> Result<ResidualReport, CalibrationError> {
    let problem = &built.problem;
    let n = state.sensors.len() + 1;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64, 0.0f64); n];
    let raw: Vec<(usize, f64, f64)> = problem
        .terms
        .iter()
        .map(|t| {
            let r = t.evaluate(state, &problem.layout, false)?.residual.norm();
            let c = problem.linearize_term(state, t, false)?.residual.norm_squared();
            Ok((t.sensor.map_or(0, |k| k + 1), r, c))
        })
        .collect::<Result<_, SplineError>>()?;
    for (k, r, c) in raw {
        let e = &mut sums[k];
        e.0 += 1;
        e.1 += r * r;
        e.2 = e.2.max(r);
        e.3 += c;
    }
    let mut terms = Vec::with_capacity(n);
    for (k, (count, sq, max, cost)) in sums.into_iter().enumerate() {
        let (sensor, kind) = if k == 0 {
            (built.event_id.clone(), SensorKind::Event)
        } else {
            (state.sensors[k - 1].id.clone(), state.sensors[k - 1].kind)
        };
        let rms = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };
        terms.push(TermReport { sensor, kind, count, excluded: built.excluded[k], rms, max, cost });
    }
    let total_cost = terms.iter().map(|t| t.cost).sum();
    Ok(ResidualReport { terms, total_cost })
}

/// Unweighted residual norms grouped by sensor, event camera first.
pub fn residual_norms(built: &Built, state: &CalibrationState) -> Result<Vec<Vec<f64>>, CalibrationError> {
    let mut out = vec![Vec::new(); state.sensors.len() + 1];
    for t in &built.problem.terms {
        let r = t.evaluate(state, &built.problem.layout, false)?.residual.norm();
        out[t.sensor.map_or(0, |k| k + 1)].push(r);
    }
    Ok(out)
}

/// Direction in border-parameter space with little information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakDirection {
    pub eigenvalue: f64,
    /// dominant components `(parameter, weight)`
    pub components: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub state: CalibrationState,
    pub iterations: usize,
    pub termination: Termination,
    pub cost_history: Vec<f64>,
    pub report: ResidualReport,
    pub weak_directions: Vec<WeakDirection>,
    /// marginal standard deviation of every border parameter, in layout order
    pub border_std: Vec<f64>,
}

const WEAK_RATIO: f64 = 1e-9;

/// Levenberg-Marquardt from `state`.
pub fn optimize(built: &Built, state: CalibrationState, cfg: &RefineConfig) -> Result<Optimized, CalibrationError> {
    if cfg.check_jacobians {
        let err = jacobian_check(&built.problem, &state, 200, 0, 1e-6)?;
        log::info!("analytic vs finite-difference Jacobians: max relative error {err:.2e}");
    }
    let outcome = levenberg_marquardt(&built.problem, state, &cfg.lm())?;
    let report = evaluate_cost(built, &outcome.state)?;
    let names = built.problem.layout.border_names(&outcome.state);
    let mut weak_directions = Vec::new();
    let mut border_std = vec![f64::NAN; names.len()];
    if let Some(eig) = outcome.final_equations.as_ref().and_then(|ne| ne.marginal_border_spectrum()) {
        let top = eig.eigenvalues.max();
        let mut var = vec![0.0; names.len()];
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            if l > WEAK_RATIO * top && l > 0.0 {
                for i in 0..names.len() {
                    var[i] += v[i] * v[i] / l;
                }
                continue;
            }
            for x in var.iter_mut().zip(v.iter()).filter(|(_, c)| c.abs() > 0.1) {
                *x.0 = f64::INFINITY;
            }
            let mut components: Vec<(String, f64)> =
                names.iter().cloned().zip(v.iter().copied()).filter(|(_, c)| c.abs() > 0.1).collect();
            components.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
            weak_directions.push(WeakDirection { eigenvalue: l, components });
        }
        border_std = var.iter().map(|v| v.sqrt()).collect();
    }
    for w in &weak_directions {
        log::warn!("poorly constrained direction (eigenvalue {:.2e}): {:?}", w.eigenvalue, w.components);
    }
    Ok(Optimized {
        state: outcome.state,
        iterations: outcome.iterations,
        termination: outcome.termination,
        cost_history: outcome.cost_history,
        report,
        weak_directions,
        border_std,
    })
}

/// Largest relative difference between analytic Jacobian columns and central
/// finite differences over `probes` random (term, column) pairs.
pub fn jacobian_check(problem: &RefineProblem, state: &CalibrationState, probes: usize, seed: u64, h: f64) -> Result<f64, SplineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = problem.layout.border_start + problem.layout.border_dim;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let term = &problem.terms[rng.gen_range(0..problem.terms.len())];
        let ev = term.evaluate(state, &problem.layout, true)?;
        let seg = &ev.jacobian[rng.gen_range(0..ev.jacobian.len())];
        let col = seg.column + rng.gen_range(0..seg.matrix.ncols());
        let analytic: Vector3<f64> = ev
            .jacobian
            .iter()
            .filter(|s| col >= s.column && col < s.column + s.matrix.ncols())
            .map(|s| s.matrix.column(col - s.column).into_owned())
            .sum();
        let mut delta = DVector::zeros(dim);
        delta[col] = h;
        let plus = term.evaluate(&problem.apply(state, &delta), &problem.layout, false)?.residual;
        delta[col] = -h;
        let minus = term.evaluate(&problem.apply(state, &delta), &problem.layout, false)?.residual;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (numeric - analytic).norm() / analytic.norm().max(numeric.norm()).max(1e-3);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Per-sensor outcome of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEstimate {
    pub id: String,
    pub kind: SensorKind,
    pub rotation: Rotation,
    pub tau: f64,
    pub bias: Option<Vector3<f64>>,
    pub init_rotation: Rotation,
    pub init_tau: f64,
    /// trace correlation at the initial offset
    pub init_correlation: f64,
    /// marginal std of the rotation (rad, per tangent axis), offset (s), bias
    pub rotation_std: Vector3<f64>,
    pub tau_std: f64,
    pub bias_std: Option<Vector3<f64>>,
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub event_id: String,
    pub sensors: Vec<SensorEstimate>,
    pub report: ResidualReport,
    pub initial_report: ResidualReport,
    pub iterations: usize,
    pub termination: Termination,
    pub cost_history: Vec<f64>,
    pub weak_directions: Vec<WeakDirection>,
    pub weighting: Weighting,
    pub event_sigma: f64,
    pub init: Vec<CcaResult>,
    pub state: CalibrationState,
    /// final residual norms per sensor, event camera first
    pub residual_norms: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorEstimate> {
        self.sensors.iter().find(|s| s.id == id)
    }
}

/// Trace-correlation initialization of every non-event track.
pub fn initialize(
    event: &[AngularVelocitySample],
    others: &[SensorTrack],
    cfg: &RefineConfig,
) -> Result<(Vec<SensorParams>, Vec<CcaResult>), CalibrationError> {
    let mut params = Vec::with_capacity(others.len());
    let mut inits = Vec::with_capacity(others.len());
    for track in others {
        let rates = track
            .omega_samples()
            .map_err(|source| CalibrationError::Motion { sensor: track.id.clone(), source })?;
        let init = initialize_pair(event, &rates, &cfg.cca).map_err(|source| CalibrationError::Init { sensor: track.id.clone(), source })?;
        // ω_e = R (ω_o + b) in the means
        let bias = if track.kind == SensorKind::Imu {
            init.rotation.inverse() * init.mean_e - init.mean_o
        } else {
            Vector3::zeros()
        };
        log::info!(
            "{}: initial τ = {:.2} ms, r̄ = {:.4}, rotation (deg) {:?}",
            track.id,
            init.tau * 1e3,
            init.search.r_peak,
            (log_map(&init.rotation) * 180.0 / std::f64::consts::PI).as_slice()
        );
        params.push(SensorParams { id: track.id.clone(), kind: track.kind, rotation: init.rotation, tau: init.tau, bias });
        inits.push(init);
    }
    Ok((params, inits))
}

/// Initialize every sensor against the event camera, then refine jointly.
pub fn calibrate(tracks: &[SensorTrack], cfg: &RefineConfig) -> Result<CalibrationResult, CalibrationError> {
    let events: Vec<&SensorTrack> = tracks.iter().filter(|t| t.kind == SensorKind::Event).collect();
    let [event] = events.as_slice() else {
        return Err(CalibrationError::Input(format!("need exactly one event track, got {}", events.len())));
    };
    let others: Vec<SensorTrack> = tracks.iter().filter(|t| t.kind != SensorKind::Event).cloned().collect();
    if others.is_empty() {
        return Err(CalibrationError::Input("need at least one sensor besides the event camera".into()));
    }
    let mut ids: Vec<&str> = tracks.iter().map(|t| t.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CalibrationError::Input(format!("duplicate sensor id '{}'", w[0])));
    }
    let event_rates = &event.angular_velocity;
    let mut warnings = Vec::new();

    let (params, inits) = initialize(event_rates, &others, cfg)?;
    for (p, init) in params.iter().zip(&inits) {
        if init.excitation < crate::cca::MIN_EXCITATION {
            warnings.push(format!("{}: weak excitation, smallest Σ_ee eigenvalue {:.2e}", p.id, init.excitation));
        }
        if p.tau.abs() > cfg.tau_max {
            warnings.push(format!("{}: initial offset {:.1} ms exceeds tau_max and was clamped", p.id, p.tau * 1e3));
        }
    }
    let params: Vec<SensorParams> =
        params.into_iter().map(|p| SensorParams { tau: p.tau.clamp(-cfg.tau_max, cfg.tau_max), ..p }).collect();
    let pairs: Vec<(SensorTrack, SensorParams)> = others.into_iter().zip(params).collect();
    let built = build_problem(&event.id, event_rates, &pairs, cfg)?;
    let initial_report = evaluate_cost(&built, &built.state)?;
    let opt = optimize(&built, built.state.clone(), cfg)?;
    for (t, n) in opt.report.terms.iter().filter(|t| t.excluded > 0).map(|t| (t, t.excluded)) {
        log::info!("{}: {n} samples outside the spline span were not used", t.sensor);
    }
    for w in &opt.weak_directions {
        warnings.push(format!("poorly constrained direction: {:?}", w.components));
    }
    if !opt.termination.converged() {
        warnings.push(format!("optimizer stopped after {} iterations without converging", opt.iterations));
    }

    let residual_norms = residual_norms(&built, &opt.state)?;
    let layout = &built.problem.layout;
    let sensors = opt
        .state
        .sensors
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let c = layout.offsets[k];
            let std = |i: usize| opt.border_std.get(c + i).copied().unwrap_or(f64::NAN);
            let is_imu = layout.has_bias[k];
            SensorEstimate {
                id: s.id.clone(),
                kind: s.kind,
                rotation: s.rotation,
                tau: s.tau,
                bias: is_imu.then_some(s.bias),
                init_rotation: inits[k].rotation,
                init_tau: inits[k].tau,
                init_correlation: inits[k].search.r_peak,
                rotation_std: Vector3::new(std(0), std(1), std(2)),
                tau_std: std(3),
                bias_std: is_imu.then(|| Vector3::new(std(4), std(5), std(6))),
            }
        })
        .collect();
    Ok(CalibrationResult {
        event_id: event.id.clone(),
        sensors,
        report: opt.report,
        initial_report,
        iterations: opt.iterations,
        termination: opt.termination,
        cost_history: opt.cost_history,
        weak_directions: opt.weak_directions,
        weighting: cfg.weighting,
        event_sigma: built.event_sigma,
        init: inits,
        state: opt.state,
        residual_norms,
        warnings,
    })
}

/// Raw events in: normal-flow angular velocity for the event camera, then
/// [`calibrate`] against `others`.
pub fn calibrate_events(
    event_id: &str,
    events: &[Event],
    camera: &CameraIntrinsics,
    flow: &FlowConfig,
    others: &[SensorTrack],
    cfg: &RefineConfig,
) -> Result<CalibrationResult, CalibrationError> {
    let track = angular_velocity_track(events, camera, flow).map_err(CalibrationError::Flow)?;
    if !track.skipped.is_empty() {
        log::info!("{}: {} of {} windows skipped", event_id, track.skipped.len(), track.skipped.len() + track.samples.len());
    }
    if track.samples.len() < 2 {
        return Err(CalibrationError::Flow(format!("only {} angular velocity samples recovered", track.samples.len())));
    }
    let mut tracks = vec![SensorTrack::from_rates(event_id, SensorKind::Event, track.samples)];
    tracks.extend(others.iter().cloned());
    calibrate(&tracks, cfg)
}
