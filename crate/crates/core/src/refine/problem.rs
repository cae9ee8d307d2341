use super::terms::{huber, Term};
use crate::lsq::{LinearizedBlock, NormalEquations, Problem, SolveError};
use crate::motion::SensorKind;
use crate::so3::{exp_map, renormalize, Rotation};
use crate::spline::{So3Spline, SplineError};
use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Extrinsic rotation `R^e_o`, time offset and (IMU only) gyro bias of one
/// sensor relative to the event camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub id: String,
    pub kind: SensorKind,
    pub rotation: Rotation,
    /// s; a sample stamped `t` observes the spline at `t + tau`
    pub tau: f64,
    /// rad/s, zero and fixed for non-IMU sensors
    pub bias: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub spline: So3Spline,
    pub sensors: Vec<SensorParams>,
}

/// Column layout: spline poses `1..n` in the band, then per sensor
/// `[rotation (3), tau (1), bias (3, IMU only)]` in the border.
#[derive(Debug, Clone)]
pub struct Layout {
    pub border_start: usize,
    pub offsets: Vec<usize>,
    pub has_bias: Vec<bool>,
    pub border_dim: usize,
}

impl Layout {
    pub fn new(state: &CalibrationState) -> Self {
        let border_start = 3 * (state.spline.num_poses() - 1);
        let mut offsets = Vec::with_capacity(state.sensors.len());
        let mut has_bias = Vec::with_capacity(state.sensors.len());
        let mut col = 0;
        for s in &state.sensors {
            offsets.push(col);
            let bias = s.kind == SensorKind::Imu;
            has_bias.push(bias);
            col += if bias { 7 } else { 4 };
        }
        Self { border_start, offsets, has_bias, border_dim: col }
    }

    /// Human-readable name of every border column.
    pub fn border_names(&self, state: &CalibrationState) -> Vec<String> {
        let mut names = Vec::with_capacity(self.border_dim);
        for (k, s) in state.sensors.iter().enumerate() {
            for axis in ["x", "y", "z"] {
                names.push(format!("{}.rotation.{axis}", s.id));
            }
            names.push(format!("{}.tau", s.id));
            if self.has_bias[k] {
                for axis in ["x", "y", "z"] {
                    names.push(format!("{}.bias.{axis}", s.id));
                }
            }
        }
        names
    }
}

/// The joint cost as a least-squares problem.
pub struct RefineProblem {
    pub terms: Vec<Term>,
    /// whitening factor per term class: index 0 is the event camera, then
    /// one per sensor
    pub weights: Vec<f64>,
    pub huber: Option<f64>,
    pub tau_max: f64,
    pub layout: Layout,
}

impl RefineProblem {
    pub fn weight(&self, term: &Term) -> f64 {
        self.weights[term.sensor.map_or(0, |k| k + 1)]
    }

    /// Weighted, robustified residual and Jacobian of one term. The squared
    /// norm of the returned residual is the term's cost contribution.
    pub fn linearize_term(&self, state: &CalibrationState, term: &Term, jacobians: bool) -> Result<LinearizedBlock, SplineError> {
        let ev = term.evaluate(state, &self.layout, jacobians)?;
        let w = self.weight(term);
        let r = ev.residual * w;
        let (rs, js) = match self.huber {
            Some(delta) => {
                let s = r.norm_squared();
                let (rho, drho) = huber(s, delta);
                if s > 0.0 && rho < s {
                    let f = (rho / s).sqrt();
                    // keeps the gradient exact: J̃ᵀr̃ = ρ'(s) Jᵀr
                    (f, drho / f)
                } else {
                    (1.0, 1.0)
                }
            }
            None => (1.0, 1.0),
        };
        let mut jacobian = ev.jacobian;
        for seg in &mut jacobian {
            seg.matrix *= w * js;
        }
        Ok(LinearizedBlock { residual: r * rs, jacobian })
    }

    pub fn blocks(&self, state: &CalibrationState, jacobians: bool) -> Result<Vec<LinearizedBlock>, SplineError> {
        self.terms.par_iter().map(|t| self.linearize_term(state, t, jacobians)).collect()
    }

    /// Apply a step to a state; `delta` follows [`Layout`].
    pub fn apply(&self, state: &CalibrationState, delta: &DVector<f64>) -> CalibrationState {
        let mut out = state.clone();
        for (k, pose) in out.spline.poses_mut().iter_mut().enumerate().skip(1) {
            let d = Vector3::new(delta[3 * (k - 1)], delta[3 * (k - 1) + 1], delta[3 * (k - 1) + 2]);
            *pose = renormalize(&(*pose * exp_map(&d)));
        }
        let b0 = self.layout.border_start;
        for (k, s) in out.sensors.iter_mut().enumerate() {
            let c = b0 + self.layout.offsets[k];
            let d = Vector3::new(delta[c], delta[c + 1], delta[c + 2]);
            s.rotation = renormalize(&(s.rotation * exp_map(&d)));
            s.tau = (s.tau + delta[c + 3]).clamp(-self.tau_max, self.tau_max);
            if self.layout.has_bias[k] {
                s.bias += Vector3::new(delta[c + 4], delta[c + 5], delta[c + 6]);
            }
        }
        out
    }
}

impl Problem for RefineProblem {
    type State = CalibrationState;
    type Error = ProblemError;

    fn band_dim(&self) -> usize {
        self.layout.border_start
    }

    fn border_dim(&self) -> usize {
        self.layout.border_dim
    }

    fn linearize(&self, state: &CalibrationState) -> Result<NormalEquations, ProblemError> {
        let blocks = self.blocks(state, true)?;
        Ok(NormalEquations::assemble(self.band_dim(), self.border_dim(), &blocks))
    }

    fn cost(&self, state: &CalibrationState) -> Result<f64, ProblemError> {
        let parts: Vec<f64> = self
            .terms
            .par_iter()
            .map(|t| self.linearize_term(state, t, false).map(|b| b.residual.norm_squared()))
            .collect::<Result<_, _>>()?;
        Ok(parts.iter().sum())
    }

    fn retract(&self, state: &CalibrationState, delta: &DVector<f64>) -> CalibrationState {
        self.apply(state, delta)
    }
}
