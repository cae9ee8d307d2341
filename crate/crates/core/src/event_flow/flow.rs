use super::plane::PlaneFit;
use nalgebra::{RowVector3, Vector2};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalFlowObservation {
    /// pixel location
    pub x: Vector2<f64>,
    pub t: f64,
    /// normal flow in px/s
    pub n: Vector2<f64>,
    /// variance of ‖n‖ in (px/s)²
    pub var_norm: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("time-surface gradient {gradient:.3e} s/px implies flow above {max_flow} px/s")]
    GradientTooSmall { gradient: f64, max_flow: f64 },
    #[error("no observations to filter")]
    Empty,
}

/// Normal flow `n = ∇T / ‖∇T‖²` with first-order variance of `‖n‖`.
///
/// Fits whose flow magnitude would exceed `max_flow` px/s are rejected.
pub fn normal_flow(fit: &PlaneFit, x: Vector2<f64>, t: f64, max_flow: f64) -> Result<NormalFlowObservation, FlowError> {
    let (a, b) = (fit.p.x, fit.p.y);
    let g2 = a * a + b * b;
    let g_min = 1.0 / max_flow;
    if !(g2 >= g_min * g_min) || g2 == 0.0 {
        return Err(FlowError::GradientTooSmall { gradient: g2.sqrt(), max_flow });
    }
    let n = Vector2::new(a, b) / g2;
    let s = g2.powf(-1.5);
    let j = RowVector3::new(-a * s, -b * s, 0.0);
    let var_norm = (j * fit.cov * j.transpose())[0].max(0.0);
    Ok(NormalFlowObservation { x, t, n, var_norm })
}

/// Drop the `ceil(fraction · N)` observations with the largest variance.
///
/// Survivors keep their input order. On equal variance the earlier
/// timestamp survives.
pub fn filter_by_variance(
    obs: &[NormalFlowObservation],
    discard_fraction: f64,
) -> Result<Vec<NormalFlowObservation>, FlowError> {
    if obs.is_empty() {
        return Err(FlowError::Empty);
    }
    let n = obs.len();
    let drop = ((discard_fraction.clamp(0.0, 1.0) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        obs[i]
            .var_norm
            .total_cmp(&obs[j].var_norm)
            .then(obs[i].t.total_cmp(&obs[j].t))
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; n];
    for &i in &order[..n - drop.min(n)] {
        keep[i] = true;
    }
    Ok(obs.iter().zip(keep).filter(|(_, k)| *k).map(|(o, _)| *o).collect())
}
