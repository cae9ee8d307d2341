//! Levenberg-Marquardt over normal equations with an arrow structure.
//!
//! Parameters split into a *banded* block (spline control poses, where each
//! residual touches a short run of consecutive poses) and a small dense
//! *border* block (extrinsics, offsets, biases). The Hessian approximation
//!
//! ```text
//! H = | A   B |     A: banded, B: dense (nb x m), C: dense (m x m)
//!     | B^T C |
//! ```
//!
//! is factored with a banded Cholesky on `A` and a Schur complement on the
//! border, so the cost per iteration is linear in the number of poses.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("normal equations not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite cost {0}")]
    NonFiniteCost(f64),
}

/// One residual block's Jacobian with respect to a contiguous run of parameters.
#[derive(Debug, Clone)]
pub struct JacobianSegment {
    pub column: usize,
    pub matrix: nalgebra::Matrix3xX<f64>,
}

impl JacobianSegment {
    pub fn new(column: usize, matrix: nalgebra::Matrix3xX<f64>) -> Self {
        Self { column, matrix }
    }

    pub fn from_matrix3(column: usize, m: &Matrix3<f64>) -> Self {
        Self { column, matrix: nalgebra::Matrix3xX::from_column_slice(m.as_slice()) }
    }

    pub fn from_vector(column: usize, v: &Vector3<f64>) -> Self {
        Self { column, matrix: nalgebra::Matrix3xX::from_column_slice(v.as_slice()) }
    }
}

/// Linearized residual block: `r + J delta`, already weighted.
#[derive(Debug, Clone)]
pub struct LinearizedBlock {
    pub residual: Vector3<f64>,
    pub jacobian: Vec<JacobianSegment>,
}

#[derive(Debug, Clone)]
pub struct NormalEquations {
    band_dim: usize,
    border_dim: usize,
    half_bandwidth: usize,
    /// Lower band of `A`, row-major: `band[i * (w + 1) + (i - j)]`.
    band: Vec<f64>,
    border: DMatrix<f64>,
    corner: DMatrix<f64>,
    gradient: DVector<f64>,
    cost: f64,
}

impl NormalEquations {
    /// Assemble `J^T J`, `J^T r` and the cost from linearized blocks.
    pub fn assemble(band_dim: usize, border_dim: usize, blocks: &[LinearizedBlock]) -> Self {
        let mut w = 0;
        for b in blocks {
            let mut lo = usize::MAX;
            let mut hi = 0;
            for seg in &b.jacobian {
                if seg.column < band_dim {
                    let end = (seg.column + seg.matrix.ncols()).min(band_dim);
                    lo = lo.min(seg.column);
                    hi = hi.max(end - 1);
                }
            }
            if lo != usize::MAX {
                w = w.max(hi - lo);
            }
        }
        let mut ne = Self {
            band_dim,
            border_dim,
            half_bandwidth: w,
            band: vec![0.0; band_dim * (w + 1)],
            border: DMatrix::zeros(band_dim, border_dim),
            corner: DMatrix::zeros(border_dim, border_dim),
            gradient: DVector::zeros(band_dim + border_dim),
            cost: 0.0,
        };
        for b in blocks {
            ne.add(b);
        }
        ne
    }

    fn add(&mut self, block: &LinearizedBlock) {
        self.cost += block.residual.norm_squared();
        for sa in &block.jacobian {
            let g = sa.matrix.transpose() * block.residual;
            for (k, v) in g.iter().enumerate() {
                self.gradient[sa.column + k] += v;
            }
            for sb in &block.jacobian {
                let h = sa.matrix.transpose() * &sb.matrix;
                for i in 0..h.nrows() {
                    let gi = sa.column + i;
                    for j in 0..h.ncols() {
                        let gj = sb.column + j;
                        if gj <= gi {
                            self.add_lower(gi, gj, h[(i, j)]);
                        }
                    }
                }
            }
        }
    }

    fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let nb = self.band_dim;
        if i < nb {
            let w = self.half_bandwidth;
            self.band[i * (w + 1) + (i - j)] += v;
        } else if j < nb {
            self.border[(j, i - nb)] += v;
        } else {
            self.corner[(i - nb, j - nb)] += v;
            if i != j {
                self.corner[(j - nb, i - nb)] += v;
            }
        }
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn dim(&self) -> usize {
        self.band_dim + self.border_dim
    }

    fn band_diag(&self, i: usize) -> f64 {
        self.band[i * (self.half_bandwidth + 1)]
    }

    /// Solve `(H + lambda * D) x = -g` with `D = diag(max(H_ii, floor))`.
    pub fn solve_damped(&self, lambda: f64) -> Result<DVector<f64>, SolveError> {
        const FLOOR: f64 = 1e-9;
        let nb = self.band_dim;
        let m = self.border_dim;
        let w = self.half_bandwidth;

        let mut band = self.band.clone();
        for i in 0..nb {
            let d = self.band_diag(i);
            band[i * (w + 1)] += lambda * d.max(FLOOR) + if d <= 0.0 { FLOOR } else { 0.0 };
        }
        let chol = BandCholesky::factor(nb, w, band)?;

        let rhs = -&self.gradient;
        let rb = rhs.rows(0, nb).into_owned();
        let rm = rhs.rows(nb, m).into_owned();

        if m == 0 {
            return Ok(chol.solve(&rb));
        }

        let mut corner = self.corner.clone();
        for i in 0..m {
            let d = corner[(i, i)];
            corner[(i, i)] += lambda * d.max(FLOOR) + if d <= 0.0 { FLOOR } else { 0.0 };
        }
        // Schur complement S = C - B^T A^-1 B
        let mut a_inv_b = DMatrix::zeros(nb, m);
        for c in 0..m {
            let col = chol.solve(&self.border.column(c).into_owned());
            a_inv_b.set_column(c, &col);
        }
        let schur = &corner - self.border.transpose() * &a_inv_b;
        let a_inv_rb = chol.solve(&rb);
        let reduced = &rm - self.border.transpose() * &a_inv_rb;
        let xm = schur.cholesky().ok_or(SolveError::NotPositiveDefinite)?.solve(&reduced);
        let xb = &a_inv_rb - &a_inv_b * &xm;

        let mut x = DVector::zeros(nb + m);
        x.rows_mut(0, nb).copy_from(&xb);
        x.rows_mut(nb, m).copy_from(&xm);
        Ok(x)
    }

    /// Eigen-decomposition of the border block after marginalizing the banded
    /// block, i.e. the information available on the border parameters.
    pub fn marginal_border_spectrum(&self) -> Option<SymmetricEigen<f64, nalgebra::Dyn>> {
        let nb = self.band_dim;
        let m = self.border_dim;
        if m == 0 {
            return None;
        }
        let w = self.half_bandwidth;
        let mut band = self.band.clone();
        for i in 0..nb {
            // tiny regularization so unobserved poses do not break the factorization
            let d = self.band_diag(i);
            band[i * (w + 1)] += 1e-9 * d.max(1e-9);
        }
        let chol = BandCholesky::factor(nb, w, band).ok()?;
        let mut a_inv_b = DMatrix::zeros(nb, m);
        for c in 0..m {
            a_inv_b.set_column(c, &chol.solve(&self.border.column(c).into_owned()));
        }
        let schur = &self.corner - self.border.transpose() * &a_inv_b;
        Some(SymmetricEigen::new((&schur + schur.transpose()) * 0.5))
    }
}

struct BandCholesky {
    n: usize,
    w: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor(n: usize, w: usize, mut a: Vec<f64>) -> Result<Self, SolveError> {
        let stride = w + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(w);
            for j in j0..=i {
                let mut sum = a[i * stride + (i - j)];
                let k0 = j0.max(j.saturating_sub(w));
                for k in k0..j {
                    sum -= a[i * stride + (i - k)] * a[j * stride + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(SolveError::NotPositiveDefinite);
                    }
                    a[i * stride] = sum.sqrt();
                } else {
                    a[i * stride + (i - j)] = sum / a[j * stride];
                }
            }
        }
        Ok(Self { n, w, l: a })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let stride = self.w + 1;
        let mut y = b.clone();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.w)..i {
                s -= self.l[i * stride + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * stride];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in (i + 1)..(i + 1 + self.w).min(self.n) {
                s -= self.l[k * stride + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * stride];
        }
        y
    }
}

/// A nonlinear least-squares problem over a manifold-valued state.
pub trait Problem {
    type State: Clone;
    type Error: From<SolveError>;

    fn band_dim(&self) -> usize;
    fn border_dim(&self) -> usize;
    fn linearize(&self, state: &Self::State) -> Result<NormalEquations, Self::Error>;
    fn cost(&self, state: &Self::State) -> Result<f64, Self::Error>;
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_cost_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            initial_lambda: 1e-4,
            max_lambda: 1e10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    CostConverged,
    GradientConverged,
    MaxIterations,
    /// No step at maximum damping reduced the cost.
    DampingSaturated,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome<S> {
    pub state: S,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost of the initial state followed by every accepted step.
    pub cost_history: Vec<f64>,
    pub final_equations: Option<NormalEquations>,
}

pub fn levenberg_marquardt<P: Problem>(
    problem: &P,
    initial: P::State,
    options: &LmOptions,
) -> Result<LmOutcome<P::State>, P::Error> {
    let mut state = initial;
    let mut lambda = options.initial_lambda;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    let final_equations = loop {
        let ne = problem.linearize(&state)?;
        let cost = ne.cost();
        if !cost.is_finite() {
            return Err(SolveError::NonFiniteCost(cost).into());
        }
        if history.is_empty() {
            history.push(cost);
        }
        if ne.gradient().amax() < options.gradient_tolerance {
            termination = Termination::GradientConverged;
            break ne;
        }
        if iterations >= options.max_iterations {
            break ne;
        }
        iterations += 1;

        let mut accepted = None;
        while lambda <= options.max_lambda {
            let delta = match ne.solve_damped(lambda) {
                Ok(d) => d,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = problem.retract(&state, &delta);
            let new_cost = problem.cost(&candidate)?;
            if new_cost.is_finite() && new_cost < cost {
                lambda = (lambda / 3.0).max(1e-12);
                accepted = Some((candidate, new_cost));
                break;
            }
            lambda *= 10.0;
        }

        match accepted {
            Some((candidate, new_cost)) => {
                state = candidate;
                history.push(new_cost);
                log::debug!("lm iter {iterations}: cost {cost:.6e} -> {new_cost:.6e}, lambda {lambda:.1e}");
                if (cost - new_cost) <= options.relative_cost_tolerance * cost {
                    termination = Termination::CostConverged;
                    break problem.linearize(&state)?;
                }
            }
            None => {
                termination = Termination::DampingSaturated;
                break ne;
            }
        }
    };

    Ok(LmOutcome { state, iterations, termination, cost_history: history, final_equations: Some(final_equations) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from(ne: &NormalEquations) -> DMatrix<f64> {
        let n = ne.dim();
        let nb = ne.band_dim;
        let w = ne.half_bandwidth;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..nb {
            for j in i.saturating_sub(w)..=i {
                let v = ne.band[i * (w + 1) + (i - j)];
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        for i in 0..nb {
            for c in 0..ne.border_dim {
                h[(i, nb + c)] = ne.border[(i, c)];
                h[(nb + c, i)] = ne.border[(i, c)];
            }
        }
        for a in 0..ne.border_dim {
            for b in 0..ne.border_dim {
                h[(nb + a, nb + b)] = ne.corner[(a, b)];
            }
        }
        h
    }

    fn random_blocks(rng: &mut ChaCha8Rng, nb: usize, m: usize, count: usize) -> Vec<LinearizedBlock> {
        (0..count)
            .map(|_| {
                let start = rng.gen_range(0..nb - 5);
                let mut jac = vec![JacobianSegment::new(
                    start,
                    nalgebra::Matrix3xX::from_fn(6, |_, _| rng.gen_range(-1.0..1.0)),
                )];
                if m > 0 && rng.gen_bool(0.5) {
                    jac.push(JacobianSegment::new(nb, nalgebra::Matrix3xX::from_fn(m, |_, _| rng.gen_range(-1.0..1.0))));
                }
                LinearizedBlock {
                    residual: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                    jacobian: jac,
                }
            })
            .collect()
    }

    #[test]
    fn structured_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(nb, m) in &[(30usize, 0usize), (40, 4), (25, 7)] {
            let blocks = random_blocks(&mut rng, nb, m, 200);
            let ne = NormalEquations::assemble(nb, m, &blocks);
            let lambda = 0.3;
            let x = ne.solve_damped(lambda).unwrap();
            let mut h = dense_from(&ne);
            for i in 0..h.nrows() {
                h[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let dense = h.cholesky().unwrap().solve(&(-ne.gradient()));
            assert!((x - dense).amax() < 1e-9);
        }
    }

    #[test]
    fn gradient_and_cost_match_dense_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (nb, m) = (20, 3);
        let blocks = random_blocks(&mut rng, nb, m, 50);
        let ne = NormalEquations::assemble(nb, m, &blocks);
        let mut j = DMatrix::zeros(3 * blocks.len(), nb + m);
        let mut r = DVector::zeros(3 * blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            for k in 0..3 {
                r[3 * b + k] = block.residual[k];
            }
            for seg in &block.jacobian {
                for c in 0..seg.matrix.ncols() {
                    for k in 0..3 {
                        j[(3 * b + k, seg.column + c)] += seg.matrix[(k, c)];
                    }
                }
            }
        }
        assert!((j.transpose() * &r - ne.gradient()).amax() < 1e-12);
        assert!((dense_from(&ne) - j.transpose() * &j).amax() < 1e-12);
        assert!((ne.cost() - r.norm_squared()).abs() < 1e-12);
    }
}
