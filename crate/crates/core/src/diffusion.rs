//! One semi-implicit time step of forward-backward diffusion on the complete
//! graph.
//!
//! Each step freezes the edge coefficients at the previous positions and
//! solves, for every coordinate `i`,
//!
//! ```text
//! (1 + tau * sum_u g(v,u)) x_i(v) - tau * sum_u g(v,u) x_i(u) = x_i_prev(v)
//! ```
//!
//! with successive over-relaxation. All coordinates share one coefficient set.

use crate::error::{Error, Result};
use crate::graph::NetworkState;

/// Settings for the SOR solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SorConfig {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SorConfig {
    fn default() -> Self {
        Self {
            omega: 1.3,
            tol: 1e-9,
            max_iters: 1000,
        }
    }
}

/// Model and integration parameters of the network dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionParams {
    /// Per-coordinate edge length weights `K_i >= 0`.
    pub weights: Vec<f64>,
    /// Cutoff subtracted from newcomer edge coefficients.
    pub delta: f64,
    /// Coefficient scale on edges inside a cluster.
    pub eps_forward: f64,
    /// Coefficient scale on edges between clusters (negative).
    pub eps_backward: f64,
    pub tau: f64,
    pub max_steps: usize,
    pub sor: SorConfig,
    /// Labeled coordinates leaving this interval are reported as divergence.
    pub divergence_bounds: (f64, f64),
}

impl DiffusionParams {
    pub const DEFAULT_EPS_FORWARD: f64 = 1.0;
    pub const DEFAULT_EPS_BACKWARD: f64 = -0.001;
    pub const DEFAULT_TAU: f64 = 1.0;
    pub const DEFAULT_MAX_STEPS: usize = 200;

    /// Parameters with the given weights and cutoff; everything else default.
    pub fn new(weights: Vec<f64>, delta: f64) -> Self {
        Self {
            weights,
            delta,
            eps_forward: Self::DEFAULT_EPS_FORWARD,
            eps_backward: Self::DEFAULT_EPS_BACKWARD,
            tau: Self::DEFAULT_TAU,
            max_steps: Self::DEFAULT_MAX_STEPS,
            sor: SorConfig::default(),
            divergence_bounds: (-10.0, 11.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.weights.is_empty() {
            return bad("at least one weight K_i is required".into());
        }
        if let Some(k) = self.weights.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return bad(format!("weights must be finite and nonnegative, got {k}"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.eps_forward > 0.0 && self.eps_forward.is_finite()) {
            return bad(format!("eps_forward must be positive, got {}", self.eps_forward));
        }
        if !(self.eps_backward < 0.0 && self.eps_backward.is_finite()) {
            return bad(format!("eps_backward must be negative, got {}", self.eps_backward));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.sor.omega > 0.0 && self.sor.omega < 2.0) {
            return bad(format!("SOR omega must lie in (0, 2), got {}", self.sor.omega));
        }
        if !(self.sor.tol > 0.0) || self.sor.max_iters == 0 {
            return bad("SOR tolerance and iteration limit must be positive".into());
        }
        Ok(())
    }

    fn weighted_length_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(k, (x, y))| k * (y - x) * (y - x))
            .sum()
    }
}

/// Coefficient of an edge between two labeled vertices.
pub fn edge_coefficient(xv: &[f64], xu: &[f64], same_cluster: bool, params: &DiffusionParams) -> f64 {
    let eps = if same_cluster {
        params.eps_forward
    } else {
        params.eps_backward
    };
    eps / (1.0 + params.weighted_length_sq(xv, xu))
}

/// Coefficient of an edge incident to the newcomer: forward only, with the
/// `delta` cutoff. Never negative.
pub fn newcomer_coefficient(xw: &[f64], xu: &[f64], params: &DiffusionParams) -> f64 {
    (params.eps_forward / (1.0 + params.weighted_length_sq(xw, xu)) - params.delta).max(0.0)
}

/// The linear system of one time step, shared by all coordinates.
#[derive(Clone, Debug)]
pub struct StepSystem {
    n: usize,
    dim: usize,
    /// `tau * g(v,u)`, row-major and symmetric, zero diagonal.
    coeffs: Vec<f64>,
    diag: Vec<f64>,
    /// Previous positions, row-major `n x dim`.
    rhs: Vec<f64>,
}

impl StepSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeff(&self, v: usize, u: usize) -> f64 {
        self.coeffs[v * self.n + u]
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn rhs(&self, coordinate: usize) -> Vec<f64> {
        (0..self.n).map(|v| self.rhs[v * self.dim + coordinate]).collect()
    }

    /// Matrix entry `A[v][u]`.
    pub fn entry(&self, v: usize, u: usize) -> f64 {
        if v == u {
            self.diag[v]
        } else {
            -self.coeff(v, u)
        }
    }

    /// `A x - b` for the given coordinate's right-hand side.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|v| {
                let row = &self.coeffs[v * self.n..(v + 1) * self.n];
                let off: f64 = row.iter().zip(x).map(|(c, xu)| c * xu).sum();
                self.diag[v] * x[v] - off - b[v]
            })
            .collect()
    }
}

fn check_finite(state: &NetworkState) -> Result<()> {
    if let Some(i) = state.positions().iter().position(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            step: state.step(),
            detail: format!("non-finite coordinate at vertex {}", i / state.dim()),
        });
    }
    Ok(())
}

/// Evaluates all edge coefficients at the current positions.
pub fn assemble_system(state: &NetworkState, params: &DiffusionParams) -> Result<StepSystem> {
    check_finite(state)?;
    if params.weights.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: params.weights.len(),
        });
    }
    let n = state.n_vertices();
    let newcomer = state.newcomer();
    let mut coeffs = vec![0.0; n * n];
    for v in 0..n {
        let xv = state.position(v);
        for u in (v + 1)..n {
            let xu = state.position(u);
            let g = if newcomer == Some(u) {
                newcomer_coefficient(xu, xv, params)
            } else {
                edge_coefficient(xv, xu, state.label(v) == state.label(u), params)
            };
            let c = params.tau * g;
            coeffs[v * n + u] = c;
            coeffs[u * n + v] = c;
        }
    }
    let diag = coeffs
        .chunks_exact(n)
        .map(|row| 1.0 + row.iter().sum::<f64>())
        .collect();
    Ok(StepSystem {
        n,
        dim: state.dim(),
        coeffs,
        diag,
        rhs: state.positions().to_vec(),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the system for one coordinate by SOR, starting from the previous
/// positions. Converged when `|Ax - b| <= tol |b|` (absolute when `b = 0`).
///
/// Row sums of the matrix are one and it is symmetric, so the exact solution
/// keeps the coordinate sum of `b`. The converged iterate is shifted by a
/// constant to restore that sum, which never increases the residual.
pub fn sor_solve(
    system: &StepSystem,
    coordinate: usize,
    omega: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "SOR omega must lie in (0, 2), got {omega}"
        )));
    }
    let n = system.n;
    let b = system.rhs(coordinate);
    let b_norm = norm(&b);
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut x = b.clone();
    let mut rel = norm(&system.residual(&x, &b)) / scale;
    let mut sweeps = 0;
    while rel > tol {
        if sweeps == max_iters {
            return Err(Error::SolverNotConverged {
                iterations: sweeps,
                residual: rel,
            });
        }
        for v in 0..n {
            let row = &system.coeffs[v * n..(v + 1) * n];
            let off: f64 = row.iter().zip(&x).map(|(c, xu)| c * xu).sum();
            let gs = (b[v] + off) / system.diag[v];
            x[v] += omega * (gs - x[v]);
        }
        sweeps += 1;
        rel = norm(&system.residual(&x, &b)) / scale;
        if !rel.is_finite() {
            return Err(Error::SolverNotConverged {
                iterations: sweeps,
                residual: rel,
            });
        }
    }
    let shift = (b.iter().sum::<f64>() - x.iter().sum::<f64>()) / n as f64;
    if shift != 0.0 {
        let shifted: Vec<f64> = x.iter().map(|xv| xv + shift).collect();
        if norm(&system.residual(&shifted, &b)) / scale <= rel {
            x = shifted;
        }
    }
    if system.coeffs.iter().all(|c| *c >= 0.0) {
        // the exact solution is then a convex combination of `b`, so clamping
        // to its range only removes over-relaxation overshoot
        let (lo, hi) = b
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        for xv in &mut x {
            *xv = xv.clamp(lo, hi);
        }
    }
    Ok(x)
}

/// Advances the network by one time step.
pub fn step(state: &NetworkState, params: &DiffusionParams) -> Result<NetworkState> {
    let system = assemble_system(state, params)?;
    let n = state.n_vertices();
    let dim = state.dim();
    let mut positions = vec![0.0; n * dim];
    for i in 0..dim {
        let x = sor_solve(&system, i, params.sor.omega, params.sor.tol, params.sor.max_iters)?;
        for (v, xv) in x.into_iter().enumerate() {
            positions[v * dim + i] = xv;
        }
    }
    let next = state.advance(positions);
    check_finite(&next)?;
    let (lo, hi) = params.divergence_bounds;
    for v in 0..n {
        if state.label(v).is_none() {
            continue;
        }
        if let Some(x) = next.position(v).iter().find(|x| **x < lo || **x > hi) {
            return Err(Error::Divergence {
                step: next.step(),
                detail: format!("vertex {v} reached coordinate {x}, outside [{lo}, {hi}]"),
            });
        }
    }
    Ok(next)
}
