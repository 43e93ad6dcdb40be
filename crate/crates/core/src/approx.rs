//! Approximation families `u_i` and their thresholding maps
//! `T_i(x) = argmin_y u_i(y; x) + lambda_i ||y||_0`.
//!
//! Every map compares a "keep" candidate against zero through a gap `Delta`
//! and keeps the candidate only when `Delta > lambda_i`. An exact tie goes to
//! zero. With `lambda_i = 0` the candidate is always kept.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::objectives::{self, SmoothOracle};
use crate::problem::{BlockPartition, L0Problem};

/// Factor applied to `L_i` when a caller asks for "M = L_i" in solver mode.
pub const LIPSCHITZ_MODE_FACTOR: f64 = 1.0 + 1e-6;

const INNER_MAX_ITERS: usize = 200;
const INNER_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApproxKind {
    SeparableQuadratic,
    DiagonalQuadratic,
    Exact,
}

impl ApproxKind {
    pub fn label(self) -> &'static str {
        match self {
            ApproxKind::SeparableQuadratic => "uq",
            ApproxKind::DiagonalQuadratic => "uQ-diag",
            ApproxKind::Exact => "ue",
        }
    }
}

/// Whether an approximation drives a solver (strict `M_i > L_i`) or only
/// labels candidate points (`M_i >= L_i` allowed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Usage {
    Solver,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApproxSpec {
    /// `u_i = f(x) + <g_i, y - x_i> + M_i/2 ||y - x_i||^2`, one `M_i` per block.
    SeparableQuadratic { m: Vec<f64> },
    /// `u_i = f(x) + <g_i, y - x_i> + 1/2 (y - x_i)^T H_i (y - x_i)` with
    /// diagonal `H_i`, stored per coordinate.
    DiagonalQuadratic { h: Vec<f64> },
    /// `u_i = f(x + U_i(y - x_i)) + beta_i/2 ||y - x_i||^2`, scalar blocks only.
    Exact { beta: Vec<f64> },
}

impl ApproxSpec {
    /// `M_i = factor * L_i`.
    pub fn separable_scaled(partition: &BlockPartition, factor: f64) -> Self {
        ApproxSpec::SeparableQuadratic {
            m: partition.lipschitz_constants().iter().map(|l| l * factor).collect(),
        }
    }

    /// `M_i = (1 + 1e-6) L_i`, the solver-mode reading of "M = L_i".
    pub fn separable_at_lipschitz(partition: &BlockPartition) -> Self {
        Self::separable_scaled(partition, LIPSCHITZ_MODE_FACTOR)
    }

    /// The same `M` for every block.
    pub fn separable_uniform(partition: &BlockPartition, m: f64) -> Self {
        ApproxSpec::SeparableQuadratic {
            m: vec![m; partition.num_blocks()],
        }
    }

    pub fn diagonal(h: Vec<f64>) -> Self {
        ApproxSpec::DiagonalQuadratic { h }
    }

    /// General quadratic model from per-block matrices; only diagonal `H_i`
    /// are supported.
    pub fn general_quadratic(partition: &BlockPartition, blocks: &[DMatrix<f64>]) -> Result<Self> {
        if blocks.len() != partition.num_blocks() {
            return Err(Error::DimensionMismatch {
                expected: partition.num_blocks(),
                got: blocks.len(),
            });
        }
        let mut h = Vec::with_capacity(partition.dim());
        for (i, hm) in blocks.iter().enumerate() {
            let size = partition.block_size(i);
            if hm.nrows() != size || hm.ncols() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    got: hm.nrows(),
                });
            }
            for r in 0..size {
                for c in 0..size {
                    if r != c && hm[(r, c)] != 0.0 {
                        return Err(Error::Unsupported(format!(
                            "non-diagonal H for block {i}: the block subproblem is a small l0 quadratic program"
                        )));
                    }
                }
                h.push(hm[(r, r)]);
            }
        }
        Ok(ApproxSpec::DiagonalQuadratic { h })
    }

    pub fn exact(partition: &BlockPartition, beta: f64) -> Self {
        ApproxSpec::Exact {
            beta: vec![beta; partition.num_blocks()],
        }
    }

    pub fn kind(&self) -> ApproxKind {
        match self {
            ApproxSpec::SeparableQuadratic { .. } => ApproxKind::SeparableQuadratic,
            ApproxSpec::DiagonalQuadratic { .. } => ApproxKind::DiagonalQuadratic,
            ApproxSpec::Exact { .. } => ApproxKind::Exact,
        }
    }

    pub fn validate(&self, partition: &BlockPartition, usage: Usage) -> Result<()> {
        let strict = usage == Usage::Solver;
        match self {
            ApproxSpec::SeparableQuadratic { m } => {
                if m.len() != partition.num_blocks() {
                    return Err(Error::DimensionMismatch {
                        expected: partition.num_blocks(),
                        got: m.len(),
                    });
                }
                for (i, &mi) in m.iter().enumerate() {
                    let li = partition.lipschitz(i);
                    let ok = if strict { mi > li } else { mi >= li };
                    if !ok || !mi.is_finite() {
                        return Err(Error::InvalidApprox(format!(
                            "M_{i} = {mi} must be {} L_{i} = {li}",
                            if strict { ">" } else { ">=" }
                        )));
                    }
                }
            }
            ApproxSpec::DiagonalQuadratic { h } => {
                if h.len() != partition.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: partition.dim(),
                        got: h.len(),
                    });
                }
                for i in 0..partition.num_blocks() {
                    let li = partition.lipschitz(i);
                    for j in partition.range(i) {
                        let ok = if strict { h[j] > li } else { h[j] >= li };
                        if !ok || !h[j].is_finite() {
                            return Err(Error::InvalidApprox(format!(
                                "H diagonal entry {j} = {} must be {} L_{i} = {li}",
                                h[j],
                                if strict { ">" } else { ">=" }
                            )));
                        }
                    }
                }
            }
            ApproxSpec::Exact { beta } => {
                if beta.len() != partition.num_blocks() {
                    return Err(Error::DimensionMismatch {
                        expected: partition.num_blocks(),
                        got: beta.len(),
                    });
                }
                if !partition.is_scalar() {
                    return Err(Error::Unsupported(
                        "exact approximation requires scalar blocks (n_i = 1)".into(),
                    ));
                }
                if let Some(i) = beta.iter().position(|&b| !(b > 0.0 && b.is_finite())) {
                    return Err(Error::InvalidApprox(format!("beta_{i} = {} must be > 0", beta[i])));
                }
            }
        }
        Ok(())
    }

    /// Strong-convexity surplus `mu_i` of the model over `f`.
    pub fn mu(&self, partition: &BlockPartition, i: usize) -> f64 {
        match self {
            ApproxSpec::SeparableQuadratic { m } => m[i] - partition.lipschitz(i),
            ApproxSpec::DiagonalQuadratic { h } => {
                let min = partition.range(i).map(|j| h[j]).fold(f64::INFINITY, f64::min);
                min - partition.lipschitz(i)
            }
            ApproxSpec::Exact { beta } => beta[i],
        }
    }

    /// Curvature bound `M_i` of the model; for the exact model `L_i + beta_i`.
    pub fn curvature(&self, partition: &BlockPartition, i: usize) -> f64 {
        match self {
            ApproxSpec::SeparableQuadratic { m } => m[i],
            ApproxSpec::DiagonalQuadratic { h } => partition.range(i).map(|j| h[j]).fold(0.0, f64::max),
            ApproxSpec::Exact { beta } => partition.lipschitz(i) + beta[i],
        }
    }

    /// Curvature seen by coordinate `j`; nonzero outputs of the map satisfy
    /// `|t_j|^2 >= 2 lambda_i / coordinate_curvature(j)`.
    pub fn coordinate_curvature(&self, partition: &BlockPartition, j: usize) -> f64 {
        match self {
            ApproxSpec::DiagonalQuadratic { h } => h[j],
            _ => self.curvature(partition, partition.block_of(j)),
        }
    }
}

/// `(Delta_i(x))_j = M/2 |x_j - g_j / M|^2`.
pub fn delta_q(x_block: &[f64], grad: &[f64], m: f64) -> Vec<f64> {
    x_block
        .iter()
        .zip(grad)
        .map(|(&xj, &gj)| {
            let t = xj - gj / m;
            0.5 * m * t * t
        })
        .collect()
}

fn keep_or_zero(candidate: f64, delta: f64, lambda: f64) -> f64 {
    if lambda == 0.0 || delta > lambda {
        candidate
    } else {
        0.0
    }
}

/// Hard-thresholded block gradient step for the separable quadratic model.
pub fn threshold_q(x_block: &[f64], grad: &[f64], m: f64, lambda: f64) -> Vec<f64> {
    x_block
        .iter()
        .zip(grad)
        .map(|(&xj, &gj)| {
            let t = xj - gj / m;
            keep_or_zero(t, 0.5 * m * t * t, lambda)
        })
        .collect()
}

/// `threshold_q` with a per-coordinate curvature.
pub fn threshold_diag_q(x_block: &[f64], grad: &[f64], h_diag: &[f64], lambda: f64) -> Vec<f64> {
    x_block
        .iter()
        .zip(grad)
        .zip(h_diag)
        .map(|((&xj, &gj), &hj)| {
            let t = xj - gj / hj;
            keep_or_zero(t, 0.5 * hj * t * t, lambda)
        })
        .collect()
}

/// Minimizer and minimum of `g(h) = f(x + h e_j) + beta/2 h^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMin {
    pub h: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Uses the oracle's closed form when it has one, otherwise the safeguarded
/// Newton search.
pub fn exact_inner_min(oracle: &dyn SmoothOracle, x: &[f64], j: usize, beta: f64, cache: &[f64]) -> Result<InnerMin> {
    match oracle.exact_coordinate_step(x, j, beta, cache) {
        Some(step) => Ok(InnerMin {
            h: step.h,
            value: step.value,
            iterations: 0,
        }),
        None => exact_inner_min_generic(oracle, x, j, beta, cache),
    }
}

/// Safeguarded Newton on `g'(h) = 0` with a bisection fallback. The bracket
/// grows geometrically from `[-1, 1]` until `g'` changes sign.
pub fn exact_inner_min_generic(
    oracle: &dyn SmoothOracle,
    x: &[f64],
    j: usize,
    beta: f64,
    cache: &[f64],
) -> Result<InnerMin> {
    let eval = |h: f64| {
        let p = oracle.coordinate_profile(x, j, cache, h);
        (p.value + 0.5 * beta * h * h, p.slope + beta * h, p.curvature + beta)
    };
    let (v0, d0, _) = eval(0.0);
    let tol = INNER_REL_TOL * (1.0 + d0.abs());
    if d0.abs() <= tol {
        return Ok(InnerMin {
            h: 0.0,
            value: v0,
            iterations: 0,
        });
    }

    // bracket [lo, hi] with g'(lo) < 0 < g'(hi)
    let (mut lo, mut hi) = if d0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut grow = 0;
    loop {
        let probe = if d0 < 0.0 { hi } else { lo };
        let (_, d, _) = eval(probe);
        if (d0 < 0.0 && d > 0.0) || (d0 > 0.0 && d < 0.0) {
            break;
        }
        if d.abs() <= tol {
            let (v, _, _) = eval(probe);
            return Ok(InnerMin {
                h: probe,
                value: v,
                iterations: grow,
            });
        }
        grow += 1;
        if grow > 1000 || !probe.is_finite() {
            return Err(Error::InnerMinFailed {
                coordinate: j,
                iterations: grow,
                h: probe,
                derivative: d,
                lower: lo,
                upper: hi,
            });
        }
        if d0 < 0.0 {
            lo = hi;
            hi *= 2.0;
        } else {
            hi = lo;
            lo *= 2.0;
        }
    }

    let mut h = 0.0f64.clamp(lo, hi);
    let (_, mut d, mut c) = eval(h);
    for it in 1..=INNER_MAX_ITERS {
        let newton = h - d / c;
        h = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let v;
        (v, d, c) = eval(h);
        if d.abs() <= tol {
            return Ok(InnerMin {
                h,
                value: v,
                iterations: it,
            });
        }
        if d < 0.0 {
            lo = h;
        } else {
            hi = h;
        }
    }
    Err(Error::InnerMinFailed {
        coordinate: j,
        iterations: INNER_MAX_ITERS,
        h,
        derivative: d,
        lower: lo,
        upper: hi,
    })
}

/// `Delta = f(x - x_j e_j) + beta/2 x_j^2 - f(v) - beta/2 (v_j - x_j)^2`.
pub fn delta_e(oracle: &dyn SmoothOracle, x: &[f64], j: usize, beta: f64, cache: &[f64]) -> Result<f64> {
    if let Some(step) = oracle.exact_coordinate_step(x, j, beta, cache) {
        return Ok(step.delta);
    }
    delta_e_generic(oracle, x, j, beta, cache)
}

/// `delta_e` from two function evaluations and the Newton inner solve.
pub fn delta_e_generic(oracle: &dyn SmoothOracle, x: &[f64], j: usize, beta: f64, cache: &[f64]) -> Result<f64> {
    let inner = exact_inner_min_generic(oracle, x, j, beta, cache)?;
    let zeroed = oracle.coordinate_profile(x, j, cache, -x[j]).value;
    Ok(zeroed + 0.5 * beta * x[j] * x[j] - inner.value)
}

/// Exact-model thresholding for scalar coordinate `j`.
pub fn threshold_e(
    oracle: &dyn SmoothOracle,
    x: &[f64],
    j: usize,
    beta: f64,
    lambda: f64,
    cache: &[f64],
) -> Result<f64> {
    let (h, delta) = match oracle.exact_coordinate_step(x, j, beta, cache) {
        Some(step) => (step.h, step.delta),
        None => {
            let inner = exact_inner_min_generic(oracle, x, j, beta, cache)?;
            let zeroed = oracle.coordinate_profile(x, j, cache, -x[j]).value;
            (inner.h, zeroed + 0.5 * beta * x[j] * x[j] - inner.value)
        }
    };
    Ok(keep_or_zero(x[j] + h, delta, lambda))
}

/// `T_i(x)`: the new value of block `i` under `spec`.
pub fn threshold_block(
    problem: &L0Problem,
    spec: &ApproxSpec,
    x: &[f64],
    cache: &[f64],
    i: usize,
) -> Result<Vec<f64>> {
    let partition = problem.partition();
    let range = partition.range(i);
    let lambda = partition.lambda(i);
    match spec {
        ApproxSpec::SeparableQuadratic { m } => {
            let g = objectives::block_grad(problem.smooth(), x, range.clone(), cache)?;
            Ok(threshold_q(&x[range], &g, m[i], lambda))
        }
        ApproxSpec::DiagonalQuadratic { h } => {
            let g = objectives::block_grad(problem.smooth(), x, range.clone(), cache)?;
            Ok(threshold_diag_q(&x[range.clone()], &g, &h[range], lambda))
        }
        ApproxSpec::Exact { beta } => {
            if range.len() != 1 {
                return Err(Error::Unsupported(
                    "exact approximation requires scalar blocks (n_i = 1)".into(),
                ));
            }
            Ok(vec![threshold_e(problem.smooth(), x, range.start, beta[i], lambda, cache)?])
        }
    }
}

/// `u_i(y; x)` for block `i`.
pub fn surrogate_value(
    problem: &L0Problem,
    spec: &ApproxSpec,
    x: &[f64],
    cache: &[f64],
    i: usize,
    y: &[f64],
) -> Result<f64> {
    let oracle = problem.smooth();
    let range = problem.partition().range(i);
    let fx = oracle.value_cached(x, cache);
    match spec {
        ApproxSpec::SeparableQuadratic { m } => {
            let g = objectives::block_grad(oracle, x, range.clone(), cache)?;
            let mut v = fx;
            for (k, j) in range.enumerate() {
                let d = y[k] - x[j];
                v += g[k] * d + 0.5 * m[i] * d * d;
            }
            Ok(v)
        }
        ApproxSpec::DiagonalQuadratic { h } => {
            let g = objectives::block_grad(oracle, x, range.clone(), cache)?;
            let mut v = fx;
            for (k, j) in range.enumerate() {
                let d = y[k] - x[j];
                v += g[k] * d + 0.5 * h[j] * d * d;
            }
            Ok(v)
        }
        ApproxSpec::Exact { beta } => {
            let j = range.start;
            let d = y[0] - x[j];
            Ok(oracle.coordinate_profile(x, j, cache, d).value + 0.5 * beta[i] * d * d)
        }
    }
}
