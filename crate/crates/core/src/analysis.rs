//! Brute-force enumeration and classification of local minimizers.
//!
//! Every support `I` (a superset of the zero-penalty coordinates) gets one
//! catalog entry: the minimizer of `f` restricted to `{x : x_j = 0, j not in I}`.
//! Entries are then tested against the basic stationarity condition and the
//! fixed-point conditions of each requested approximation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::approx::{self, ApproxKind, ApproxSpec, Usage};
use crate::error::{Error, Result};
use crate::objectives::{LeastSquares, SmoothOracle};
use crate::problem::{BlockPartition, L0Problem};

/// Largest dimension accepted by [`enumerate_catalog`].
pub const ENUMERATION_LIMIT: usize = 24;

/// Absolute tolerance on all classification comparisons.
pub const CLASSIFY_TOL: f64 = 1e-8;

const NEWTON_MAX_ITERS: usize = 100;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn restricted_grad(oracle: &dyn SmoothOracle, z: &[f64], support: &[usize]) -> Vec<f64> {
    let g = oracle.full_grad(z);
    support.iter().map(|&j| g[j]).collect()
}

/// Minimizer of `f` over vectors supported on `support` (sorted, 0-based).
///
/// Uses the oracle's closed form when it has one (least-norm solution for
/// least squares), otherwise damped Newton from the origin until
/// `||grad_I f|| <= 1e-10 (1 + ||grad f(0)||)`.
pub fn restricted_minimize(problem: &L0Problem, support: &[usize]) -> Result<Vec<f64>> {
    let oracle = problem.smooth();
    let n = problem.dim();
    if let Some(&j) = support.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidArgument(format!("support index {j} out of range for n = {n}")));
    }
    if support.is_empty() {
        return Ok(vec![0.0; n]);
    }
    if let Some(z) = oracle.restricted_minimizer(support) {
        return Ok(z);
    }
    let tol = 1e-10 * (1.0 + norm(&oracle.full_grad(&vec![0.0; n])));
    let mut z = vec![0.0; n];
    let mut fz = oracle.value_cached(&z, &oracle.init_cache(&z));
    for _ in 0..NEWTON_MAX_ITERS {
        let g = restricted_grad(oracle, &z, support);
        if norm(&g) <= tol {
            return Ok(z);
        }
        let h = oracle.restricted_hessian(&z, support);
        let rhs = DVector::from_vec(g.clone());
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => h
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        };
        let slope: f64 = -g.iter().zip(dir.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = z.clone();
            for (k, &j) in support.iter().enumerate() {
                trial[j] = z[j] - t * dir[k];
            }
            let ft = oracle.value_cached(&trial, &oracle.init_cache(&trial));
            // near the solution f changes below rounding; fall back to the
            // gradient norm for the full step
            let shrinks = t == 1.0 && norm(&restricted_grad(oracle, &trial, support)) < 0.5 * norm(&g);
            if ft <= fz + 1e-4 * t * slope || shrinks {
                z = trial;
                fz = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = restricted_grad(oracle, &z, support);
    if norm(&g) <= tol {
        return Ok(z);
    }
    Err(Error::RestrictedSolveFailed {
        iterations: NEWTON_MAX_ITERS,
        grad_norm: norm(&g),
    })
}

/// `||grad_{I(z)} f(z)|| <= tol`.
pub fn is_basic_local_min(problem: &L0Problem, z: &[f64], tol: f64) -> Result<bool> {
    check_dim(problem, z)?;
    let support = problem.support_of(z);
    Ok(norm(&restricted_grad(problem.smooth(), z, &support)) <= tol)
}

fn check_dim(problem: &L0Problem, z: &[f64]) -> Result<()> {
    if z.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Strong-minimizer test for a separable or diagonal quadratic model with
/// per-coordinate curvature `m`.
pub fn is_uq_strong_coords(problem: &L0Problem, z: &[f64], m: &[f64], tol: f64) -> Result<bool> {
    check_dim(problem, z)?;
    if m.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: m.len(),
        });
    }
    if !is_basic_local_min(problem, z, tol)? {
        return Ok(false);
    }
    let p = problem.partition();
    let g = problem.smooth().full_grad(z);
    for j in 0..z.len() {
        let lambda = p.coordinate_lambda(j);
        if lambda == 0.0 {
            continue;
        }
        let ok = if z[j] == 0.0 {
            g[j].abs() <= (2.0 * lambda * m[j]).sqrt() + tol
        } else {
            z[j].abs() >= (2.0 * lambda / m[j]).sqrt() - tol
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Strong-minimizer test for the separable quadratic model with per-block `m`.
pub fn is_uq_strong(problem: &L0Problem, z: &[f64], m: &[f64], tol: f64) -> Result<bool> {
    let p = problem.partition();
    if m.len() != p.num_blocks() {
        return Err(Error::DimensionMismatch {
            expected: p.num_blocks(),
            got: m.len(),
        });
    }
    let per_coord: Vec<f64> = (0..p.dim()).map(|j| m[p.block_of(j)]).collect();
    is_uq_strong_coords(problem, z, &per_coord, tol)
}

/// Fixed-point test of the exact-model threshold map, one coordinate at a time.
pub fn is_ue_strong(problem: &L0Problem, z: &[f64], beta: &[f64], tol: f64) -> Result<bool> {
    check_dim(problem, z)?;
    let p = problem.partition();
    if !p.is_scalar() {
        return Err(Error::Unsupported("exact approximation requires scalar blocks (n_i = 1)".into()));
    }
    if beta.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: beta.len(),
        });
    }
    let oracle = problem.smooth();
    let cache = oracle.init_cache(z);
    for j in 0..z.len() {
        let t = approx::threshold_e(oracle, z, j, beta[j], p.lambda(j), &cache)?;
        if (t - z[j]).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A named approximation to classify against.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub label: String,
    pub approx: ApproxSpec,
}

impl ClassSpec {
    pub fn new(label: impl Into<String>, approx: ApproxSpec) -> Self {
        Self {
            label: label.into(),
            approx,
        }
    }

    /// Per-coordinate curvature (quadratic kinds) or `beta` (exact kind).
    fn coordinate_params(&self, p: &BlockPartition) -> Vec<f64> {
        match &self.approx {
            ApproxSpec::SeparableQuadratic { m } => (0..p.dim()).map(|j| m[p.block_of(j)]).collect(),
            ApproxSpec::DiagonalQuadratic { h } => h.clone(),
            ApproxSpec::Exact { beta } => (0..p.dim()).map(|j| beta[p.block_of(j)]).collect(),
        }
    }

    fn is_member(&self, problem: &L0Problem, z: &[f64], tol: f64) -> Result<bool> {
        let params = self.coordinate_params(problem.partition());
        match self.approx.kind() {
            ApproxKind::Exact => is_ue_strong(problem, z, &params, tol),
            _ => is_uq_strong_coords(problem, z, &params, tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    /// Enumerated support (sorted coordinate indices).
    pub support: Vec<usize>,
    pub point: Vec<f64>,
    pub objective: f64,
    pub basic: bool,
    /// One flag per class, in catalog order.
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaCatalog {
    pub classes: Vec<ClassSpec>,
    pub entries: Vec<CatalogEntry>,
    /// Index of an entry with the smallest objective.
    pub global_min: usize,
}

impl MinimaCatalog {
    pub fn basic_count(&self) -> usize {
        self.entries.iter().filter(|e| e.basic).count()
    }

    pub fn class_count(&self, c: usize) -> usize {
        self.entries.iter().filter(|e| e.flags[c]).count()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        (0..self.classes.len()).map(|c| self.class_count(c)).collect()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.entries.len()).filter(|&k| self.entries[k].flags[c]).collect()
    }

    pub fn global(&self) -> &CatalogEntry {
        &self.entries[self.global_min]
    }

    /// Entry closest to `x` in Euclidean distance among those flagged for class `c`.
    pub fn nearest_member(&self, c: usize, x: &[f64]) -> Option<(usize, f64)> {
        self.members(c)
            .into_iter()
            .map(|k| {
                let d = self.entries[k]
                    .point
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (k, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Enumerates every admissible support and classifies its restricted minimizer.
pub fn enumerate_catalog(problem: &L0Problem, classes: &[ClassSpec]) -> Result<MinimaCatalog> {
    let n = problem.dim();
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let p = problem.partition();
    for class in classes {
        class.approx.validate(p, Usage::Classification)?;
    }
    let mandatory: u32 = (0..n).filter(|&j| p.coordinate_lambda(j) == 0.0).fold(0, |acc, j| acc | (1 << j));
    let masks: Vec<u32> = (0u32..(1u32 << n)).filter(|m| m & mandatory == mandatory).collect();
    let entries = masks
        .par_iter()
        .map(|&mask| {
            let support: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
            let point = restricted_minimize(problem, &support)?;
            let objective = problem.objective(&point)?;
            let basic = is_basic_local_min(problem, &point, CLASSIFY_TOL)?;
            let flags = classes
                .iter()
                .map(|c| c.is_member(problem, &point, CLASSIFY_TOL))
                .collect::<Result<Vec<_>>>()?;
            Ok(CatalogEntry {
                support,
                point,
                objective,
                basic,
                flags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let global_min = entries
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(k, _)| k)
        .unwrap_or(0);
    Ok(MinimaCatalog {
        classes: classes.to_vec(),
        entries,
        global_min,
    })
}

/// Pointwise comparison of two approximations, `a <= b` as functions.
///
/// Only orderings that can be read off the parameters are reported; `false`
/// means "not known to be ordered".
pub fn approx_leq(problem: &L0Problem, a: &ClassSpec, b: &ClassSpec) -> bool {
    let p = problem.partition();
    let pa = a.coordinate_params(p);
    let pb = b.coordinate_params(p);
    let lip = |j: usize| p.lipschitz(p.block_of(j));
    let all = |pred: &dyn Fn(usize) -> bool| (0..p.dim()).all(pred);
    match (a.approx.kind(), b.approx.kind()) {
        (ApproxKind::Exact, ApproxKind::Exact) => all(&|j| pa[j] <= pb[j]),
        (ApproxKind::Exact, _) => all(&|j| pa[j] <= pb[j] - lip(j)),
        (_, ApproxKind::Exact) => all(&|j| {
            problem
                .smooth()
                .coordinate_curvature(j)
                .is_some_and(|c| pa[j] <= c + pb[j])
        }),
        _ => all(&|j| pa[j] <= pb[j]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InclusionViolation {
    /// An entry flagged for `smaller` is missing from `larger`.
    Class {
        smaller: String,
        larger: String,
        entry: usize,
    },
    /// A flagged entry fails the basic condition.
    NotBasic { class: String, entry: usize },
    /// The global minimizer is missing from a class.
    GlobalMissing { class: String },
}

/// Checks every inclusion implied by the pointwise ordering of the classes,
/// plus `class ⊆ basic` and `global ∈ class`.
pub fn verify_inclusions(problem: &L0Problem, catalog: &MinimaCatalog) -> Vec<InclusionViolation> {
    let mut out = Vec::new();
    let classes = &catalog.classes;
    for (a, ca) in classes.iter().enumerate() {
        for (k, e) in catalog.entries.iter().enumerate() {
            if e.flags[a] && !e.basic {
                out.push(InclusionViolation::NotBasic {
                    class: ca.label.clone(),
                    entry: k,
                });
            }
        }
        if !catalog.global().flags[a] {
            out.push(InclusionViolation::GlobalMissing { class: ca.label.clone() });
        }
        for (b, cb) in classes.iter().enumerate() {
            if a == b || !approx_leq(problem, ca, cb) {
                continue;
            }
            for (k, e) in catalog.entries.iter().enumerate() {
                if e.flags[a] && !e.flags[b] {
                    out.push(InclusionViolation::Class {
                        smaller: ca.label.clone(),
                        larger: cb.label.clone(),
                        entry: k,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentConvention {
    /// Row `r` is `(1, a_r, ..., a_r^{n-1})`.
    Powers0,
    /// Row `r` is `(a_r, a_r^2, ..., a_r^n)`.
    Powers1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// `f = 1/2 ||Ax - b||^2`.
    Half,
    /// `f = ||Ax - b||^2`, realized by scaling `A` and `b` by `sqrt 2`.
    Full,
}

pub const EXAMPLE2_NODES: [f64; 4] = [1.0, 1.1, 1.2, 1.3];
pub const EXAMPLE2_DIM: usize = 7;
pub const EXAMPLE2_SHIFT: f64 = 3.3;
pub const EXAMPLE2_RHS: f64 = 25.0;
pub const EXAMPLE2_BETA: f64 = 1e-4;

/// The 4 x 7 Vandermonde-plus-shift least-squares instance with unit penalties.
pub fn build_example2_instance(convention: ExponentConvention, scaling: Scaling) -> Result<L0Problem> {
    let offset = match convention {
        ExponentConvention::Powers0 => 0,
        ExponentConvention::Powers1 => 1,
    };
    let s = match scaling {
        Scaling::Half => 1.0,
        Scaling::Full => 2f64.sqrt(),
    };
    let m = EXAMPLE2_NODES.len();
    let a = DMatrix::from_fn(m, EXAMPLE2_DIM, |r, c| {
        let shift = if r == c { EXAMPLE2_SHIFT } else { 0.0 };
        s * (EXAMPLE2_NODES[r].powi((c + offset) as i32) + shift)
    });
    let b = DVector::from_element(m, s * EXAMPLE2_RHS);
    let ls = LeastSquares::new(a, b)?;
    L0Problem::scalar_uniform(Arc::new(ls), 1.0)
}

/// The three classes of the reference table: separable at `L_f`, separable at
/// `L_i`, exact with `beta = 1e-4`.
pub fn example2_classes(problem: &L0Problem) -> Vec<ClassSpec> {
    let p = problem.partition();
    vec![
        ClassSpec::new("uq(L_f)", ApproxSpec::separable_uniform(p, p.global_lipschitz())),
        ClassSpec::new("uq(L_i)", ApproxSpec::separable_scaled(p, 1.0)),
        ClassSpec::new("ue(1e-4)", ApproxSpec::exact(p, EXAMPLE2_BETA)),
    ]
}
