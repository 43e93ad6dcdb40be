//! Smooth convex objectives with blockwise gradients and O(m * n_i)
//! incremental cache updates.
//!
//! Both shipped objectives keep a length-`m` cache: the residual `Ax - b` for
//! least squares and the linear predictors `<a_k, x>` for logistic loss.

use std::fmt::Debug;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Value, first and second derivative of `h -> f(x + h e_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordProfile {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// Closed-form exact proximal coordinate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStep {
    /// Minimizer of `g(h) = f(x + h e_j) + beta/2 h^2`.
    pub h: f64,
    /// `g(h)`.
    pub value: f64,
    /// `f(x - x_j e_j) + beta/2 x_j^2 - g(h)`.
    pub delta: f64,
}

/// A smooth convex function with coordinatewise Lipschitz gradient.
///
/// The cache is owned by the caller and must describe the point passed
/// alongside it.
pub trait SmoothOracle: Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn init_cache(&self, x: &[f64]) -> Vec<f64>;

    fn value_cached(&self, x: &[f64], cache: &[f64]) -> f64;

    /// `grad_S f(x)` for the coordinates in `block`.
    fn block_grad_cached(&self, x: &[f64], block: Range<usize>, cache: &[f64]) -> Vec<f64>;

    fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let cache = self.init_cache(x);
        self.block_grad_cached(x, 0..self.dim(), &cache)
    }

    /// Moves the cache from a point with `old` in `block` to one with `new`.
    fn update_cache(&self, cache: &mut [f64], block: Range<usize>, old: &[f64], new: &[f64]);

    fn block_lipschitz(&self, block: Range<usize>) -> f64;

    fn global_lipschitz(&self) -> f64;

    fn strong_convexity(&self) -> Option<f64>;

    /// Profile of `f` along coordinate `j`, displaced by `h`, using the cache of `x`.
    fn coordinate_profile(&self, x: &[f64], j: usize, cache: &[f64], h: f64) -> CoordProfile;

    /// Constant second derivative along `j`, when `f` is quadratic in that direction.
    fn coordinate_curvature(&self, _j: usize) -> Option<f64> {
        None
    }

    /// Closed-form exact step along `j`, when the objective has one.
    fn exact_coordinate_step(&self, _x: &[f64], _j: usize, _beta: f64, _cache: &[f64]) -> Option<ExactStep> {
        None
    }

    /// Direct minimizer of `f` over `{x : x_j = 0 for j not in support}`, when
    /// the objective has one. `support` is sorted.
    fn restricted_minimizer(&self, _support: &[usize]) -> Option<Vec<f64>> {
        None
    }

    /// Hessian of `f` at `x` restricted to `support x support`.
    fn restricted_hessian(&self, x: &[f64], support: &[usize]) -> DMatrix<f64>;
}

fn check_dim(oracle: &dyn SmoothOracle, x: &[f64]) -> Result<()> {
    if x.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `f(x)` from a fresh cache.
pub fn eval(oracle: &dyn SmoothOracle, x: &[f64]) -> Result<f64> {
    check_dim(oracle, x)?;
    let cache = oracle.init_cache(x);
    let v = oracle.value_cached(x, &cache);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(v))
    }
}

/// Block gradient. Debug builds recompute the cache and reject a stale one.
pub fn block_grad(oracle: &dyn SmoothOracle, x: &[f64], block: Range<usize>, cache: &[f64]) -> Result<Vec<f64>> {
    check_dim(oracle, x)?;
    #[cfg(debug_assertions)]
    {
        let fresh = oracle.init_cache(x);
        if fresh.len() != cache.len() {
            return Err(Error::StaleCache {
                block: block.start,
                deviation: f64::INFINITY,
            });
        }
        let scale = 1.0 + fresh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let deviation = fresh.iter().zip(cache).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !(deviation <= 1e-8 * scale) {
            return Err(Error::StaleCache {
                block: block.start,
                deviation,
            });
        }
    }
    Ok(oracle.block_grad_cached(x, block, cache))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of `X_S^T X_S` for the column block `S` of `x`.
fn block_gram_max_eig(x: &DMatrix<f64>, block: Range<usize>) -> f64 {
    if block.len() == 1 {
        let c = x.column(block.start);
        return c.dot(&c);
    }
    let sub = x.columns(block.start, block.len()).into_owned();
    gram_extreme_eigs(&sub).1
}

/// (smallest, largest) eigenvalue of `X^T X`.
fn gram_extreme_eigs(x: &DMatrix<f64>) -> (f64, f64) {
    if x.ncols() == 0 {
        return (0.0, 0.0);
    }
    let gram = x.transpose() * x;
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// `f(x) = 1/2 ||Ax - b||^2`; the cache is the residual `r = Ax - b`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: DVector<f64>,
    col_sq_norms: Vec<f64>,
    lipschitz_f: f64,
    sigma: Option<f64>,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::InvalidArgument("empty least-squares matrix".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in least-squares data".into()));
        }
        let col_sq_norms: Vec<f64> = a.column_iter().map(|c| c.dot(&c)).collect();
        if let Some(j) = col_sq_norms.iter().position(|&c| c == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "column {j} of A is zero (blockwise Lipschitz constant would vanish)"
            )));
        }
        let (min, max) = gram_extreme_eigs(&a);
        let sigma = (min > 1e-12 * max).then_some(min);
        Ok(Self {
            a,
            b,
            col_sq_norms,
            lipschitz_f: max,
            sigma,
        })
    }

    /// From row-major data.
    pub fn from_rows(rows: &[Vec<f64>], b: Vec<f64>) -> Result<Self> {
        let a = matrix_from_rows(rows)?;
        Self::new(a, DVector::from_vec(b))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    fn col(&self, j: usize) -> &[f64] {
        let m = self.a.nrows();
        &self.a.as_slice()[j * m..(j + 1) * m]
    }
}

/// Dense matrix from row-major nested vectors; all rows must have equal length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

impl SmoothOracle for LeastSquares {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn init_cache(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.b.iter().map(|v| -v).collect();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (ri, aij) in r.iter_mut().zip(self.col(j)) {
                    *ri += aij * xj;
                }
            }
        }
        r
    }

    fn value_cached(&self, _x: &[f64], cache: &[f64]) -> f64 {
        0.5 * dot(cache, cache)
    }

    fn block_grad_cached(&self, _x: &[f64], block: Range<usize>, cache: &[f64]) -> Vec<f64> {
        block.map(|j| dot(self.col(j), cache)).collect()
    }

    fn update_cache(&self, cache: &mut [f64], block: Range<usize>, old: &[f64], new: &[f64]) {
        for (off, j) in block.enumerate() {
            let d = new[off] - old[off];
            if d != 0.0 {
                for (ri, aij) in cache.iter_mut().zip(self.col(j)) {
                    *ri += aij * d;
                }
            }
        }
    }

    fn block_lipschitz(&self, block: Range<usize>) -> f64 {
        if block.len() == 1 {
            self.col_sq_norms[block.start]
        } else {
            block_gram_max_eig(&self.a, block)
        }
    }

    fn global_lipschitz(&self) -> f64 {
        self.lipschitz_f
    }

    fn strong_convexity(&self) -> Option<f64> {
        self.sigma
    }

    fn coordinate_profile(&self, _x: &[f64], j: usize, cache: &[f64], h: f64) -> CoordProfile {
        let c = self.col_sq_norms[j];
        let g = dot(self.col(j), cache);
        CoordProfile {
            value: 0.5 * dot(cache, cache) + h * g + 0.5 * c * h * h,
            slope: g + c * h,
            curvature: c,
        }
    }

    fn coordinate_curvature(&self, j: usize) -> Option<f64> {
        Some(self.col_sq_norms[j])
    }

    /// Explicit least-squares formula:
    /// `Delta = 1/2||r - A_j x_j||^2 + beta/2 x_j^2 - 1/2||r - A_j A_j^T r/(||A_j||^2+beta)||^2
    ///          - beta/2 (A_j^T r/(||A_j||^2+beta))^2`.
    fn exact_coordinate_step(&self, x: &[f64], j: usize, beta: f64, cache: &[f64]) -> Option<ExactStep> {
        let col = self.col(j);
        let xj = x[j];
        let t = dot(col, cache) / (self.col_sq_norms[j] + beta);
        let mut zeroed = 0.0;
        let mut moved = 0.0;
        for (ri, aij) in cache.iter().zip(col) {
            let z = ri - aij * xj;
            let v = ri - aij * t;
            zeroed += z * z;
            moved += v * v;
        }
        let value = 0.5 * moved + 0.5 * beta * t * t;
        Some(ExactStep {
            h: -t,
            value,
            delta: 0.5 * zeroed + 0.5 * beta * xj * xj - value,
        })
    }

    /// Least-norm solution of the restricted normal equations (SVD pseudoinverse,
    /// singular values below `1e-10 * sigma_max` dropped).
    fn restricted_minimizer(&self, support: &[usize]) -> Option<Vec<f64>> {
        let mut z = vec![0.0; self.dim()];
        if support.is_empty() {
            return Some(z);
        }
        let sub = self.a.select_columns(support);
        let svd = sub.svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let sol = svd.solve(&self.b, 1e-10 * smax).ok()?;
        for (k, &j) in support.iter().enumerate() {
            z[j] = sol[k];
        }
        Some(z)
    }

    fn restricted_hessian(&self, _x: &[f64], support: &[usize]) -> DMatrix<f64> {
        let sub = self.a.select_columns(support);
        sub.transpose() * sub
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `f(x) = (1/m) sum_k [log(1 + e^{<a_k,x>}) - y_k <a_k,x>] + nu/2 ||x||^2`.
///
/// Samples are the rows of the `m x n` data matrix. The cache holds the `m`
/// linear predictors.
#[derive(Debug, Clone)]
pub struct LogisticL2 {
    data: DMatrix<f64>,
    labels: Vec<f64>,
    nu: f64,
    col_sq_norms: Vec<f64>,
    lipschitz_f: f64,
}

impl LogisticL2 {
    pub fn new(data: DMatrix<f64>, labels: Vec<f64>, nu: f64) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                got: labels.len(),
            });
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument("empty logistic data matrix".into()));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu = {nu} must be finite and > 0")));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in logistic data".into()));
        }
        let col_sq_norms = data.column_iter().map(|c| c.dot(&c)).collect();
        let (_, max) = gram_extreme_eigs(&data);
        let m = data.nrows() as f64;
        Ok(Self {
            lipschitz_f: max / (4.0 * m) + nu,
            data,
            labels,
            nu,
            col_sq_norms,
        })
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn col(&self, j: usize) -> &[f64] {
        let m = self.data.nrows();
        &self.data.as_slice()[j * m..(j + 1) * m]
    }

    fn residuals(&self, cache: &[f64]) -> Vec<f64> {
        cache.iter().zip(&self.labels).map(|(&t, &y)| sigmoid(t) - y).collect()
    }
}

impl SmoothOracle for LogisticL2 {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn init_cache(&self, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.data.nrows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (tk, akj) in t.iter_mut().zip(self.col(j)) {
                    *tk += akj * xj;
                }
            }
        }
        t
    }

    fn value_cached(&self, x: &[f64], cache: &[f64]) -> f64 {
        let m = self.samples() as f64;
        let loss: f64 = cache.iter().zip(&self.labels).map(|(&t, &y)| softplus(t) - y * t).sum();
        loss / m + 0.5 * self.nu * dot(x, x)
    }

    fn block_grad_cached(&self, x: &[f64], block: Range<usize>, cache: &[f64]) -> Vec<f64> {
        let m = self.samples() as f64;
        let res = self.residuals(cache);
        block.map(|j| dot(self.col(j), &res) / m + self.nu * x[j]).collect()
    }

    fn update_cache(&self, cache: &mut [f64], block: Range<usize>, old: &[f64], new: &[f64]) {
        for (off, j) in block.enumerate() {
            let d = new[off] - old[off];
            if d != 0.0 {
                for (tk, akj) in cache.iter_mut().zip(self.col(j)) {
                    *tk += akj * d;
                }
            }
        }
    }

    /// `(1/4m) ||A_S||_2^2 + nu`: the logistic curvature never exceeds 1/4.
    fn block_lipschitz(&self, block: Range<usize>) -> f64 {
        let m = self.samples() as f64;
        let g = if block.len() == 1 {
            self.col_sq_norms[block.start]
        } else {
            block_gram_max_eig(&self.data, block)
        };
        g / (4.0 * m) + self.nu
    }

    fn global_lipschitz(&self) -> f64 {
        self.lipschitz_f
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.nu)
    }

    fn coordinate_profile(&self, x: &[f64], j: usize, cache: &[f64], h: f64) -> CoordProfile {
        let m = self.samples() as f64;
        let (mut value, mut slope, mut curvature) = (0.0, 0.0, 0.0);
        for ((&t, &y), &a) in cache.iter().zip(&self.labels).zip(self.col(j)) {
            let s = t + h * a;
            let p = sigmoid(s);
            value += softplus(s) - y * s;
            slope += (p - y) * a;
            curvature += p * (1.0 - p) * a * a;
        }
        let xj = x[j] + h;
        let sq = dot(x, x) - x[j] * x[j] + xj * xj;
        CoordProfile {
            value: value / m + 0.5 * self.nu * sq,
            slope: slope / m + self.nu * xj,
            curvature: curvature / m + self.nu,
        }
    }

    fn restricted_hessian(&self, x: &[f64], support: &[usize]) -> DMatrix<f64> {
        let m = self.samples() as f64;
        let t = self.init_cache(x);
        let w: Vec<f64> = t
            .iter()
            .map(|&s| {
                let p = sigmoid(s);
                p * (1.0 - p)
            })
            .collect();
        let k = support.len();
        let mut h = DMatrix::zeros(k, k);
        for (p, &jp) in support.iter().enumerate() {
            let cp = self.col(jp);
            for (q, &jq) in support.iter().enumerate().skip(p) {
                let cq = self.col(jq);
                let v: f64 = cp.iter().zip(cq).zip(&w).map(|((a, b), wk)| a * b * wk).sum::<f64>() / m;
                h[(p, q)] = v;
                h[(q, p)] = v;
            }
            h[(p, p)] += self.nu;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SolverRng;

    fn random_matrix(rng: &mut SolverRng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.uniform(-1.0, 1.0))
    }

    fn random_ls(seed: u64, m: usize, n: usize) -> LeastSquares {
        let mut rng = SolverRng::seed_from(seed);
        let a = random_matrix(&mut rng, m, n);
        let b = DVector::from_fn(m, |_, _| rng.uniform(-1.0, 1.0));
        LeastSquares::new(a, b).unwrap()
    }

    fn random_logistic(seed: u64, m: usize, n: usize) -> LogisticL2 {
        let mut rng = SolverRng::seed_from(seed);
        let a = random_matrix(&mut rng, m, n);
        let y = (0..m).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        LogisticL2::new(a, y, 0.5).unwrap()
    }

    fn random_point(rng: &mut SolverRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    #[test]
    fn ls_eval_examples() {
        let ls = LeastSquares::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(eval(&ls, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(eval(&ls, &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn logistic_eval_at_origin_is_log_two() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        let lg = LogisticL2::new(a, vec![0.0; 3], 0.5).unwrap();
        assert!((eval(&lg, &[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ls_block_grad_examples() {
        let ls = LeastSquares::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let x = [0.0, 0.0];
        let c = ls.init_cache(&x);
        assert_eq!(block_grad(&ls, &x, 0..1, &c).unwrap(), vec![-1.0]);

        let ls = LeastSquares::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), DVector::zeros(2)).unwrap();
        let c = ls.init_cache(&[1.0]);
        assert_eq!(block_grad(&ls, &[1.0], 0..1, &c).unwrap(), vec![5.0]);
    }

    #[test]
    fn logistic_grad_at_origin_matches_hand_formula() {
        let lg = random_logistic(5, 9, 4);
        let x = [0.0; 4];
        let c = lg.init_cache(&x);
        let g = block_grad(&lg, &x, 0..4, &c).unwrap();
        for (j, gj) in g.iter().enumerate() {
            let hand: f64 = (0..9).map(|k| (0.5 - lg.labels[k]) * lg.data[(k, j)]).sum::<f64>() / 9.0;
            assert!((gj - hand).abs() < 1e-15);
        }
    }

    #[cfg(debug_assertions)]
    #[test]
    fn stale_cache_is_rejected() {
        let ls = random_ls(1, 5, 3);
        let cache = ls.init_cache(&[0.0; 3]);
        assert!(matches!(
            block_grad(&ls, &[1.0, 0.0, 0.0], 0..1, &cache),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let ls = LeastSquares::new(DMatrix::identity(1, 1), DVector::from_vec(vec![0.0])).unwrap();
        assert!(matches!(eval(&ls, &[f64::INFINITY]), Err(Error::NonFinite(_))));
    }

    fn central_difference(oracle: &dyn SmoothOracle, x: &[f64], j: usize) -> f64 {
        let h = 1e-6;
        let mut p = x.to_vec();
        let mut q = x.to_vec();
        p[j] += h;
        q[j] -= h;
        (eval(oracle, &p).unwrap() - eval(oracle, &q).unwrap()) / (2.0 * h)
    }

    fn fd_check(oracle: &dyn SmoothOracle, seed: u64) {
        let mut rng = SolverRng::seed_from(seed);
        let n = oracle.dim();
        for _ in 0..10 {
            let x = random_point(&mut rng, n);
            let c = oracle.init_cache(&x);
            let g = block_grad(oracle, &x, 0..n, &c).unwrap();
            let scale = 1.0 + norm(&g);
            for j in 0..n {
                let fd = central_difference(oracle, &x, j);
                assert!((g[j] - fd).abs() / scale <= 1e-5, "coord {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        fd_check(&random_ls(2, 8, 5), 11);
        fd_check(&random_logistic(3, 12, 6), 12);
    }

    #[test]
    fn block_grad_equals_rows_of_full_grad() {
        let lg = random_logistic(9, 10, 6);
        let mut rng = SolverRng::seed_from(1);
        let x = random_point(&mut rng, 6);
        let c = lg.init_cache(&x);
        let full = lg.full_grad(&x);
        let part = block_grad(&lg, &x, 2..5, &c).unwrap();
        for (k, j) in (2..5).enumerate() {
            assert!((full[j] - part[k]).abs() <= 1e-12);
        }
    }

    fn cache_coherence(oracle: &dyn SmoothOracle, seed: u64) {
        let mut rng = SolverRng::seed_from(seed);
        let n = oracle.dim();
        let mut x = random_point(&mut rng, n);
        let mut cache = oracle.init_cache(&x);
        for _ in 0..1000 {
            let j = rng.index(n);
            let new = if rng.bernoulli(0.3) { 0.0 } else { rng.uniform(-3.0, 3.0) };
            oracle.update_cache(&mut cache, j..j + 1, &[x[j]], &[new]);
            x[j] = new;
        }
        let fresh = oracle.init_cache(&x);
        let scale = 1.0 + fresh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fresh.iter().zip(&cache) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn incremental_caches_stay_coherent() {
        cache_coherence(&random_ls(4, 15, 10), 21);
        cache_coherence(&random_logistic(5, 15, 10), 22);
    }

    #[test]
    fn unchanged_block_leaves_cache_alone() {
        let ls = random_ls(6, 4, 3);
        let x = [0.3, -1.0, 2.0];
        let mut c = ls.init_cache(&x);
        let before = c.clone();
        ls.update_cache(&mut c, 1..2, &[-1.0], &[-1.0]);
        assert_eq!(c, before);
    }

    fn lipschitz_sampling(oracle: &dyn SmoothOracle, blocks: &[Range<usize>], seed: u64) {
        let mut rng = SolverRng::seed_from(seed);
        let n = oracle.dim();
        for _ in 0..1000 {
            let block = blocks[rng.index(blocks.len())].clone();
            let x = random_point(&mut rng, n);
            let h: Vec<f64> = block.clone().map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut y = x.clone();
            for (k, j) in block.clone().enumerate() {
                y[j] += h[k];
            }
            let gx = oracle.block_grad_cached(&x, block.clone(), &oracle.init_cache(&x));
            let gy = oracle.block_grad_cached(&y, block.clone(), &oracle.init_cache(&y));
            let diff: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            let ratio = norm(&diff) / norm(&h);
            assert!(ratio <= oracle.block_lipschitz(block) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn blockwise_lipschitz_bounds_hold() {
        let scalar: Vec<Range<usize>> = (0..6).map(|j| j..j + 1).collect();
        let grouped = vec![0..2, 2..5, 5..6];
        lipschitz_sampling(&random_ls(7, 9, 6), &scalar, 31);
        lipschitz_sampling(&random_ls(7, 9, 6), &grouped, 32);
        lipschitz_sampling(&random_logistic(8, 9, 6), &scalar, 33);
        lipschitz_sampling(&random_logistic(8, 9, 6), &grouped, 34);
    }

    #[test]
    fn global_lipschitz_below_sum_of_blocks() {
        let ls = random_ls(10, 7, 5);
        let sum: f64 = (0..5).map(|j| ls.block_lipschitz(j..j + 1)).sum();
        assert!(ls.global_lipschitz() <= sum * (1.0 + 1e-12));
        let lg = random_logistic(10, 7, 5);
        let sum: f64 = (0..5).map(|j| lg.block_lipschitz(j..j + 1)).sum();
        assert!(lg.global_lipschitz() <= sum * (1.0 + 1e-12));
        assert_eq!(lg.strong_convexity(), Some(0.5));
    }

    #[test]
    fn coordinate_profile_agrees_with_eval() {
        let lg = random_logistic(13, 11, 5);
        let ls = random_ls(13, 11, 5);
        let mut rng = SolverRng::seed_from(2);
        for oracle in [&lg as &dyn SmoothOracle, &ls] {
            let x = random_point(&mut rng, 5);
            let c = oracle.init_cache(&x);
            for j in 0..5 {
                let h = rng.uniform(-1.0, 1.0);
                let p = oracle.coordinate_profile(&x, j, &c, h);
                let mut y = x.clone();
                y[j] += h;
                assert!((p.value - eval(oracle, &y).unwrap()).abs() < 1e-12);
                let g = oracle.block_grad_cached(&y, j..j + 1, &oracle.init_cache(&y))[0];
                assert!((p.slope - g).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((sigmoid(-800.0)).abs() < 1e-300 && (sigmoid(800.0) - 1.0).abs() == 0.0);
    }

    #[test]
    fn ls_restricted_minimizer_is_least_norm() {
        // rank-deficient: duplicated column
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ls = LeastSquares::new(a, DVector::from_vec(vec![2.0, 2.0])).unwrap();
        let z = ls.restricted_minimizer(&[0, 1]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constructor_validation() {
        assert!(LeastSquares::new(DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
        assert!(LeastSquares::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
        assert!(LogisticL2::new(DMatrix::identity(2, 2), vec![0.0, 2.0], 0.5).is_err());
        assert!(LogisticL2::new(DMatrix::identity(2, 2), vec![0.0, 1.0], 0.0).is_err());
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
