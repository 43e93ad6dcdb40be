//! Seeded random instances and starting points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objectives::{sigmoid, LeastSquares, LogisticL2};
use crate::rng::SolverRng;

/// Density and value range of planted logistic models.
pub const PLANTED_DENSITY: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartSpec {
    pub density: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for StartSpec {
    fn default() -> Self {
        Self {
            density: 0.5,
            low: -1.0,
            high: 1.0,
        }
    }
}

impl StartSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) || !(self.low <= self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "start spec needs density in [0, 1] and finite low <= high, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Sparse vector: each coordinate is nonzero with probability `density`,
/// nonzeros uniform on `[low, high]`.
pub fn random_sparse(rng: &mut SolverRng, n: usize, spec: &StartSpec) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let keep = rng.bernoulli(spec.density);
            let v = rng.uniform(spec.low, spec.high);
            if keep {
                v
            } else {
                0.0
            }
        })
        .collect()
}

fn uniform_matrix(rng: &mut SolverRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("instance dimensions must be positive, got {m} x {n}")));
    }
    Ok(())
}

/// `A` and `b` with i.i.d. entries uniform on `[-1, 1]`.
pub fn random_least_squares(rng: &mut SolverRng, m: usize, n: usize) -> Result<LeastSquares> {
    check_dims(m, n)?;
    let a = uniform_matrix(rng, m, n);
    let b = DVector::from_fn(m, |_, _| rng.uniform(-1.0, 1.0));
    LeastSquares::new(a, b)
}

/// `m` samples with uniform features and labels drawn from the logistic
/// model at a planted sparse coefficient vector, which is also returned.
pub fn random_logistic(rng: &mut SolverRng, m: usize, n: usize, nu: f64) -> Result<(LogisticL2, Vec<f64>)> {
    check_dims(m, n)?;
    let data = uniform_matrix(rng, m, n);
    let planted = random_sparse(
        rng,
        n,
        &StartSpec {
            density: PLANTED_DENSITY,
            ..StartSpec::default()
        },
    );
    let labels = (0..m)
        .map(|r| {
            let t: f64 = (0..n).map(|j| data[(r, j)] * planted[j]).sum();
            if rng.bernoulli(sigmoid(t)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok((LogisticL2::new(data, labels, nu)?, planted))
}
