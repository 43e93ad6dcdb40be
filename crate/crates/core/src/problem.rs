//! Problem model: block structure, the weighted l0 quasinorm and support
//! bookkeeping.
//!
//! The composite objective is `F(x) = f(x) + sum_i lambda_i * ||x_i||_0`,
//! where `f` is a smooth convex oracle and `x_i` are contiguous coordinate
//! blocks. A component counts as zero only when it is bit-exactly `0.0`.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::objectives::{self, SmoothOracle};

/// Relative slack allowed when checking `L_f <= sum_i L_i`.
const LIPSCHITZ_SUM_SLACK: f64 = 1e-9;

/// Decomposition of `n` coordinates into `N` contiguous blocks, each with a
/// penalty `lambda_i` and a blockwise Lipschitz constant `L_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    block_sizes: Vec<usize>,
    offsets: Vec<usize>,
    lambda: Vec<f64>,
    lipschitz: Vec<f64>,
    global_lipschitz: f64,
}

impl BlockPartition {
    /// Builds a partition. `global_lipschitz` defaults to `sum_i L_i`.
    pub fn new(
        block_sizes: Vec<usize>,
        lambda: Vec<f64>,
        lipschitz: Vec<f64>,
        global_lipschitz: Option<f64>,
    ) -> Result<Self> {
        let blocks = block_sizes.len();
        if blocks == 0 {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        if lambda.len() != blocks || lipschitz.len() != blocks {
            return Err(Error::InvalidPartition(format!(
                "{blocks} blocks but {} penalties and {} Lipschitz constants",
                lambda.len(),
                lipschitz.len()
            )));
        }
        if let Some(i) = block_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidPartition(format!("block {i} is empty")));
        }
        if let Some(i) = lambda.iter().position(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidPartition(format!(
                "penalty of block {i} is {} (must be finite and >= 0)",
                lambda[i]
            )));
        }
        if let Some(i) = lipschitz.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidPartition(format!(
                "Lipschitz constant of block {i} is {} (must be finite and > 0)",
                lipschitz[i]
            )));
        }
        let sum: f64 = lipschitz.iter().sum();
        let global_lipschitz = global_lipschitz.unwrap_or(sum);
        if !(global_lipschitz > 0.0 && global_lipschitz.is_finite()) {
            return Err(Error::InvalidPartition(format!(
                "global Lipschitz constant {global_lipschitz} must be finite and > 0"
            )));
        }
        if global_lipschitz > sum * (1.0 + LIPSCHITZ_SUM_SLACK) {
            return Err(Error::InvalidPartition(format!(
                "global Lipschitz constant {global_lipschitz} exceeds sum of block constants {sum}"
            )));
        }
        let mut offsets = Vec::with_capacity(blocks + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &block_sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self {
            block_sizes,
            offsets,
            lambda,
            lipschitz,
            global_lipschitz,
        })
    }

    /// One coordinate per block.
    pub fn scalar(lambda: Vec<f64>, lipschitz: Vec<f64>, global_lipschitz: Option<f64>) -> Result<Self> {
        Self::new(vec![1; lambda.len()], lambda, lipschitz, global_lipschitz)
    }

    /// Partition whose Lipschitz constants are read off a smooth oracle.
    pub fn from_oracle(oracle: &dyn SmoothOracle, block_sizes: Vec<usize>, lambda: Vec<f64>) -> Result<Self> {
        let total: usize = block_sizes.iter().sum();
        if total != oracle.dim() {
            return Err(Error::DimensionMismatch {
                expected: oracle.dim(),
                got: total,
            });
        }
        let mut start = 0;
        let lipschitz = block_sizes
            .iter()
            .map(|&s| {
                let l = oracle.block_lipschitz(start..start + s);
                start += s;
                l
            })
            .collect();
        Self::new(block_sizes, lambda, lipschitz, Some(oracle.global_lipschitz()))
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.block_sizes[i]
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Coordinates of block `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Block containing coordinate `j`.
    pub fn block_of(&self, j: usize) -> usize {
        debug_assert!(j < self.dim());
        self.offsets.partition_point(|&o| o <= j) - 1
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambda[i]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lipschitz(&self, i: usize) -> f64 {
        self.lipschitz[i]
    }

    pub fn lipschitz_constants(&self) -> &[f64] {
        &self.lipschitz
    }

    pub fn global_lipschitz(&self) -> f64 {
        self.global_lipschitz
    }

    pub fn is_scalar(&self) -> bool {
        self.block_sizes.iter().all(|&s| s == 1)
    }

    /// True when at least one block carries a positive penalty.
    pub fn has_penalty(&self) -> bool {
        self.lambda.iter().any(|&l| l > 0.0)
    }

    /// Same blocks and constants, new penalties.
    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(
            self.block_sizes.clone(),
            lambda,
            self.lipschitz.clone(),
            Some(self.global_lipschitz),
        )
    }

    /// Same blocks and penalties, Lipschitz constants multiplied by `factor`.
    /// Used to build deliberately mis-specified instances.
    pub fn with_scaled_lipschitz(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.block_sizes.clone(),
            self.lambda.clone(),
            self.lipschitz.iter().map(|l| l * factor).collect(),
            Some(self.global_lipschitz * factor),
        )
    }

    /// Per-coordinate penalty `lambda_{block(j)}`.
    pub fn coordinate_lambda(&self, j: usize) -> f64 {
        self.lambda[self.block_of(j)]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// `sum_i lambda_i * #{j in S_i : x_j != 0}`.
pub fn l0_norm(x: &[f64], partition: &BlockPartition) -> Result<f64> {
    partition.check_dim(x)?;
    Ok((0..partition.num_blocks())
        .map(|i| {
            let nnz = x[partition.range(i)].iter().filter(|&&v| v != 0.0).count();
            partition.lambda(i) * nnz as f64
        })
        .sum())
}

/// `I(x)`: nonzero coordinates plus every coordinate of a zero-penalty block.
/// Returned sorted.
pub fn support_of(x: &[f64], partition: &BlockPartition) -> Vec<usize> {
    (0..x.len().min(partition.dim()))
        .filter(|&j| x[j] != 0.0 || partition.coordinate_lambda(j) == 0.0)
        .collect()
}

/// A smooth convex oracle together with its block partition.
#[derive(Clone)]
pub struct L0Problem {
    smooth: Arc<dyn SmoothOracle>,
    partition: BlockPartition,
    strong_convexity: Option<f64>,
}

impl std::fmt::Debug for L0Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("L0Problem")
            .field("smooth", &self.smooth)
            .field("partition", &self.partition)
            .field("strong_convexity", &self.strong_convexity)
            .finish()
    }
}

impl L0Problem {
    pub fn new(smooth: Arc<dyn SmoothOracle>, partition: BlockPartition) -> Result<Self> {
        if smooth.dim() != partition.dim() {
            return Err(Error::DimensionMismatch {
                expected: smooth.dim(),
                got: partition.dim(),
            });
        }
        let strong_convexity = smooth.strong_convexity();
        Ok(Self {
            smooth,
            partition,
            strong_convexity,
        })
    }

    /// Scalar blocks with Lipschitz constants taken from the oracle and a
    /// common penalty.
    pub fn scalar_uniform(smooth: Arc<dyn SmoothOracle>, lambda: f64) -> Result<Self> {
        let n = smooth.dim();
        let partition = BlockPartition::from_oracle(smooth.as_ref(), vec![1; n], vec![lambda; n])?;
        Self::new(smooth, partition)
    }

    pub fn smooth(&self) -> &dyn SmoothOracle {
        self.smooth.as_ref()
    }

    pub fn smooth_arc(&self) -> Arc<dyn SmoothOracle> {
        Arc::clone(&self.smooth)
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn strong_convexity(&self) -> Option<f64> {
        self.strong_convexity
    }

    pub fn with_partition(&self, partition: BlockPartition) -> Result<Self> {
        Self::new(Arc::clone(&self.smooth), partition)
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        self.with_partition(self.partition.with_lambda(lambda)?)
    }

    pub fn f(&self, x: &[f64]) -> Result<f64> {
        objectives::eval(self.smooth(), x)
    }

    pub fn l0_norm(&self, x: &[f64]) -> Result<f64> {
        l0_norm(x, &self.partition)
    }

    /// `F(x) = f(x) + ||x||_{0,lambda}`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.f(x)? + self.l0_norm(x)?)
    }

    pub fn support_of(&self, x: &[f64]) -> Vec<usize> {
        support_of(x, &self.partition)
    }
}

/// Current iterate of a solver run with its cached oracle state.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    x: Vec<f64>,
    in_support: Vec<bool>,
    f_value: f64,
    cache: Vec<f64>,
}

impl IterateState {
    pub fn new(problem: &L0Problem, x0: Vec<f64>) -> Result<Self> {
        problem.partition().check_dim(&x0)?;
        let oracle = problem.smooth();
        let cache = oracle.init_cache(&x0);
        let f_value = oracle.value_cached(&x0, &cache);
        if !f_value.is_finite() {
            return Err(Error::NonFinite(f_value));
        }
        let p = problem.partition();
        let in_support = (0..x0.len())
            .map(|j| x0[j] != 0.0 || p.coordinate_lambda(j) == 0.0)
            .collect();
        Ok(Self {
            x: x0,
            in_support,
            f_value,
            cache,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn into_x(self) -> Vec<f64> {
        self.x
    }

    pub fn f_value(&self) -> f64 {
        self.f_value
    }

    pub fn cache(&self) -> &[f64] {
        &self.cache
    }

    pub fn in_support(&self, j: usize) -> bool {
        self.in_support[j]
    }

    /// `I(x)` as sorted indices.
    pub fn support(&self) -> Vec<usize> {
        self.in_support
            .iter()
            .enumerate()
            .filter_map(|(j, &s)| s.then_some(j))
            .collect()
    }

    pub fn support_mask(&self) -> &[bool] {
        &self.in_support
    }

    /// `F` at the current point.
    pub fn objective(&self, problem: &L0Problem) -> f64 {
        // x always has the partition's dimension here
        self.f_value + l0_norm(&self.x, problem.partition()).unwrap_or(f64::NAN)
    }

    /// Overwrites block `i` and refreshes the cache, `f` and the support.
    /// Returns true when `I(x)` changed.
    pub(crate) fn replace_block(&mut self, problem: &L0Problem, i: usize, new_block: &[f64]) -> Result<bool> {
        let range = problem.partition().range(i);
        debug_assert_eq!(range.len(), new_block.len());
        let lambda_zero = problem.partition().lambda(i) == 0.0;
        let old_block: Vec<f64> = self.x[range.clone()].to_vec();
        problem
            .smooth()
            .update_cache(&mut self.cache, range.clone(), &old_block, new_block);
        self.x[range.clone()].copy_from_slice(new_block);
        let mut changed = false;
        for (off, j) in range.enumerate() {
            let now = lambda_zero || new_block[off] != 0.0;
            changed |= now != self.in_support[j];
            self.in_support[j] = now;
        }
        self.f_value = problem.smooth().value_cached(&self.x, &self.cache);
        if !self.f_value.is_finite() {
            return Err(Error::NonFinite(self.f_value));
        }
        Ok(changed)
    }

    /// Replaces the whole point (full-gradient methods).
    pub(crate) fn replace_all(&mut self, problem: &L0Problem, x: Vec<f64>) -> Result<bool> {
        let fresh = Self::new(problem, x)?;
        let changed = fresh.in_support != self.in_support;
        *self = fresh;
        Ok(changed)
    }

    /// Recomputes cache, `f` and support from `x` and compares them with the
    /// stored values.
    pub fn check_consistency(&self, problem: &L0Problem, rel_tol: f64) -> Result<()> {
        let fresh = Self::new(problem, self.x.clone())?;
        if fresh.in_support != self.in_support {
            return Err(Error::InvalidArgument("support out of sync with x".into()));
        }
        let f_dev = (fresh.f_value - self.f_value).abs();
        if f_dev > rel_tol * (1.0 + fresh.f_value.abs()) {
            return Err(Error::InvalidArgument(format!("cached f deviates by {f_dev:e}")));
        }
        let scale = 1.0 + fresh.cache.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = fresh
            .cache
            .iter()
            .zip(&self.cache)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if dev > rel_tol * scale {
            return Err(Error::StaleCache {
                block: usize::MAX,
                deviation: dev,
            });
        }
        Ok(())
    }
}
