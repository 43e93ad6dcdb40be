//! The RCD-IHT family and the full-gradient IHTA baseline.
//!
//! Both solvers check the per-iteration descent inequality
//! `F(x+) <= F(x) - mu/2 ||x+ - x||^2` and report a violation as an error,
//! which catches wrong Lipschitz constants early.

use crate::approx::{self, ApproxSpec, Usage};
use crate::error::{Error, Result};
use crate::objectives;
use crate::problem::{IterateState, L0Problem};
use crate::rng::{SolverRng, RNG_ALGORITHM};

/// Slack on the per-step descent check, relative to `1 + |F|`.
pub const DESCENT_SLACK: f64 = 1e-12;

/// Minimum number of fixed-support iterations for a rate fit.
pub const MIN_RATE_TAIL: usize = 20;

/// Gaps below `RATE_NOISE_FLOOR * (1 + |F*|)` are rounding noise and end the
/// fitted tail.
pub const RATE_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run exactly `max_iters` iterations.
    MaxIters,
    /// Stop once, over the last `window` iterations, the support did not
    /// change, every block was selected and no block moved by more than
    /// `tol * (1 + ||x||)`. `window = None` picks `3N` for coordinate methods
    /// and 3 for IHTA.
    Converged { window: Option<usize>, tol: f64 },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Converged {
            window: None,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub approx: ApproxSpec,
    pub max_iters: usize,
    pub seed: u64,
    pub stop: StopRule,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(approx: ApproxSpec, seed: u64) -> Self {
        Self {
            approx,
            max_iters: 1_000_000,
            seed,
            stop: StopRule::default(),
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    /// `None` for full-gradient iterations.
    pub block: Option<usize>,
    /// `F(x^k)`.
    pub objective: f64,
    /// `||x^{k+1} - x^k||`.
    pub step_norm: f64,
    pub support_changed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    /// Iterations `k` with `I(x^{k+1}) != I(x^k)`.
    pub support_change_iterations: Vec<usize>,
    /// `(k, I(x^k))` at the start and after every support change.
    pub support_history: Vec<(usize, Vec<usize>)>,
    pub kappa: usize,
    /// Lower bound on the expected decrease at a support change; `None` for IHTA.
    pub delta_bound: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub final_x: Vec<f64>,
    pub final_objective: f64,
    pub seed: Option<u64>,
    pub rng_algorithm: &'static str,
}

/// Outcome of one coordinate step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub before: f64,
    pub after: f64,
    pub step_norm: f64,
    pub support_changed: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One RCD-IHT step on block `i`: `x_i <- T_i(x)`.
pub fn rcd_iht_step(
    problem: &L0Problem,
    state: &mut IterateState,
    i: usize,
    spec: &ApproxSpec,
    iteration: usize,
) -> Result<StepInfo> {
    let range = problem.partition().range(i);
    let before = state.objective(problem);
    let new_block = approx::threshold_block(problem, spec, state.x(), state.cache(), i)?;
    let step_sq: f64 = new_block
        .iter()
        .zip(&state.x()[range])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let support_changed = state.replace_block(problem, i, &new_block)?;
    let after = state.objective(problem);
    let required = 0.5 * spec.mu(problem.partition(), i) * step_sq;
    if after > before - required + DESCENT_SLACK * (1.0 + before.abs()) {
        return Err(Error::DescentViolation {
            iteration,
            block: Some(i),
            before,
            after,
            required,
        });
    }
    Ok(StepInfo {
        before,
        after,
        step_norm: step_sq.sqrt(),
        support_changed,
    })
}

/// Convergence bookkeeping shared by both solvers.
struct StopTracker {
    window: usize,
    tol: Option<f64>,
    last_change: Option<usize>,
    last_big_step: Option<usize>,
    last_visit: Vec<Option<usize>>,
}

impl StopTracker {
    fn new(stop: StopRule, default_window: usize, blocks: usize) -> Self {
        let (window, tol) = match stop {
            StopRule::MaxIters => (usize::MAX, None),
            StopRule::Converged { window, tol } => (window.unwrap_or(default_window).max(1), Some(tol)),
        };
        Self {
            window,
            tol,
            last_change: None,
            last_big_step: None,
            last_visit: vec![None; blocks],
        }
    }

    /// Registers iteration `k`; returns true when the run may stop.
    fn observe(&mut self, k: usize, block: Option<usize>, info: &StepInfo, x: &[f64]) -> bool {
        let Some(tol) = self.tol else {
            return false;
        };
        match block {
            Some(i) => self.last_visit[i] = Some(k),
            None => self.last_visit.iter_mut().for_each(|v| *v = Some(k)),
        }
        if info.support_changed {
            self.last_change = Some(k);
        }
        if info.step_norm > tol * (1.0 + norm(x)) {
            self.last_big_step = Some(k);
        }
        let done = k + 1;
        if done < self.window {
            return false;
        }
        let start = done - self.window;
        let quiet = |last: Option<usize>| last.is_none_or(|c| c < start);
        quiet(self.last_change)
            && quiet(self.last_big_step)
            && self.last_visit.iter().all(|v| v.is_some_and(|k| k >= start))
    }
}

/// Runs RCD-IHT from `x0` with blocks drawn uniformly from the seeded generator.
pub fn run_rcd_iht(problem: &L0Problem, x0: Vec<f64>, config: &SolverConfig) -> Result<(IterateState, SolverTrace)> {
    if config.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    let partition = problem.partition();
    config.approx.validate(partition, Usage::Solver)?;
    let blocks = partition.num_blocks();
    let delta = delta_lower_bound(problem, &config.approx, &x0)?;
    let mut state = IterateState::new(problem, x0)?;
    let mut rng = SolverRng::seed_from(config.seed);
    let mut tracker = StopTracker::new(config.stop, 3 * blocks, blocks);
    let initial_objective = state.objective(problem);
    let mut trace = SolverTrace {
        records: Vec::new(),
        support_change_iterations: Vec::new(),
        support_history: vec![(0, state.support())],
        kappa: 0,
        delta_bound: Some(delta),
        iterations: 0,
        converged: false,
        initial_objective,
        final_x: Vec::new(),
        final_objective: initial_objective,
        seed: Some(config.seed),
        rng_algorithm: RNG_ALGORITHM,
    };
    for k in 0..config.max_iters {
        let i = rng.index(blocks);
        let info = rcd_iht_step(problem, &mut state, i, &config.approx, k)?;
        record(&mut trace, config.record_trace, k, Some(i), &info, &state);
        if tracker.observe(k, Some(i), &info, state.x()) {
            trace.converged = true;
            break;
        }
    }
    trace.final_x = state.x().to_vec();
    trace.final_objective = state.objective(problem);
    Ok((state, trace))
}

fn record(trace: &mut SolverTrace, keep: bool, k: usize, block: Option<usize>, info: &StepInfo, state: &IterateState) {
    trace.iterations = k + 1;
    if info.support_changed {
        trace.support_change_iterations.push(k);
        trace.kappa += 1;
        trace.support_history.push((k + 1, state.support()));
    }
    if keep {
        trace.records.push(IterRecord {
            k,
            block,
            objective: info.before,
            step_norm: info.step_norm,
            support_changed: info.support_changed,
        });
    }
}

/// One IHTA map: hard-thresholded full gradient step with constant `m_f`.
pub fn ihta_map(problem: &L0Problem, x: &[f64], m_f: f64) -> Result<Vec<f64>> {
    let partition = problem.partition();
    let cache = problem.smooth().init_cache(x);
    let grad = objectives::block_grad(problem.smooth(), x, 0..problem.dim(), &cache)?;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..partition.num_blocks() {
        let r = partition.range(i);
        out.extend(approx::threshold_q(&x[r.clone()], &grad[r], m_f, partition.lambda(i)));
    }
    Ok(out)
}

/// Full-gradient iterative hard thresholding with `M_f > L_f`.
pub fn run_ihta(
    problem: &L0Problem,
    x0: Vec<f64>,
    m_f: f64,
    max_iters: usize,
    stop: StopRule,
    record_trace: bool,
) -> Result<(IterateState, SolverTrace)> {
    let l_f = problem.partition().global_lipschitz();
    if !(m_f > l_f) {
        return Err(Error::InvalidApprox(format!("M_f = {m_f} must exceed L_f = {l_f}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
    }
    let mu = m_f - l_f;
    let mut state = IterateState::new(problem, x0)?;
    let mut tracker = StopTracker::new(stop, 3, problem.partition().num_blocks());
    let initial_objective = state.objective(problem);
    let mut trace = SolverTrace {
        records: Vec::new(),
        support_change_iterations: Vec::new(),
        support_history: vec![(0, state.support())],
        kappa: 0,
        delta_bound: None,
        iterations: 0,
        converged: false,
        initial_objective,
        final_x: Vec::new(),
        final_objective: initial_objective,
        seed: None,
        rng_algorithm: RNG_ALGORITHM,
    };
    for k in 0..max_iters {
        let before = state.objective(problem);
        let next = ihta_map(problem, state.x(), m_f)?;
        let step_sq: f64 = next.iter().zip(state.x()).map(|(a, b)| (a - b) * (a - b)).sum();
        let support_changed = state.replace_all(problem, next)?;
        let after = state.objective(problem);
        let required = 0.5 * mu * step_sq;
        if after > before - required + DESCENT_SLACK * (1.0 + before.abs()) {
            return Err(Error::DescentViolation {
                iteration: k,
                block: None,
                before,
                after,
                required,
            });
        }
        let info = StepInfo {
            before,
            after,
            step_norm: step_sq.sqrt(),
            support_changed,
        };
        record(&mut trace, record_trace, k, None, &info, &state);
        if tracker.observe(k, None, &info, state.x()) {
            trace.converged = true;
            break;
        }
    }
    trace.final_x = state.x().to_vec();
    trace.final_objective = state.objective(problem);
    Ok((state, trace))
}

/// `delta = (1/N) min{ min_{lambda_i > 0} mu_i lambda_i / M_i,
///                     min_{j in S_i, x0_j != 0} mu_i/2 |x0_j|^2 }`.
///
/// An empty inner minimum is dropped; with both empty the bound is `+inf`.
pub fn delta_lower_bound(problem: &L0Problem, spec: &ApproxSpec, x0: &[f64]) -> Result<f64> {
    let p = problem.partition();
    if x0.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: x0.len(),
        });
    }
    let mut best = f64::INFINITY;
    for i in 0..p.num_blocks() {
        let mu = spec.mu(p, i);
        if p.lambda(i) > 0.0 {
            best = best.min(mu * p.lambda(i) / spec.curvature(p, i));
        }
        for j in p.range(i) {
            if x0[j] != 0.0 {
                best = best.min(0.5 * mu * x0[j] * x0[j]);
            }
        }
    }
    Ok(best / p.num_blocks() as f64)
}

/// `max_i ||T_i(z) - z_i||`: zero exactly at u-strong local minimizers.
pub fn fixed_point_residual(problem: &L0Problem, spec: &ApproxSpec, z: &[f64]) -> Result<f64> {
    let cache = problem.smooth().init_cache(z);
    let p = problem.partition();
    let mut worst = 0.0f64;
    for i in 0..p.num_blocks() {
        let t = approx::threshold_block(problem, spec, z, &cache, i)?;
        let d: f64 = t.iter().zip(&z[p.range(i)]).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(d.sqrt());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `log(max(F^k - F*, 1e-16))` against `k`. The series
/// is cut where the gap first drops below the rounding floor.
pub fn fit_log_gap(values: &[f64], f_star: f64) -> Result<RateFit> {
    let floor = RATE_NOISE_FLOOR * (1.0 + f_star.abs());
    let cut = values.iter().position(|&v| v - f_star < floor).unwrap_or(values.len());
    let ys: Vec<f64> = values[..cut].iter().map(|&v| (v - f_star).max(1e-16).ln()).collect();
    if ys.len() < MIN_RATE_TAIL {
        return Err(Error::ShortTail {
            needed: MIN_RATE_TAIL,
            got: ys.len(),
        });
    }
    let n = ys.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        r_squared,
        points: ys.len(),
    })
}

/// Rate fit over the final fixed-support phase of a recorded trace.
pub fn estimate_linear_rate(trace: &SolverTrace, f_star: f64) -> Result<RateFit> {
    let start = trace.support_change_iterations.last().map_or(0, |&k| k + 1);
    let mut tail: Vec<f64> = trace.records.iter().filter(|r| r.k >= start).map(|r| r.objective).collect();
    tail.push(trace.final_objective);
    fit_log_gap(&tail, f_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{LeastSquares, LogisticL2};
    use crate::problem::BlockPartition;
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    fn toy() -> L0Problem {
        let ls = LeastSquares::new(DMatrix::identity(2, 2), DVector::from_vec(vec![2.0, 0.5])).unwrap();
        L0Problem::scalar_uniform(Arc::new(ls), 0.5).unwrap()
    }

    #[test]
    fn toy_step_zeroes_small_coordinate() {
        let p = toy();
        let spec = ApproxSpec::separable_at_lipschitz(p.partition());
        let mut s = IterateState::new(&p, vec![2.0, 0.5]).unwrap();
        // Delta_2 = M/2 * 0.25 ~ 0.125 < 0.5
        let info = rcd_iht_step(&p, &mut s, 1, &spec, 0).unwrap();
        assert_eq!(s.x(), &[2.0, 0.0]);
        assert!(info.support_changed);
        let mut s = IterateState::new(&p, vec![2.0, 0.5]).unwrap();
        rcd_iht_step(&p, &mut s, 0, &spec, 0).unwrap();
        assert_eq!(s.x(), &[2.0, 0.5]);
    }

    #[test]
    fn strong_minimizer_is_a_fixed_point() {
        let p = toy();
        let spec = ApproxSpec::separable_at_lipschitz(p.partition());
        for i in 0..2 {
            let mut s = IterateState::new(&p, vec![2.0, 0.0]).unwrap();
            let info = rcd_iht_step(&p, &mut s, i, &spec, 0).unwrap();
            assert_eq!(s.x(), &[2.0, 0.0]);
            assert_eq!(info.step_norm, 0.0);
        }
    }

    #[test]
    fn toy_run_converges_to_unique_strong_minimizer() {
        let p = toy();
        for seed in 0..10 {
            let cfg = SolverConfig::new(ApproxSpec::separable_at_lipschitz(p.partition()), seed);
            let (s, trace) = run_rcd_iht(&p, vec![2.0, 0.5], &cfg).unwrap();
            assert_eq!(s.x(), &[2.0, 0.0]);
            assert!((trace.final_objective - 0.625).abs() < 1e-15);
            assert!(trace.kappa <= 1);
            assert!(trace.converged);
        }
    }

    #[test]
    fn run_from_strong_minimizer_does_not_move() {
        let p = toy();
        let cfg = SolverConfig::new(ApproxSpec::exact(p.partition(), 1e-4), 3);
        let (s, trace) = run_rcd_iht(&p, vec![2.0, 0.0], &cfg).unwrap();
        assert_eq!(s.x(), &[2.0, 0.0]);
        assert_eq!(trace.kappa, 0);
    }

    #[test]
    fn logistic_run_is_monotone() {
        let mut rng = SolverRng::seed_from(8);
        let a = DMatrix::from_fn(20, 8, |_, _| rng.uniform(-1.0, 1.0));
        let y = (0..20).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        let lg = LogisticL2::new(a, y, 0.5).unwrap();
        let p = L0Problem::scalar_uniform(Arc::new(lg), 0.05).unwrap();
        let x0: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for spec in [
            ApproxSpec::separable_scaled(p.partition(), 1.2),
            ApproxSpec::exact(p.partition(), 1e-4),
        ] {
            let mut cfg = SolverConfig::new(spec, 5);
            cfg.max_iters = 500;
            let (_, trace) = run_rcd_iht(&p, x0.clone(), &cfg).unwrap();
            for w in trace.records.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-12);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut rng = SolverRng::seed_from(9);
        let a = DMatrix::from_fn(6, 10, |_, _| rng.uniform(-1.0, 1.0));
        let b = DVector::from_fn(6, |_, _| rng.uniform(-1.0, 1.0));
        let p = L0Problem::scalar_uniform(Arc::new(LeastSquares::new(a, b).unwrap()), 0.1).unwrap();
        let x0: Vec<f64> = (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let cfg = SolverConfig::new(ApproxSpec::separable_scaled(p.partition(), 1.1), 77);
        let (_, t1) = run_rcd_iht(&p, x0.clone(), &cfg).unwrap();
        let (_, t2) = run_rcd_iht(&p, x0, &cfg).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn ihta_examples() {
        let p = toy();
        // Delta_2 = (M_f/2) 0.5^2 ~ 0.25 < 0.5: zeroed; coordinate 1 stays
        let next = ihta_map(&p, &[2.0, 0.5], 2.0 + 1e-6).unwrap();
        assert_eq!(next, vec![2.0, 0.0]);
        let (s, trace) = run_ihta(&p, vec![2.0, 0.5], 2.0 + 1e-6, 1000, StopRule::default(), true).unwrap();
        assert_eq!(s.x(), &[2.0, 0.0]);
        let (again, t2) = run_ihta(&p, s.x().to_vec(), 2.0 + 1e-6, 1000, StopRule::default(), true).unwrap();
        assert_eq!(again.x(), s.x());
        assert_eq!(t2.kappa, 0);
        assert!(trace.converged);
    }

    #[test]
    fn ihta_without_penalty_is_gradient_descent() {
        let mut rng = SolverRng::seed_from(4);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.uniform(-1.0, 1.0));
        let b = DVector::from_fn(5, |_, _| rng.uniform(-1.0, 1.0));
        let p = L0Problem::scalar_uniform(Arc::new(LeastSquares::new(a, b).unwrap()), 0.0).unwrap();
        let x = [0.3, -0.1, 0.8];
        let mf = 1.5 * p.partition().global_lipschitz();
        let g = p.smooth().full_grad(&x);
        let next = ihta_map(&p, &x, mf).unwrap();
        for j in 0..3 {
            assert_eq!(next[j], x[j] - g[j] / mf);
        }
        assert!(run_ihta(&p, x.to_vec(), 0.5 * p.partition().global_lipschitz(), 10, StopRule::MaxIters, false).is_err());
    }

    fn delta_problem(lambda: Vec<f64>) -> L0Problem {
        let n = lambda.len();
        let ls = LeastSquares::new(DMatrix::identity(n, n), DVector::zeros(n)).unwrap();
        let part = BlockPartition::scalar(lambda, vec![1.0; n], None).unwrap();
        L0Problem::new(Arc::new(ls), part).unwrap()
    }

    #[test]
    fn delta_bound_examples() {
        // mu = M - L = 1, M = 2
        let p = delta_problem(vec![1.0]);
        let spec = ApproxSpec::separable_scaled(p.partition(), 2.0);
        assert_eq!(delta_lower_bound(&p, &spec, &[0.0]).unwrap(), 0.5);

        let p = delta_problem(vec![1.0, 1.0]);
        let spec = ApproxSpec::separable_scaled(p.partition(), 2.0);
        assert_eq!(delta_lower_bound(&p, &spec, &[3.0, 0.0]).unwrap(), 0.25);

        let mut prev = 0.0;
        for lam in [1.0, 2.0, 4.0, 8.0] {
            let p = delta_problem(vec![lam, lam]);
            let d = delta_lower_bound(&p, &spec, &[0.0, 0.0]).unwrap();
            assert_eq!(d, lam / 4.0);
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn exact_kind_uses_l_plus_beta_as_curvature() {
        let p = delta_problem(vec![1.0]);
        let spec = ApproxSpec::exact(p.partition(), 0.5);
        assert_eq!(delta_lower_bound(&p, &spec, &[0.0]).unwrap(), 0.5 / 1.5);
    }

    #[test]
    fn rate_fit_on_synthetic_sequences() {
        let geometric: Vec<f64> = (0..30).map(|k| 2f64.powi(-k)).collect();
        let fit = fit_log_gap(&geometric, 0.0).unwrap();
        assert!((fit.slope + std::f64::consts::LN_2).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let flat = vec![1.5; 25];
        let fit = fit_log_gap(&flat, 1.0).unwrap();
        assert_eq!(fit.slope, 0.0);

        assert!(matches!(fit_log_gap(&flat[..10], 1.0), Err(Error::ShortTail { .. })));
    }

    #[test]
    fn fixed_point_residual_vanishes_at_limit() {
        let p = toy();
        let spec = ApproxSpec::separable_at_lipschitz(p.partition());
        assert_eq!(fixed_point_residual(&p, &spec, &[2.0, 0.0]).unwrap(), 0.0);
        assert!(fixed_point_residual(&p, &spec, &[2.0, 0.5]).unwrap() > 0.1);
    }
}
