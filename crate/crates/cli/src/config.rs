//! TOML experiment configuration. The schema is documented in `CONFIG.md`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use l0rcd::analysis::ClassSpec;
use l0rcd::instances::{self, StartSpec};
use l0rcd::objectives::{matrix_from_rows, LeastSquares, LogisticL2, SmoothOracle};
use l0rcd::{derive_seed, ApproxSpec, BlockPartition, L0Problem, SolverRng};

use crate::error::CliError;
use crate::io;

pub const DEFAULT_M_FACTOR: f64 = 1.5;
pub const DEFAULT_BETA: f64 = 1e-4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solvers: Vec<SolverEntry>,
    #[serde(default)]
    pub start: StartConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub enumerate: EnumerateSection,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    LeastSquares,
    Logistic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Uniform(f64),
    PerBlock(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub m: usize,
    pub n: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub objective: Objective,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub labels: Option<Vec<f64>>,
    pub a_csv: Option<PathBuf>,
    pub b_csv: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub generate: Option<GenerateConfig>,
    pub nu: Option<f64>,
    pub lambda: LambdaSpec,
    pub block_sizes: Option<Vec<usize>>,
    /// Multiplies every Lipschitz constant; values below 1 make the constants
    /// invalid and exist to exercise the descent check.
    #[serde(default = "one")]
    pub lipschitz_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rcd,
    Ihta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproxName {
    Uq,
    UqDiag,
    Ue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub name: Option<String>,
    pub method: Method,
    pub approx: Option<ApproxName>,
    /// `M_i = m_factor * L_i` for `uq`, `M_f = m_factor * L_f` for IHTA.
    #[serde(default = "default_m_factor")]
    pub m_factor: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Per-coordinate diagonal for `uq_diag`.
    pub diag: Option<Vec<f64>>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub stop_window: Option<usize>,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    /// Run exactly `max_iters` iterations.
    #[serde(default)]
    pub fixed_iters: bool,
}

fn default_m_factor() -> f64 {
    DEFAULT_M_FACTOR
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_max_iters() -> usize {
    200_000
}

fn default_stop_tol() -> f64 {
    1e-10
}

impl SolverEntry {
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match (self.method, self.approx) {
            (Method::Ihta, _) => "IHTA".into(),
            (Method::Rcd, Some(ApproxName::Uq) | None) => "RCD-IHT-uq".into(),
            (Method::Rcd, Some(ApproxName::UqDiag)) => "RCD-IHT-uQ".into(),
            (Method::Rcd, Some(ApproxName::Ue)) => "RCD-IHT-ue".into(),
        }
    }

    pub fn approx_spec(&self, p: &BlockPartition) -> Result<ApproxSpec, CliError> {
        Ok(match self.approx.unwrap_or(ApproxName::Uq) {
            ApproxName::Uq => ApproxSpec::separable_scaled(p, self.m_factor),
            ApproxName::Ue => ApproxSpec::exact(p, self.beta),
            ApproxName::UqDiag => {
                let h = self
                    .diag
                    .clone()
                    .ok_or_else(|| CliError::Config("approx = \"uq_diag\" requires `diag`".into()))?;
                ApproxSpec::diagonal(h)
            }
        })
    }

    pub fn stop_rule(&self) -> l0rcd::solvers::StopRule {
        if self.fixed_iters {
            l0rcd::solvers::StopRule::MaxIters
        } else {
            l0rcd::solvers::StopRule::Converged {
                window: self.stop_window,
                tol: self.stop_tol,
            }
        }
    }

    /// The three solvers of the standard comparison.
    pub fn defaults() -> Vec<SolverEntry> {
        let base = SolverEntry {
            name: None,
            method: Method::Ihta,
            approx: None,
            m_factor: DEFAULT_M_FACTOR,
            beta: DEFAULT_BETA,
            diag: None,
            max_iters: default_max_iters(),
            stop_window: None,
            stop_tol: default_stop_tol(),
            fixed_iters: false,
        };
        vec![
            base.clone(),
            SolverEntry {
                method: Method::Rcd,
                approx: Some(ApproxName::Uq),
                ..base.clone()
            },
            SolverEntry {
                method: Method::Rcd,
                approx: Some(ApproxName::Ue),
                ..base
            },
        ]
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub x0: Option<Vec<f64>>,
    #[serde(default = "half")]
    pub density: f64,
    #[serde(default = "minus_one")]
    pub low: f64,
    #[serde(default = "one")]
    pub high: f64,
}

fn half() -> f64 {
    0.5
}

fn minus_one() -> f64 {
    -1.0
}

impl Default for StartConfig {
    fn default() -> Self {
        Self {
            x0: None,
            density: 0.5,
            low: -1.0,
            high: 1.0,
        }
    }
}

impl StartConfig {
    pub fn spec(&self) -> StartSpec {
        StartSpec {
            density: self.density,
            low: self.low,
            high: self.high,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "one_usize")]
    pub trials: usize,
    pub lambdas: Option<Vec<f64>>,
    /// Known optimal values, one per entry of `lambdas`, for instances too
    /// large to enumerate.
    pub reference_objective: Option<Vec<f64>>,
    #[serde(default = "default_success_tol")]
    pub success_tol: f64,
}

fn one_usize() -> usize {
    1
}

fn default_success_tol() -> f64 {
    1e-6
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 1,
            lambdas: None,
            reference_objective: None,
            success_tol: default_success_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Uq,
    Ue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub label: Option<String>,
    pub approx: ClassKind,
    /// `M_i = m_factor * L_i`, or `m_factor * L_f` with `global = true`.
    #[serde(default = "one")]
    pub m_factor: f64,
    #[serde(default)]
    pub global: bool,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

impl ClassEntry {
    pub fn to_class(&self, p: &BlockPartition) -> ClassSpec {
        match self.approx {
            ClassKind::Uq => {
                let (spec, base) = if self.global {
                    (ApproxSpec::separable_uniform(p, self.m_factor * p.global_lipschitz()), "L_f")
                } else {
                    (ApproxSpec::separable_scaled(p, self.m_factor), "L_i")
                };
                let label = self.label.clone().unwrap_or_else(|| {
                    if self.m_factor == 1.0 {
                        format!("uq({base})")
                    } else {
                        format!("uq({}*{base})", self.m_factor)
                    }
                });
                ClassSpec::new(label, spec)
            }
            ClassKind::Ue => {
                let label = self.label.clone().unwrap_or_else(|| format!("ue({})", self.beta));
                ClassSpec::new(label, ApproxSpec::exact(p, self.beta))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConventionName {
    #[default]
    Powers0,
    Powers1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalingName {
    #[default]
    Half,
    Full,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EnumerateSection {
    pub classes: Option<Vec<ClassEntry>>,
    #[serde(default)]
    pub convention: ConventionName,
    #[serde(default)]
    pub scaling: ScalingName,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_updates")]
    pub updates: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_cache_tol")]
    pub cache_tol: f64,
    #[serde(default = "default_descent_iters")]
    pub descent_iters: usize,
}

fn default_points() -> usize {
    20
}

fn default_updates() -> usize {
    1000
}

fn default_fd_step() -> f64 {
    1e-6
}

fn default_grad_tol() -> f64 {
    1e-5
}

fn default_cache_tol() -> f64 {
    1e-8
}

fn default_descent_iters() -> usize {
    2000
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            points: default_points(),
            updates: default_updates(),
            fd_step: default_fd_step(),
            grad_tol: default_grad_tol(),
            cache_tol: default_cache_tol(),
            descent_iters: default_descent_iters(),
        }
    }
}

/// A parsed config together with the data needed for output headers.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        Ok(Self {
            config,
            base_dir,
            sha256: io::sha256_hex(text.as_bytes()),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn matrix(&self, inline: &Option<Vec<Vec<f64>>>, csv: &Option<PathBuf>, what: &str) -> Result<Vec<Vec<f64>>, CliError> {
        match (inline, csv) {
            (Some(rows), None) => Ok(rows.clone()),
            (None, Some(path)) => io::read_matrix_csv(&self.resolve(path)),
            (Some(_), Some(_)) => Err(CliError::Config(format!("give either `{what}` or `{what}_csv`, not both"))),
            (None, None) => Err(CliError::Config(format!("missing `{what}` (or `{what}_csv`)"))),
        }
    }

    fn vector(&self, inline: &Option<Vec<f64>>, csv: &Option<PathBuf>, what: &str) -> Result<Vec<f64>, CliError> {
        let as_rows = inline.as_ref().map(|v| v.iter().map(|x| vec![*x]).collect::<Vec<_>>());
        let rows = self.matrix(&as_rows, csv, what)?;
        rows.into_iter()
            .map(|r| match r.as_slice() {
                [v] => Ok(*v),
                _ => Err(CliError::Config(format!("`{what}` must have a single column"))),
            })
            .collect()
    }

    pub fn oracle(&self) -> Result<Arc<dyn SmoothOracle>, CliError> {
        let pc = &self.config.problem;
        let generated = pc.generate.as_ref();
        if generated.is_some() && (pc.a.is_some() || pc.a_csv.is_some()) {
            return Err(CliError::Config("give either `generate` or explicit data, not both".into()));
        }
        match pc.objective {
            Objective::LeastSquares => {
                if let Some(g) = generated {
                    let mut rng = SolverRng::seed_from(g.seed.unwrap_or(self.config.seed));
                    return Ok(Arc::new(instances::random_least_squares(&mut rng, g.m, g.n)?));
                }
                let a = self.matrix(&pc.a, &pc.a_csv, "a")?;
                let b = self.vector(&pc.b, &pc.b_csv, "b")?;
                Ok(Arc::new(LeastSquares::from_rows(&a, b)?))
            }
            Objective::Logistic => {
                let nu = pc
                    .nu
                    .ok_or_else(|| CliError::Config("logistic objective requires `nu`".into()))?;
                if let Some(g) = generated {
                    let mut rng = SolverRng::seed_from(g.seed.unwrap_or(self.config.seed));
                    return Ok(Arc::new(instances::random_logistic(&mut rng, g.m, g.n, nu)?.0));
                }
                let a = self.matrix(&pc.a, &pc.a_csv, "a")?;
                let y = self.vector(&pc.labels, &pc.labels_csv, "labels")?;
                Ok(Arc::new(LogisticL2::new(matrix_from_rows(&a)?, y, nu)?))
            }
        }
    }

    /// Problem with the configured penalty, or with a uniform override.
    pub fn problem_with(&self, oracle: Arc<dyn SmoothOracle>, lambda_override: Option<f64>) -> Result<L0Problem, CliError> {
        let pc = &self.config.problem;
        let n = oracle.dim();
        let sizes = pc.block_sizes.clone().unwrap_or_else(|| vec![1; n]);
        let blocks = sizes.len();
        let lambda = match (lambda_override, &pc.lambda) {
            (Some(l), _) | (None, &LambdaSpec::Uniform(l)) => vec![l; blocks],
            (None, LambdaSpec::PerBlock(v)) => v.clone(),
        };
        let mut part = BlockPartition::from_oracle(oracle.as_ref(), sizes, lambda)?;
        if pc.lipschitz_scale != 1.0 {
            part = part.with_scaled_lipschitz(pc.lipschitz_scale)?;
        }
        Ok(L0Problem::new(oracle, part)?)
    }

    pub fn problem(&self) -> Result<L0Problem, CliError> {
        self.problem_with(self.oracle()?, None)
    }

    pub fn solvers(&self) -> Vec<SolverEntry> {
        if self.config.solvers.is_empty() {
            SolverEntry::defaults()
        } else {
            self.config.solvers.clone()
        }
    }

    /// Starting point for `trial`: the configured `x0` or a seeded random start.
    pub fn start(&self, n: usize, trial: u64) -> Result<Vec<f64>, CliError> {
        let sc = &self.config.start;
        if let Some(x0) = &sc.x0 {
            if x0.len() != n {
                return Err(CliError::Config(format!("`start.x0` has length {}, expected {n}", x0.len())));
            }
            return Ok(x0.clone());
        }
        let spec = sc.spec();
        spec.validate()?;
        let mut rng = SolverRng::seed_from(start_seed(self.config.seed, trial));
        Ok(instances::random_sparse(&mut rng, n, &spec))
    }
}

pub fn trial_seed(master: u64, trial: u64) -> u64 {
    derive_seed(master, trial)
}

pub fn start_seed(master: u64, trial: u64) -> u64 {
    derive_seed(trial_seed(master, trial), 0)
}

pub fn solver_seed(master: u64, trial: u64, solver: usize) -> u64 {
    derive_seed(trial_seed(master, trial), 1 + solver as u64)
}
