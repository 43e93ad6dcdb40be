//! The five subcommands.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use l0rcd::analysis::{self, ClassSpec, ExponentConvention, InclusionViolation, MinimaCatalog, Scaling};
use l0rcd::objectives::{self, SmoothOracle};
use l0rcd::solvers::{self, SolverConfig, SolverTrace};
use l0rcd::{Error, L0Problem, SolverRng};

use crate::config::{self, ConventionName, LoadedConfig, Method, ScalingName, SolverEntry};
use crate::error::CliError;
use crate::io::{num, OutputDir, OutputMeta, Table};

/// Everything a command needs besides its output streams.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Option<LoadedConfig>,
    pub out_dir: PathBuf,
    pub example2: bool,
    pub timestamp: bool,
}

impl Context {
    fn config(&self) -> Result<&LoadedConfig, CliError> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --config PATH".into()))
    }

    fn seed(&self) -> u64 {
        self.config.as_ref().map_or(0, |c| c.config.seed)
    }

    fn output(&self, sha: String, extra: Vec<(String, String)>) -> Result<OutputDir, CliError> {
        OutputDir::new(
            self.out_dir.clone(),
            OutputMeta {
                config_sha256: sha,
                seed: self.seed(),
                timestamp: self.timestamp,
                extra,
            },
        )
    }
}

fn write_out(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn print_header(out: &mut dyn Write, dir: &OutputDir) -> Result<(), CliError> {
    for line in dir.meta.header_lines() {
        write_out(out, &format!("# {line}\n"))?;
    }
    Ok(())
}

/// Outcome of one solver run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: SolverTrace,
    pub sparsity: usize,
}

pub fn run_solver(
    problem: &L0Problem,
    entry: &SolverEntry,
    x0: Vec<f64>,
    seed: u64,
    record_trace: bool,
) -> Result<RunResult, CliError> {
    let p = problem.partition();
    let trace = match entry.method {
        Method::Rcd => {
            let cfg = SolverConfig {
                approx: entry.approx_spec(p)?,
                max_iters: entry.max_iters,
                seed,
                stop: entry.stop_rule(),
                record_trace,
            };
            solvers::run_rcd_iht(problem, x0, &cfg)?.1
        }
        Method::Ihta => {
            let m_f = entry.m_factor * p.global_lipschitz();
            solvers::run_ihta(problem, x0, m_f, entry.max_iters, entry.stop_rule(), record_trace)?.1
        }
    };
    let sparsity = trace.final_x.iter().filter(|v| **v != 0.0).count();
    Ok(RunResult { trace, sparsity })
}

fn full_iterations(entry: &SolverEntry, iterations: usize, n: usize) -> f64 {
    match entry.method {
        Method::Rcd => iterations as f64 / n as f64,
        Method::Ihta => iterations as f64,
    }
}

pub fn solve(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let problem = cfg.problem()?;
    let entry = match cfg.config.solvers.as_slice() {
        [] => SolverEntry::defaults().swap_remove(1),
        [one] => one.clone(),
        _ => return Err(CliError::Config("`solve` runs a single solver; list at most one [[solvers]]".into())),
    };
    let n = problem.dim();
    let x0 = cfg.start(n, 0)?;
    let seed = config::solver_seed(cfg.config.seed, 0, 0);
    let run = run_solver(&problem, &entry, x0, seed, true)?;
    let t = &run.trace;
    let dir = ctx.output(cfg.sha256.clone(), vec![("solver".into(), entry.label())])?;

    let mut solution = Table::new(["coordinate", "x"]);
    for (j, v) in t.final_x.iter().enumerate() {
        solution.push(vec![j.to_string(), num(*v)]);
    }
    dir.write("solution.csv", &solution)?;

    let mut trace = Table::new(["k", "block", "F", "step_norm", "support_changed"]);
    for r in &t.records {
        trace.push(vec![
            r.k.to_string(),
            r.block.map(|b| b.to_string()).unwrap_or_default(),
            num(r.objective),
            num(r.step_norm),
            u8::from(r.support_changed).to_string(),
        ]);
    }
    dir.write("trace.csv", &trace)?;

    let mut changes = Table::new(["k", "support"]);
    for (k, s) in &t.support_history {
        changes.push(vec![k.to_string(), join(s)]);
    }
    dir.write("supports.csv", &changes)?;

    let support = problem.support_of(&t.final_x);
    let grad = problem.smooth().full_grad(&t.final_x);
    let grad_support = support.iter().map(|&j| grad[j] * grad[j]).sum::<f64>().sqrt();
    let mut summary = Table::new([
        "solver",
        "F",
        "f",
        "sparsity",
        "iterations",
        "full_iterations",
        "support_changes",
        "delta_bound",
        "converged",
        "grad_norm_on_support",
    ]);
    summary.push(vec![
        entry.label(),
        num(t.final_objective),
        num(problem.f(&t.final_x)?),
        run.sparsity.to_string(),
        t.iterations.to_string(),
        num(full_iterations(&entry, t.iterations, n)),
        t.kappa.to_string(),
        t.delta_bound.map(num).unwrap_or_default(),
        t.converged.to_string(),
        num(grad_support),
    ]);
    dir.write("summary.csv", &summary)?;
    print_header(out, &dir)?;
    write_out(out, &summary.render())
}

fn join(s: &[usize]) -> String {
    s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ")
}

/// Problem, config hash and extra header fields.
type Instance = (L0Problem, String, Vec<(String, String)>);

fn example2_problem(ctx: &Context) -> Result<Instance, CliError> {
    let section = ctx.config.as_ref().map(|c| c.config.enumerate.clone()).unwrap_or_default();
    let convention = match section.convention {
        ConventionName::Powers0 => ExponentConvention::Powers0,
        ConventionName::Powers1 => ExponentConvention::Powers1,
    };
    let scaling = match section.scaling {
        ScalingName::Half => Scaling::Half,
        ScalingName::Full => Scaling::Full,
    };
    let problem = analysis::build_example2_instance(convention, scaling)?;
    let tag = format!("builtin:example2:{convention:?}:{scaling:?}");
    let sha = match &ctx.config {
        Some(c) => c.sha256.clone(),
        None => crate::io::sha256_hex(tag.as_bytes()),
    };
    let extra = vec![
        ("instance".into(), "example2".into()),
        ("convention".into(), format!("{convention:?}")),
        ("scaling".into(), format!("{scaling:?}")),
    ];
    Ok((problem, sha, extra))
}

fn enumeration_classes(ctx: &Context, problem: &L0Problem) -> Vec<ClassSpec> {
    let entries = ctx.config.as_ref().and_then(|c| c.config.enumerate.classes.clone());
    match entries {
        Some(list) => list.iter().map(|c| c.to_class(problem.partition())).collect(),
        None => analysis::example2_classes(problem),
    }
}

pub fn enumerate(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let (problem, sha, extra) = if ctx.example2 {
        example2_problem(ctx)?
    } else {
        let cfg = ctx.config()?;
        (cfg.problem()?, cfg.sha256.clone(), vec![])
    };
    let classes = enumeration_classes(ctx, &problem);
    let catalog = analysis::enumerate_catalog(&problem, &classes)?;
    let violations = analysis::verify_inclusions(&problem, &catalog);
    let dir = ctx.output(sha, extra)?;

    dir.write("catalog.csv", &catalog_table(&catalog))?;
    let counts = counts_table(&catalog);
    dir.write("counts.csv", &counts)?;

    let mut vt = Table::new(["kind", "class", "other", "entry"]);
    for v in &violations {
        vt.push(match v {
            InclusionViolation::Class { smaller, larger, entry } => {
                vec!["inclusion".into(), smaller.clone(), larger.clone(), entry.to_string()]
            }
            InclusionViolation::NotBasic { class, entry } => {
                vec!["not_basic".into(), class.clone(), String::new(), entry.to_string()]
            }
            InclusionViolation::GlobalMissing { class } => {
                vec!["global_missing".into(), class.clone(), String::new(), String::new()]
            }
        });
    }
    dir.write("violations.csv", &vt)?;

    print_header(out, &dir)?;
    let mut all = vec![catalog.basic_count()];
    all.extend(catalog.class_counts());
    let mut row = vec!["Number of local minima:".to_string()];
    row.extend(all.iter().map(|c| c.to_string()));
    let mut headers = vec![String::new(), "T_f".to_string()];
    headers.extend(classes.iter().map(|c| c.label.clone()));
    let mut shown = Table::new(headers);
    shown.push(row);
    write_out(out, &shown.render())?;
    write_out(
        out,
        &format!(
            "Number of local minima: {}\n",
            all.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
        ),
    )?;
    let g = catalog.global();
    write_out(out, &format!("global minimizer: support {{{}}}, F = {}\n", join(&g.support), num(g.objective)))?;
    if violations.is_empty() {
        write_out(out, "inclusions: ok\n")?;
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{} inclusion violations (see violations.csv)", violations.len())))
    }
}

fn catalog_table(catalog: &MinimaCatalog) -> Table {
    let n = catalog.entries.first().map_or(0, |e| e.point.len());
    let mut headers = vec!["support".to_string(), "F".to_string(), "basic".to_string(), "global".to_string()];
    headers.extend(catalog.classes.iter().map(|c| c.label.clone()));
    headers.extend((0..n).map(|j| format!("x{j}")));
    let mut t = Table::new(headers);
    for (k, e) in catalog.entries.iter().enumerate() {
        let mut row = vec![
            join(&e.support),
            num(e.objective),
            u8::from(e.basic).to_string(),
            u8::from(k == catalog.global_min).to_string(),
        ];
        row.extend(e.flags.iter().map(|f| u8::from(*f).to_string()));
        row.extend(e.point.iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}

fn counts_table(catalog: &MinimaCatalog) -> Table {
    let mut t = Table::new(["class", "count"]);
    t.push(vec!["T_f".into(), catalog.basic_count().to_string()]);
    for (c, class) in catalog.classes.iter().enumerate() {
        t.push(vec![class.label.clone(), catalog.class_count(c).to_string()]);
    }
    t
}

/// Runs every solver from every start; results indexed `[trial][solver]`.
fn run_trials(
    cfg: &LoadedConfig,
    problem: &L0Problem,
    entries: &[SolverEntry],
) -> Result<Vec<Vec<RunResult>>, CliError> {
    let trials = cfg.config.experiment.trials;
    if trials == 0 {
        return Err(CliError::Config("`experiment.trials` must be >= 1".into()));
    }
    let master = cfg.config.seed;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let x0 = cfg.start(problem.dim(), t)?;
            entries
                .iter()
                .enumerate()
                .map(|(s, e)| run_solver(problem, e, x0.clone(), config::solver_seed(master, t, s), false))
                .collect()
        })
        .collect()
}

pub fn tournament(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let oracle = cfg.oracle()?;
    let entries = cfg.solvers();
    let exp = &cfg.config.experiment;
    let lambdas = match &exp.lambdas {
        Some(l) if !l.is_empty() => l.clone(),
        _ => return Err(CliError::Config("`tournament` needs `experiment.lambdas`".into())),
    };
    if let Some(r) = &exp.reference_objective {
        if r.len() != lambdas.len() {
            return Err(CliError::Config("`reference_objective` must have one value per lambda".into()));
        }
    }
    let mut headers = vec!["lambda".to_string(), "F_star".to_string()];
    headers.extend(entries.iter().map(SolverEntry::label));
    let mut table = Table::new(headers);
    for (k, &lambda) in lambdas.iter().enumerate() {
        let problem = cfg.problem_with(Arc::clone(&oracle), Some(lambda))?;
        let f_star = match &exp.reference_objective {
            Some(r) => r[k],
            None => analysis::enumerate_catalog(&problem, &[])?.global().objective,
        };
        let runs = run_trials(cfg, &problem, &entries)?;
        let tol = exp.success_tol * (1.0 + f_star.abs());
        let mut row = vec![num(lambda), num(f_star)];
        for s in 0..entries.len() {
            let wins = runs
                .iter()
                .filter(|r| (r[s].trace.final_objective - f_star).abs() <= tol)
                .count();
            row.push(wins.to_string());
        }
        table.push(row);
    }
    let dir = ctx.output(cfg.sha256.clone(), vec![("trials".into(), exp.trials.to_string())])?;
    dir.write("tournament.csv", &table)?;
    print_header(out, &dir)?;
    write_out(out, &table.render())
}

pub fn benchmark(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let problem = cfg.problem()?;
    let entries = cfg.solvers();
    let n = problem.dim();
    let runs = run_trials(cfg, &problem, &entries)?;

    let mut all = Table::new(["trial", "solver", "F", "sparsity", "iterations", "full_iterations", "support_changes"]);
    for (t, per_solver) in runs.iter().enumerate() {
        for (e, r) in entries.iter().zip(per_solver) {
            all.push(vec![
                t.to_string(),
                e.label(),
                num(r.trace.final_objective),
                r.sparsity.to_string(),
                r.trace.iterations.to_string(),
                num(full_iterations(e, r.trace.iterations, n)),
                r.trace.kappa.to_string(),
            ]);
        }
    }
    let mut best = Table::new(["solver", "F_star", "sparsity", "iterations", "full_iterations"]);
    for (s, e) in entries.iter().enumerate() {
        let b = runs
            .iter()
            .map(|r| &r[s])
            .min_by(|a, b| a.trace.final_objective.total_cmp(&b.trace.final_objective))
            .expect("trials >= 1");
        best.push(vec![
            e.label(),
            num(b.trace.final_objective),
            b.sparsity.to_string(),
            b.trace.iterations.to_string(),
            num(full_iterations(e, b.trace.iterations, n)),
        ]);
    }
    let dir = ctx.output(cfg.sha256.clone(), vec![("trials".into(), cfg.config.experiment.trials.to_string())])?;
    dir.write("benchmark_runs.csv", &all)?;
    dir.write("benchmark.csv", &best)?;
    print_header(out, &dir)?;
    write_out(out, &best.render())
}

/// Worst relative central-difference gradient error over random points.
pub fn gradient_error(oracle: &dyn SmoothOracle, rng: &mut SolverRng, points: usize, step: f64) -> Result<f64, Error> {
    let n = oracle.dim();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = oracle.full_grad(&x);
        let scale = 1.0f64.max(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for j in 0..n {
            let h = step * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (objectives::eval(oracle, &xp)? - objectives::eval(oracle, &xm)?) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / scale);
        }
    }
    Ok(worst)
}

/// Largest relative deviation between an incrementally updated cache and a
/// recomputed one after `updates` random block changes.
pub fn cache_drift(problem: &L0Problem, rng: &mut SolverRng, updates: usize) -> f64 {
    let oracle = problem.smooth();
    let p = problem.partition();
    let mut x: Vec<f64> = (0..p.dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut cache = oracle.init_cache(&x);
    let mut worst = 0.0f64;
    for _ in 0..updates {
        let i = rng.index(p.num_blocks());
        let r = p.range(i);
        let old = x[r.clone()].to_vec();
        let new: Vec<f64> = old
            .iter()
            .map(|_| if rng.bernoulli(0.3) { 0.0 } else { rng.uniform(-1.0, 1.0) })
            .collect();
        oracle.update_cache(&mut cache, r.clone(), &old, &new);
        x[r].copy_from_slice(&new);
        let fresh = oracle.init_cache(&x);
        let scale = 1.0 + fresh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = fresh.iter().zip(&cache).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(dev / scale);
    }
    worst
}

pub fn gradcheck(ctx: &Context, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ctx.config()?;
    let problem = cfg.problem()?;
    let gc = &cfg.config.gradcheck;
    let mut rng = SolverRng::seed_from(cfg.config.seed);
    let grad_err = gradient_error(problem.smooth(), &mut rng, gc.points, gc.fd_step)?;
    let drift = cache_drift(&problem, &mut rng, gc.updates);

    let mut table = Table::new(["check", "value", "tolerance", "pass"]);
    let mut failures = Vec::new();
    let mut add = |name: String, value: f64, tol: f64, detail: Option<String>| {
        let pass = value <= tol && detail.is_none();
        table.push(vec![name.clone(), num(value), num(tol), pass.to_string()]);
        if !pass {
            failures.push(detail.unwrap_or_else(|| format!("{name}: {value:e} > {tol:e}")));
        }
    };
    add("gradient_rel_error".into(), grad_err, gc.grad_tol, None);
    add("cache_drift".into(), drift, gc.cache_tol, None);

    let n = problem.dim();
    for (s, mut entry) in cfg.solvers().into_iter().enumerate() {
        if entry.approx == Some(config::ApproxName::Ue) && !problem.partition().is_scalar() {
            continue;
        }
        entry.max_iters = gc.descent_iters;
        entry.fixed_iters = true;
        let x0 = cfg.start(n, s as u64)?;
        let name = format!("descent:{}", entry.label());
        match run_solver(&problem, &entry, x0, config::solver_seed(cfg.config.seed, 0, s), false) {
            Ok(_) => add(name, 0.0, 0.0, None),
            Err(CliError::Core(e @ Error::DescentViolation { .. })) => {
                let excess = match &e {
                    Error::DescentViolation {
                        before, after, required, ..
                    } => after - (before - required),
                    _ => unreachable!(),
                };
                add(name.clone(), excess, 0.0, Some(format!("{name}: {e}")));
            }
            Err(e) => return Err(e),
        }
    }
    let dir = ctx.output(cfg.sha256.clone(), vec![])?;
    dir.write("gradcheck.csv", &table)?;
    print_header(out, &dir)?;
    write_out(out, &table.render())?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failures.join("; ")))
    }
}
