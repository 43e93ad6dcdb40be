use std::sync::Arc;

use proptest::prelude::*;

use l0rcd::analysis::{self, ClassSpec};
use l0rcd::instances::{self, StartSpec};
use l0rcd::objectives::SmoothOracle;
use l0rcd::solvers::{self, SolverConfig, StopRule};
use l0rcd::{ApproxSpec, IterateState, L0Problem, SolverRng};

fn instance(seed: u64, logistic: bool, n: usize, lambda: f64) -> L0Problem {
    let mut rng = SolverRng::seed_from(seed);
    let oracle: Arc<dyn SmoothOracle> = if logistic {
        Arc::new(instances::random_logistic(&mut rng, 2 * n, n, 0.2).unwrap().0)
    } else {
        Arc::new(instances::random_least_squares(&mut rng, n + 3, n).unwrap())
    };
    L0Problem::scalar_uniform(oracle, lambda).unwrap()
}

fn start(seed: u64, n: usize) -> Vec<f64> {
    instances::random_sparse(&mut SolverRng::seed_from(seed ^ 0xabc), n, &StartSpec::default())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_never_increases(seed in 0u64..1000, logistic in any::<bool>(), n in 3usize..15, lambda in 0.0f64..0.5, exact in any::<bool>()) {
        let p = instance(seed, logistic, n, lambda);
        let spec = if exact { ApproxSpec::exact(p.partition(), 1e-4) } else { ApproxSpec::separable_scaled(p.partition(), 1.2) };
        let mut cfg = SolverConfig::new(spec, seed);
        cfg.max_iters = 300;
        cfg.stop = StopRule::MaxIters;
        let (_, t) = solvers::run_rcd_iht(&p, start(seed, n), &cfg).unwrap();
        for w in t.records.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-12 * (1.0 + w[0].objective.abs()));
        }
        prop_assert!(t.final_objective <= t.initial_objective);
    }

    #[test]
    fn nonzeros_keep_their_magnitude(seed in 0u64..1000, n in 3usize..12, lambda in 0.01f64..1.0) {
        let p = instance(seed, false, n, lambda);
        let spec = ApproxSpec::separable_scaled(p.partition(), 1.3);
        let mut state = IterateState::new(&p, start(seed, n)).unwrap();
        let mut rng = SolverRng::seed_from(seed);
        let mut touched = vec![false; n];
        for k in 0..200 {
            let i = rng.index(n);
            solvers::rcd_iht_step(&p, &mut state, i, &spec, k).unwrap();
            touched[i] = true;
            for j in (0..n).filter(|&j| touched[j] && state.x()[j] != 0.0) {
                let bound = 2.0 * lambda / spec.curvature(p.partition(), j);
                prop_assert!(state.x()[j] * state.x()[j] >= bound - 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_trace(seed in 0u64..1000, logistic in any::<bool>()) {
        let p = instance(seed, logistic, 6, 0.05);
        let cfg = SolverConfig::new(ApproxSpec::exact(p.partition(), 1e-4), seed);
        let a = solvers::run_rcd_iht(&p, start(seed, 6), &cfg).unwrap().1;
        let b = solvers::run_rcd_iht(&p, start(seed, 6), &cfg).unwrap().1;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cached_state_matches_recomputation(seed in 0u64..1000, logistic in any::<bool>()) {
        let p = instance(seed, logistic, 8, 0.05);
        let spec = ApproxSpec::separable_scaled(p.partition(), 1.1);
        let mut state = IterateState::new(&p, start(seed, 8)).unwrap();
        let mut rng = SolverRng::seed_from(seed);
        for k in 0..500 {
            solvers::rcd_iht_step(&p, &mut state, rng.index(8), &spec, k).unwrap();
        }
        prop_assert!(state.check_consistency(&p, 1e-8).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn limits_are_flagged_catalog_entries(seed in 0u64..1000, logistic in any::<bool>(), n in 4usize..9) {
        let lambda = if logistic { 0.01 } else { 0.05 };
        let p = instance(seed, logistic, n, lambda);
        let uq = ApproxSpec::separable_scaled(p.partition(), 1.4);
        let ue = ApproxSpec::exact(p.partition(), 1e-4);
        let cat = analysis::enumerate_catalog(&p, &[ClassSpec::new("uq", uq.clone()), ClassSpec::new("ue", ue.clone())]).unwrap();
        for (c, spec) in [uq, ue].into_iter().enumerate() {
            let mut cfg = SolverConfig::new(spec.clone(), seed + c as u64);
            cfg.record_trace = false;
            let (_, t) = solvers::run_rcd_iht(&p, start(seed, n), &cfg).unwrap();
            prop_assert!(t.converged);
            prop_assert!(solvers::fixed_point_residual(&p, &spec, &t.final_x).unwrap() < 1e-8);
            let (_, d) = cat.nearest_member(c, &t.final_x).unwrap();
            prop_assert!(d <= 1e-6, "distance {}", d);
        }
    }

    #[test]
    fn strong_classes_grow_with_curvature(seed in 0u64..1000, n in 4usize..9, lambda in 0.01f64..0.5) {
        let p = instance(seed, false, n, lambda);
        let factors = [1.0, 1.3, 2.0, 4.0];
        let classes: Vec<ClassSpec> = factors
            .iter()
            .map(|f| ClassSpec::new(format!("{f}"), ApproxSpec::separable_scaled(p.partition(), *f)))
            .collect();
        let cat = analysis::enumerate_catalog(&p, &classes).unwrap();
        for e in &cat.entries {
            for w in e.flags.windows(2) {
                prop_assert!(!w[0] || w[1]);
            }
            prop_assert!(!e.flags.iter().any(|f| *f) || analysis::is_basic_local_min(&p, &e.point, 1e-8).unwrap());
        }
        let mut supports: Vec<&Vec<usize>> = cat.entries.iter().map(|e| &e.support).collect();
        supports.dedup();
        prop_assert_eq!(supports.len(), 1 << n);
        prop_assert!(analysis::verify_inclusions(&p, &cat).is_empty());
        prop_assert!(cat.global().flags.iter().all(|f| *f));
    }
}

#[test]
fn ihta_limit_is_a_strong_minimizer_for_its_constant() {
    let p = instance(17, false, 7, 0.05);
    let m_f = 1.5 * p.partition().global_lipschitz();
    let cat = analysis::enumerate_catalog(&p, &[ClassSpec::new("ihta", ApproxSpec::separable_uniform(p.partition(), m_f))]).unwrap();
    let (_, t) = solvers::run_ihta(&p, start(17, 7), m_f, 100_000, StopRule::default(), false).unwrap();
    assert!(t.converged);
    let (_, d) = cat.nearest_member(0, &t.final_x).unwrap();
    assert!(d <= 1e-6);
}
