//! Randomized invariants over grid shapes, partitions and step sizes.

use proptest::prelude::*;
use stokes_core::{
    apply_divergence, apply_gradient, dd_backward_sweep, dd_forward_sweep, dd_pressure_substeps, pressure_projection,
    viscous_step_monolithic, GridSpec, Lcg64, Partition, SolveConfig, ViscousOperator,
};

fn grid() -> impl Strategy<Value = GridSpec> {
    (2usize..20, 2usize..20, 0.3f64..3.0, 0.3f64..3.0)
        .prop_map(|(n1, n2, l1, l2)| GridSpec::new(l1, l2, n1, n2).unwrap())
}

/// `(grid, m, overlap)` with `n1 / m > overlap`.
fn strips() -> impl Strategy<Value = (GridSpec, usize, usize)> {
    (1usize..5, 0usize..5, 4usize..12, 2usize..12).prop_flat_map(|(m, overlap, extra, n2)| {
        let n1 = m * (overlap + 1) + extra;
        (Just(GridSpec::new(1.0, 1.0, n1, n2).unwrap()), Just(m), Just(overlap))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_is_adjoint_to_negative_divergence(g in grid(), seed in any::<u64>()) {
        let mut rng = Lcg64::new(seed);
        let p = rng.pressure(&g);
        let u = rng.velocity(&g);
        let lhs = apply_gradient(&p).dot(&u).unwrap();
        let rhs = p.dot(&apply_divergence(&u)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13 * p.norm() * u.norm());
    }

    #[test]
    fn partition_normalizes_and_recomposes((g, m, overlap) in strips(), seed in any::<u64>()) {
        let p = Partition::strips(&g, m, overlap).unwrap();
        prop_assert!(p.normalization_defect() <= 1e-14);
        let u = Lcg64::new(seed).velocity(&g);
        let back = p.recompose(&p.decompose(&u).unwrap()).unwrap();
        prop_assert!(back.sub(&u).unwrap().max_abs() <= 1e-14 * u.max_abs());
        // Σ ‖χ_α u‖² = ‖u‖²
        let parts = p.decompose(&u).unwrap();
        prop_assert!((parts.norm() - u.norm()).abs() <= 1e-12 * u.norm());
    }

    #[test]
    fn monolithic_stages_do_not_increase_energy(g in grid(), seed in any::<u64>(), log_tau in -3.0f64..1.0) {
        let tau = 10f64.powf(log_tau);
        let solver = SolveConfig::default();
        let a = ViscousOperator::new(&g, 0.7).unwrap();
        let u = Lcg64::new(seed).velocity(&g);
        let zero = u.scaled(0.0);
        let (half, _) = viscous_step_monolithic(&u, &zero, tau, &a, &solver).unwrap();
        prop_assert!(half.norm() <= u.norm() * (1.0 + 1e-10));
        let proj = pressure_projection(&half, tau, &solver).unwrap();
        prop_assert!(proj.velocity.norm() <= half.norm() * (1.0 + 1e-10));
        // projecting twice changes nothing
        let again = pressure_projection(&proj.velocity, tau, &solver).unwrap();
        prop_assert!(again.velocity.sub(&proj.velocity).unwrap().norm() <= 1e-8 * half.norm());
    }

    #[test]
    fn decomposed_stages_obey_their_bounds(
        (g, m, overlap) in strips(),
        seed in any::<u64>(),
        log_tau in -3.0f64..1.0,
        forced in any::<bool>(),
    ) {
        let tau = 10f64.powf(log_tau);
        let solver = SolveConfig::default();
        let a = ViscousOperator::new(&g, 1.0).unwrap();
        let p = Partition::strips(&g, m, overlap).unwrap();
        let mut rng = Lcg64::new(seed);
        let u = p.decompose(&rng.velocity(&g)).unwrap();
        let f = rng.velocity(&g).scaled(if forced { 3.0 } else { 0.0 });
        let f = p.decompose(&f).unwrap();
        let (quarter, _) = dd_forward_sweep(&u, &f, tau, &a, &p, &solver).unwrap();
        let bound = tau.exp() * u.norm().powi(2) + tau * f.norm().powi(2);
        prop_assert!(quarter.norm().powi(2) <= bound * (1.0 + 1e-10));
        let (half, _) = dd_backward_sweep(&quarter, tau, &a, &p, &solver).unwrap();
        prop_assert!(half.norm() <= quarter.norm() * (1.0 + 1e-10) + 1e-12);
        let sub = dd_pressure_substeps(&half, tau, &p, &solver).unwrap();
        for alpha in 0..m {
            prop_assert!(sub.velocity.component(alpha).norm() <= half.component(alpha).norm() * (1.0 + 1e-10) + 1e-14);
            let (after, before) = sub.divergence[alpha];
            prop_assert!(after <= 1e2 * (solver.rel_tol * before).max(tau * solver.abs_tol));
        }
        if !forced {
            prop_assert!(sub.velocity.norm() <= u.norm() * (1.0 + 1e-10));
        }
    }
}
