use std::sync::Arc;

use stokes_core::{
    run, spatial_study, GridSpec, Lcg64, ManufacturedCase, NoForcing, SchemeConfig, SchemeKind, SolveConfig,
};

#[test]
fn monolithic_spatial_order_is_at_least_first() {
    let rows = spatial_study(
        &[16, 32, 64],
        1.0,
        0.5,
        1.0 / 1000.0,
        |_| SchemeKind::Monolithic,
        SolveConfig::default(),
    )
    .unwrap();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    for order in stokes_core::observed_orders(&hs, &errs) {
        assert!((0.8..=2.2).contains(&order), "order {order}, errors {errs:?}");
    }
}

#[test]
fn decomposed_huge_step_long_run_stays_bounded() {
    let g = GridSpec::new(1.0, 1.5, 12, 10).unwrap();
    let cfg = SchemeConfig::new(g, 1.0, 1000.0, 1.0, SchemeKind::Decomposed { m: 3, overlap: 1 })
        .with_initial(Lcg64::new(77).velocity(&g))
        .with_forcing(Arc::new(NoForcing));
    let out = run(&cfg).unwrap();
    assert_eq!(out.reports.len(), 1000);
    for r in &out.reports {
        assert!(r.norm_end.is_finite());
        assert!(r.norm_end <= r.norm_state * (1.0 + 1e-10));
    }
}

#[test]
fn one_step_of_nothing_is_nothing() {
    let g = GridSpec::unit_square(6).unwrap();
    for kind in [SchemeKind::Monolithic, SchemeKind::Decomposed { m: 2, overlap: 1 }] {
        let out = run(&SchemeConfig::new(g, 0.3, 0.3, 1.0, kind)).unwrap();
        assert_eq!(out.steps, 1);
        assert_eq!(out.final_velocity.max_abs(), 0.0);
        assert_eq!(out.final_state.norm(), 0.0);
    }
}

#[test]
fn manufactured_run_error_shrinks_with_refinement() {
    // joint h and τ refinement for the monolithic scheme
    let mut prev = f64::INFINITY;
    for (n, tau) in [(8, 0.1), (16, 0.05), (32, 0.025)] {
        let g = GridSpec::unit_square(n).unwrap();
        let case = ManufacturedCase::new(&g, 1.0);
        let cfg = SchemeConfig::new(g, tau, 0.5, 1.0, SchemeKind::Monolithic)
            .with_initial(case.exact_velocity(&g, 0.0))
            .with_forcing(Arc::new(case));
        let out = run(&cfg).unwrap();
        let err = out.final_velocity.sub(&case.exact_velocity(&g, 0.5)).unwrap().norm();
        assert!(err < 0.7 * prev, "n = {n}: {err} vs {prev}");
        prev = err;
    }
}
