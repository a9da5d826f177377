//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use stokes_core::{GridSpec, Lcg64, ManufacturedCase, SchemeConfig, SchemeKind, SchemeState, Stepper, VelocityField};

/// Random interior velocity on an `n × n` unit square.
pub fn random_velocity(n: usize, seed: u64) -> VelocityField {
    let g = GridSpec::unit_square(n).expect("valid grid");
    Lcg64::new(seed).velocity(&g)
}

/// Stepper and a starting state for the manufactured case.
pub fn step_fixture(n: usize, tau: f64, kind: SchemeKind) -> (SchemeConfig, Stepper, SchemeState) {
    let g = GridSpec::unit_square(n).expect("valid grid");
    let case = ManufacturedCase::new(&g, 1.0);
    let cfg = SchemeConfig::new(g, tau, 1.0, 1.0, kind)
        .with_initial(case.exact_velocity(&g, 0.0))
        .with_forcing(Arc::new(case));
    let stepper = Stepper::new(&cfg).expect("valid config");
    let state = stepper.initial_state(&cfg.initial).expect("matching grid");
    (cfg, stepper, state)
}
