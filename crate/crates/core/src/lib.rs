//! Matrix-free solver for the unsteady Stokes equations on a rectangle, in
//! primitive variables, with regionally-additive domain decomposition.
//!
//! The crate provides the collocated grid discretization ([`grid`],
//! [`operators`]), square-root partitions of unity over overlapping strips
//! ([`partition`]), conjugate gradients ([`linsolve`]), the monolithic and
//! decomposed time-stepping schemes ([`schemes`]), and verification tooling
//! ([`verify`], [`dense`]).

pub mod dense;
pub mod error;
pub mod grid;
pub mod linsolve;
pub mod operators;
pub mod partition;
pub mod rng;
pub mod schemes;
pub mod verify;

pub use error::{Result, StokesError};
pub use grid::{
    deflate_pressure, dot_decomposed, dot_velocity, norm_decomposed, norm_velocity, pressure_mean, DecomposedVelocity,
    GridSpec, PressureField, VelocityField,
};
pub use linsolve::{cg_solve, KrylovVector, SolveConfig, SolveReport};
pub use operators::{
    apply_block, apply_block_operator, apply_divergence, apply_gradient, apply_mask, apply_viscous,
    spectral_lower_bound, BlockPart, ImplicitOperator, MaskOperator, ViscousOperator,
};
pub use partition::{build_strips, decompose, recompose, Partition};
pub use rng::Lcg64;
pub use schemes::{
    dd_backward_sweep, dd_forward_sweep, dd_pressure_substeps, pressure_projection, run, step_decomposed,
    viscous_step_monolithic, Forcing, NoForcing, RunAborted, RunOutput, SchemeConfig, SchemeKind, SchemeState,
    SteadyForcing, StepReport, Stepper,
};
pub use verify::{
    check_stability, error_norm, manufactured, manufactured_run, observed_orders, oracle_step, quick_suite,
    spatial_study, stability_mode, temporal_study, CheckOutcome, ManufacturedCase, SpatialRow, StabilityCheck,
    StabilityMode, TemporalRow, TemporalStudy,
};
