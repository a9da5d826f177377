//! Time stepping.
//!
//! Two schemes advance `du/dt + A u + B p = f`, `B* u = 0`:
//!
//! * **Monolithic** pressure correction: an implicit viscous stage
//!   `(E + τA) u^{n+1/2} = u^n + τ f^{n+1/2}`, then a projection that solves
//!   `B*B p = B* u^{n+1/2} / τ` and sets `u^{n+1} = u^{n+1/2} - τ B p`.
//! * **Decomposed** (regionally additive): the state is `U = {u_α}` in `H^m`
//!   with `u_α = χ_α u`. The viscous stage is the triangular splitting
//!   `(E + τ𝔸₁) U^{n+1/4} = U^n + τF`, `(E + τ𝔸₂) U^{n+1/2} = U^{n+1/4}`,
//!   carried out as a forward and a backward sweep of per-subdomain solves
//!   with `D_α = E + (τ/2) χ_α A χ_α`. The pressure stage projects each
//!   component in turn onto `ker B_α*`, `B_α* = B* χ_α`.
//!
//! Every subdomain sweep is strictly ordered: component `α` consumes the
//! already updated components on one side of it.

use std::sync::Arc;

use crate::error::{Result, StokesError};
use crate::grid::{DecomposedVelocity, GridSpec, PressureField, VelocityField};
use crate::linsolve::{cg_solve, SolveConfig, SolveReport};
use crate::operators::{apply_divergence, divergence_into, gradient_into, ImplicitOperator, ViscousOperator};
use crate::partition::Partition;

/// Source term `f(x, t)` sampled on a grid.
pub trait Forcing: Send + Sync {
    fn sample(&self, grid: &GridSpec, t: f64) -> VelocityField;

    /// Lets the time loop skip sampling for unforced runs.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoForcing;

impl Forcing for NoForcing {
    fn sample(&self, grid: &GridSpec, _t: f64) -> VelocityField {
        VelocityField::zeros(grid)
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// Time-independent forcing.
#[derive(Debug, Clone)]
pub struct SteadyForcing(pub VelocityField);

impl Forcing for SteadyForcing {
    fn sample(&self, grid: &GridSpec, _t: f64) -> VelocityField {
        debug_assert_eq!(grid, self.0.grid());
        self.0.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Monolithic,
    Decomposed { m: usize, overlap: usize },
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Monolithic => "monolithic",
            SchemeKind::Decomposed { .. } => "decomposed",
        }
    }
}

#[derive(Clone)]
pub struct SchemeConfig {
    pub grid: GridSpec,
    /// Requested step; the effective step is `t_final / round(t_final / tau)`.
    pub tau: f64,
    pub t_final: f64,
    pub nu: f64,
    pub kind: SchemeKind,
    pub solver: SolveConfig,
    pub forcing: Arc<dyn Forcing>,
    pub initial: VelocityField,
    /// Record a snapshot every this many steps; `0` keeps only the final one.
    pub snapshot_every: usize,
}

impl std::fmt::Debug for SchemeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SchemeConfig")
            .field("grid", &self.grid)
            .field("tau", &self.tau)
            .field("t_final", &self.t_final)
            .field("nu", &self.nu)
            .field("kind", &self.kind)
            .field("solver", &self.solver)
            .field("snapshot_every", &self.snapshot_every)
            .finish_non_exhaustive()
    }
}

impl SchemeConfig {
    pub fn new(grid: GridSpec, tau: f64, t_final: f64, nu: f64, kind: SchemeKind) -> Self {
        Self {
            initial: VelocityField::zeros(&grid),
            grid,
            tau,
            t_final,
            nu,
            kind,
            solver: SolveConfig::default(),
            forcing: Arc::new(NoForcing),
            snapshot_every: 0,
        }
    }

    pub fn with_initial(mut self, v: VelocityField) -> Self {
        self.initial = v;
        self
    }

    pub fn with_forcing(mut self, f: Arc<dyn Forcing>) -> Self {
        self.forcing = f;
        self
    }

    pub fn with_solver(mut self, s: SolveConfig) -> Self {
        self.solver = s;
        self
    }

    /// Step count `N = round(T / τ)` and the adjusted step `T / N`.
    pub fn time_steps(&self) -> Result<(usize, f64)> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(StokesError::InvalidConfig(format!(
                "time step must be positive (got {})",
                self.tau
            )));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.tau) {
            return Err(StokesError::InvalidConfig(format!(
                "final time {} must be at least the time step {}",
                self.t_final, self.tau
            )));
        }
        let n = (self.t_final / self.tau).round().max(1.0) as usize;
        Ok((n, self.t_final / n as f64))
    }

    pub fn validate(&self) -> Result<()> {
        self.time_steps()?;
        self.solver.validate()?;
        self.grid.ensure_same(self.initial.grid())?;
        if !self.initial.is_finite() {
            return Err(StokesError::InvalidConfig("initial velocity is not finite".into()));
        }
        ViscousOperator::new(&self.grid, self.nu)?;
        if let SchemeKind::Decomposed { m, overlap } = self.kind {
            Partition::strips(&self.grid, m, overlap)?;
        }
        Ok(())
    }
}

/// Diagnostics of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Index of the new time level, `n + 1`.
    pub step: usize,
    /// `t^{n+1}`.
    pub t: f64,
    /// `‖u^n‖` (monolithic) or `‖U^n‖_m` (decomposed).
    pub norm_state: f64,
    /// `‖U^{n+1/4}‖_m`; absent for the monolithic scheme.
    pub norm_quarter: Option<f64>,
    pub norm_half: f64,
    pub norm_end: f64,
    /// `‖f^{n+1/2}‖` or `‖F^{n+1/2}‖_m`.
    pub forcing_norm: f64,
    /// Divergence left after projection: `‖B* u^{n+1}‖`, or the root sum of
    /// squares of `‖B_α* u_α^{n+1}‖` over subdomains.
    pub div_residual: f64,
    /// The same quantity before projection, the scale of the residual.
    pub div_scale: f64,
    /// Per-subdomain `(‖B_α* u_α‖ after, before)`; empty when monolithic.
    pub substep_divergence: Vec<(f64, f64)>,
    pub cg_iterations: usize,
    /// Slack of the per-step energy bound; negative means violated.
    pub bound_margin: f64,
}

impl StepReport {
    fn all_finite(&self) -> bool {
        [
            self.norm_state,
            self.norm_half,
            self.norm_end,
            self.forcing_norm,
            self.div_residual,
            self.div_scale,
            self.bound_margin,
        ]
        .iter()
        .chain(self.norm_quarter.iter())
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SchemeState {
    Monolithic {
        velocity: VelocityField,
        pressure: PressureField,
    },
    Decomposed {
        parts: DecomposedVelocity,
        /// Substep pressures `p^{(α)}`.
        pressures: Vec<PressureField>,
    },
}

impl SchemeState {
    /// Velocity of the state: `u` itself, or `Σ_α χ_α u_α`.
    pub fn velocity(&self, partition: Option<&Partition>) -> Result<VelocityField> {
        match (self, partition) {
            (SchemeState::Monolithic { velocity, .. }, _) => Ok(velocity.clone()),
            (SchemeState::Decomposed { parts, .. }, Some(p)) => p.recompose(parts),
            (SchemeState::Decomposed { .. }, None) => Err(StokesError::InvalidConfig(
                "recomposing a decomposed state needs its partition".into(),
            )),
        }
    }

    /// Scheme norm: `‖u‖` or `‖U‖_m`.
    pub fn norm(&self) -> f64 {
        match self {
            SchemeState::Monolithic { velocity, .. } => velocity.norm(),
            SchemeState::Decomposed { parts, .. } => parts.norm(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            SchemeState::Monolithic { velocity, pressure } => velocity.is_finite() && pressure.is_finite(),
            SchemeState::Decomposed { parts, pressures } => {
                parts.is_finite() && pressures.iter().all(PressureField::is_finite)
            }
        }
    }
}

fn ensure_converged(rep: &SolveReport, context: &str) -> Result<()> {
    if rep.converged {
        Ok(())
    } else {
        Err(StokesError::NotConverged {
            context: context.into(),
            iterations: rep.iterations,
            residual: rep.final_residual,
        })
    }
}

/// Implicit viscous stage `(E + τA) u^{n+1/2} = u^n + τ f^{n+1/2}`.
pub fn viscous_step_monolithic(
    u_n: &VelocityField,
    f_half: &VelocityField,
    tau: f64,
    a: &ViscousOperator,
    solver: &SolveConfig,
) -> Result<(VelocityField, SolveReport)> {
    a.grid().ensure_same(u_n.grid())?;
    a.grid().ensure_same(f_half.grid())?;
    let mut rhs = u_n.clone();
    rhs.axpy_unchecked(tau, f_half);
    let apply = |x: &VelocityField, y: &mut VelocityField| {
        a.apply_into(x, y);
        y.scale(tau);
        y.axpy_unchecked(1.0, x);
    };
    let (u, rep) = cg_solve(
        apply,
        &rhs,
        crate::dense::velocity_dim(a.grid()),
        &solver.with_deflation(false),
    )?;
    ensure_converged(&rep, "viscous stage")?;
    Ok((u, rep))
}

/// Result of projecting a velocity onto the kernel of a (masked) divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub velocity: VelocityField,
    /// Zero-mean pressure.
    pub pressure: PressureField,
    pub divergence_before: f64,
    pub divergence_after: f64,
    pub report: SolveReport,
}

/// Solves `B_χ* B_χ p = B_χ* w / τ` and returns `w - τ B_χ p`, where
/// `B_χ = χ B` with `χ = E` when `mask` is `None`.
fn project(
    w: &VelocityField,
    tau: f64,
    mask: Option<&crate::operators::MaskOperator>,
    solver: &SolveConfig,
    context: &str,
) -> Result<Projection> {
    let g = *w.grid();
    let masked = |u: &VelocityField| match mask {
        Some(chi) => chi.apply(u),
        None => Ok(u.clone()),
    };
    let mut rhs = apply_divergence(&masked(w)?);
    let divergence_before = rhs.norm();
    rhs.scale(1.0 / tau);

    let mut grad = VelocityField::zeros(&g);
    let apply = |p: &PressureField, out: &mut PressureField| {
        gradient_into(p, &mut grad);
        if let Some(chi) = mask {
            // χ² B p
            chi.apply_in_place(&mut grad);
            chi.apply_in_place(&mut grad);
        }
        divergence_into(&grad, out);
    };
    let (mut p, report) = cg_solve(apply, &rhs, g.pressure_count(), &solver.with_deflation(true))?;
    ensure_converged(&report, context)?;
    p.deflate();

    let mut correction = VelocityField::zeros(&g);
    gradient_into(&p, &mut correction);
    if let Some(chi) = mask {
        chi.apply_in_place(&mut correction);
    }
    let mut velocity = w.clone();
    velocity.axpy_unchecked(-tau, &correction);
    let divergence_after = apply_divergence(&masked(&velocity)?).norm();
    Ok(Projection {
        velocity,
        pressure: p,
        divergence_before,
        divergence_after,
        report,
    })
}

/// Pressure stage: `B*B p = B* u_star / τ`, `u = u_star - τ B p`.
pub fn pressure_projection(u_star: &VelocityField, tau: f64, solver: &SolveConfig) -> Result<Projection> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(StokesError::InvalidConfig(format!(
            "time step must be positive (got {tau})"
        )));
    }
    project(u_star, tau, None, solver, "pressure projection")
}

fn check_decomposed(u: &DecomposedVelocity, a: &ViscousOperator, partition: &Partition) -> Result<()> {
    if u.m() != partition.m() {
        return Err(StokesError::Shape(format!(
            "partition has {} subdomains but the state has {} components",
            partition.m(),
            u.m()
        )));
    }
    a.grid().ensure_same(u.grid())?;
    partition.grid().ensure_same(u.grid())
}

/// Adds `-τ χ_α A χ_β u_β` into `rhs` for each `β` in `range`.
fn subtract_couplings(
    rhs: &mut VelocityField,
    alpha: usize,
    range: impl Iterator<Item = usize>,
    u: &DecomposedVelocity,
    a: &ViscousOperator,
    partition: &Partition,
    tau: f64,
) {
    let g = *u.grid();
    let mut acc = VelocityField::zeros(&g);
    let mut masked = VelocityField::zeros(&g);
    let mut tmp = VelocityField::zeros(&g);
    let mut any = false;
    for beta in range {
        partition.mask(beta).apply_into(u.component(beta), &mut masked);
        a.apply_into(&masked, &mut tmp);
        acc.axpy_unchecked(1.0, &tmp);
        any = true;
    }
    if any {
        partition.mask(alpha).apply_in_place(&mut acc);
        rhs.axpy_unchecked(-tau, &acc);
    }
}

fn solve_implicit(
    mask: &crate::operators::MaskOperator,
    a: &ViscousOperator,
    tau: f64,
    rhs: &VelocityField,
    solver: &SolveConfig,
    context: &str,
) -> Result<(VelocityField, SolveReport)> {
    let d = ImplicitOperator { mask, viscous: a, tau };
    let mut scratch = VelocityField::zeros(rhs.grid());
    let apply = |x: &VelocityField, y: &mut VelocityField| d.apply_into(x, &mut scratch, y);
    let (x, rep) = cg_solve(
        apply,
        rhs,
        crate::dense::velocity_dim(rhs.grid()),
        &solver.with_deflation(false),
    )?;
    ensure_converged(&rep, context)?;
    Ok((x, rep))
}

/// Forward sweep, `(E + τ𝔸₁) U^{n+1/4} = U^n + τ F^{n+1/2}`, solved for
/// `α = 1, …, m` with `D_α`. Returns the new state and the CG iteration total.
pub fn dd_forward_sweep(
    u_n: &DecomposedVelocity,
    f_half: &DecomposedVelocity,
    tau: f64,
    a: &ViscousOperator,
    partition: &Partition,
    solver: &SolveConfig,
) -> Result<(DecomposedVelocity, usize)> {
    check_decomposed(u_n, a, partition)?;
    u_n.ensure_compatible(f_half)?;
    let mut out = u_n.clone();
    let mut iterations = 0;
    for alpha in 0..partition.m() {
        let mut rhs = u_n.component(alpha).clone();
        rhs.axpy_unchecked(tau, f_half.component(alpha));
        subtract_couplings(&mut rhs, alpha, 0..alpha, &out, a, partition, tau);
        let (x, rep) = solve_implicit(partition.mask(alpha), a, tau, &rhs, solver, "forward sweep")?;
        iterations += rep.iterations;
        *out.component_mut(alpha) = x;
    }
    Ok((out, iterations))
}

/// Backward sweep, `(E + τ𝔸₂) U^{n+1/2} = U^{n+1/4}`, solved for
/// `α = m, …, 1`.
pub fn dd_backward_sweep(
    u_quarter: &DecomposedVelocity,
    tau: f64,
    a: &ViscousOperator,
    partition: &Partition,
    solver: &SolveConfig,
) -> Result<(DecomposedVelocity, usize)> {
    check_decomposed(u_quarter, a, partition)?;
    let m = partition.m();
    let mut out = u_quarter.clone();
    let mut iterations = 0;
    for alpha in (0..m).rev() {
        let mut rhs = u_quarter.component(alpha).clone();
        subtract_couplings(&mut rhs, alpha, alpha + 1..m, &out, a, partition, tau);
        let (x, rep) = solve_implicit(partition.mask(alpha), a, tau, &rhs, solver, "backward sweep")?;
        iterations += rep.iterations;
        *out.component_mut(alpha) = x;
    }
    Ok((out, iterations))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Substeps {
    pub velocity: DecomposedVelocity,
    pub pressures: Vec<PressureField>,
    /// `(‖B_α* u_α‖ after, before)` per subdomain.
    pub divergence: Vec<(f64, f64)>,
    pub iterations: usize,
}

/// Additive pressure stage: for `α = 1, …, m`, project `u_α` onto
/// `ker B_α*` and leave every other component untouched.
pub fn dd_pressure_substeps(
    u_half: &DecomposedVelocity,
    tau: f64,
    partition: &Partition,
    solver: &SolveConfig,
) -> Result<Substeps> {
    if u_half.m() != partition.m() {
        return Err(StokesError::Shape(format!(
            "partition has {} subdomains but the state has {} components",
            partition.m(),
            u_half.m()
        )));
    }
    partition.grid().ensure_same(u_half.grid())?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(StokesError::InvalidConfig(format!(
            "time step must be positive (got {tau})"
        )));
    }
    let mut velocity = u_half.clone();
    let mut pressures = Vec::with_capacity(partition.m());
    let mut divergence = Vec::with_capacity(partition.m());
    let mut iterations = 0;
    for alpha in 0..partition.m() {
        let proj = project(
            velocity.component(alpha),
            tau,
            Some(partition.mask(alpha)),
            solver,
            "subdomain pressure substep",
        )?;
        iterations += proj.report.iterations;
        divergence.push((proj.divergence_after, proj.divergence_before));
        pressures.push(proj.pressure);
        *velocity.component_mut(alpha) = proj.velocity;
    }
    Ok(Substeps {
        velocity,
        pressures,
        divergence,
        iterations,
    })
}

/// Operators and parameters shared by every step of a run.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: GridSpec,
    tau: f64,
    viscous: ViscousOperator,
    partition: Option<Partition>,
    solver: SolveConfig,
}

impl Stepper {
    /// Builds a stepper for the effective time step of `cfg`.
    pub fn new(cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let (_, tau) = cfg.time_steps()?;
        Self::with_tau(cfg, tau)
    }

    /// Builds a stepper with an explicit step size, ignoring `cfg.tau`.
    pub fn with_tau(cfg: &SchemeConfig, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(StokesError::InvalidConfig(format!(
                "time step must be positive (got {tau})"
            )));
        }
        let partition = match cfg.kind {
            SchemeKind::Monolithic => None,
            SchemeKind::Decomposed { m, overlap } => Some(Partition::strips(&cfg.grid, m, overlap)?),
        };
        Ok(Self {
            grid: cfg.grid,
            tau,
            viscous: ViscousOperator::new(&cfg.grid, cfg.nu)?,
            partition,
            solver: cfg.solver,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn viscous(&self) -> &ViscousOperator {
        &self.viscous
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    pub fn solver(&self) -> &SolveConfig {
        &self.solver
    }

    /// Initial state: `v` itself, or `v_α = χ_α v`.
    pub fn initial_state(&self, v: &VelocityField) -> Result<SchemeState> {
        self.grid.ensure_same(v.grid())?;
        Ok(match &self.partition {
            None => SchemeState::Monolithic {
                velocity: v.clone(),
                pressure: PressureField::zeros(&self.grid),
            },
            Some(p) => SchemeState::Decomposed {
                parts: p.decompose(v)?,
                pressures: vec![PressureField::zeros(&self.grid); p.m()],
            },
        })
    }

    /// One step from level `n` (time `n τ`), with `f` sampled at `t^n + τ/2`.
    pub fn step(&self, state: &SchemeState, n: usize, forcing: &dyn Forcing) -> Result<(SchemeState, StepReport)> {
        let t_n = n as f64 * self.tau;
        let f_half = forcing.sample(&self.grid, t_n + 0.5 * self.tau);
        self.grid.ensure_same(f_half.grid())?;
        let (next, report) = match (state, &self.partition) {
            (SchemeState::Monolithic { velocity, .. }, None) => self.step_monolithic(velocity, &f_half, n)?,
            (SchemeState::Decomposed { parts, .. }, Some(p)) => self.step_decomposed(parts, &f_half, p, n)?,
            _ => {
                return Err(StokesError::InvalidConfig(
                    "state does not belong to this scheme".into(),
                ))
            }
        };
        if !report.all_finite() || !next.is_finite() {
            return Err(StokesError::NumericalBreakdown {
                context: format!("time step {}", n + 1),
                iterations: report.cg_iterations,
            });
        }
        Ok((next, report))
    }

    fn step_monolithic(
        &self,
        u_n: &VelocityField,
        f_half: &VelocityField,
        n: usize,
    ) -> Result<(SchemeState, StepReport)> {
        let tau = self.tau;
        let (u_half, visc) = viscous_step_monolithic(u_n, f_half, tau, &self.viscous, &self.solver)?;
        let proj = pressure_projection(&u_half, tau, &self.solver)?;
        let (norm_state, norm_end, fnorm) = (u_n.norm(), proj.velocity.norm(), f_half.norm());
        let bound = norm_state * norm_state + tau / self.viscous.coercivity() * fnorm * fnorm;
        let report = StepReport {
            step: n + 1,
            t: (n + 1) as f64 * tau,
            norm_state,
            norm_quarter: None,
            norm_half: u_half.norm(),
            norm_end,
            forcing_norm: fnorm,
            div_residual: proj.divergence_after,
            div_scale: proj.divergence_before,
            substep_divergence: Vec::new(),
            cg_iterations: visc.iterations + proj.report.iterations,
            bound_margin: bound - norm_end * norm_end,
        };
        Ok((
            SchemeState::Monolithic {
                velocity: proj.velocity,
                pressure: proj.pressure,
            },
            report,
        ))
    }

    fn step_decomposed(
        &self,
        u_n: &DecomposedVelocity,
        f_half: &VelocityField,
        partition: &Partition,
        n: usize,
    ) -> Result<(SchemeState, StepReport)> {
        let tau = self.tau;
        let f_parts = partition.decompose(f_half)?;
        let (quarter, it_fwd) = dd_forward_sweep(u_n, &f_parts, tau, &self.viscous, partition, &self.solver)?;
        let (half, it_bwd) = dd_backward_sweep(&quarter, tau, &self.viscous, partition, &self.solver)?;
        let sub = dd_pressure_substeps(&half, tau, partition, &self.solver)?;
        let (norm_state, norm_end, fnorm) = (u_n.norm(), sub.velocity.norm(), f_parts.norm());
        let bound = tau.exp() * norm_state * norm_state + tau * fnorm * fnorm;
        let rss = |sel: fn(&(f64, f64)) -> f64| sub.divergence.iter().map(|d| sel(d).powi(2)).sum::<f64>().sqrt();
        let report = StepReport {
            step: n + 1,
            t: (n + 1) as f64 * tau,
            norm_state,
            norm_quarter: Some(quarter.norm()),
            norm_half: half.norm(),
            norm_end,
            forcing_norm: fnorm,
            div_residual: rss(|d| d.0),
            div_scale: rss(|d| d.1),
            substep_divergence: sub.divergence.clone(),
            cg_iterations: it_fwd + it_bwd + sub.iterations,
            bound_margin: bound - norm_end * norm_end,
        };
        Ok((
            SchemeState::Decomposed {
                parts: sub.velocity,
                pressures: sub.pressures,
            },
            report,
        ))
    }

    /// Diagnostic global pressure for the decomposed scheme,
    /// `Σ_α η_α² p^{(α)}` with zero mean. Not part of the scheme itself.
    pub fn composite_pressure(&self, state: &SchemeState) -> Option<PressureField> {
        let (SchemeState::Decomposed { pressures, .. }, Some(p)) = (state, &self.partition) else {
            return None;
        };
        let g = self.grid;
        let mut out = PressureField::zeros(&g);
        for (mask, q) in p.masks().iter().zip(pressures) {
            for (i1, i2) in g.pressure_nodes() {
                let k = g.idx(i1, i2);
                let e = mask.eta()[k];
                out.values_mut()[k] += e * e * q.values()[k];
            }
        }
        out.deflate();
        Some(out)
    }
}

/// Composed decomposed step `U^n -> U^{n+1}`.
pub fn step_decomposed(
    u_n: &DecomposedVelocity,
    t_n: f64,
    cfg: &SchemeConfig,
) -> Result<(DecomposedVelocity, StepReport)> {
    let stepper = Stepper::new(cfg)?;
    if stepper.partition.is_none() {
        return Err(StokesError::InvalidConfig(
            "step_decomposed needs a decomposed scheme".into(),
        ));
    }
    let n = (t_n / stepper.tau).round() as usize;
    let state = SchemeState::Decomposed {
        parts: u_n.clone(),
        pressures: Vec::new(),
    };
    match stepper.step(&state, n, cfg.forcing.as_ref())? {
        (SchemeState::Decomposed { parts, .. }, rep) => Ok((parts, rep)),
        _ => unreachable!("decomposed stepper returns decomposed states"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    /// Recomposed velocity.
    pub velocity: VelocityField,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub tau: f64,
    pub steps: usize,
    pub final_state: SchemeState,
    /// Velocity at the final time (recomposed for the decomposed scheme).
    pub final_velocity: VelocityField,
    pub reports: Vec<StepReport>,
    pub snapshots: Vec<Snapshot>,
    pub partition: Option<Partition>,
    /// Zero-mean diagnostic pressure for the decomposed scheme.
    pub composite_pressure: Option<PressureField>,
}

/// A run that stopped early, with the steps completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} steps: {error}", reports.len())]
pub struct RunAborted {
    pub error: StokesError,
    pub reports: Vec<StepReport>,
}

impl From<StokesError> for RunAborted {
    fn from(error: StokesError) -> Self {
        Self {
            error,
            reports: Vec::new(),
        }
    }
}

/// Runs the configured scheme from `t = 0` to `t_final`.
pub fn run(cfg: &SchemeConfig) -> std::result::Result<RunOutput, RunAborted> {
    let stepper = Stepper::new(cfg)?;
    let (steps, tau) = cfg.time_steps()?;
    let mut state = stepper.initial_state(&cfg.initial)?;
    let mut reports = Vec::with_capacity(steps);
    let mut snapshots = Vec::new();
    for n in 0..steps {
        match stepper.step(&state, n, cfg.forcing.as_ref()) {
            Ok((next, rep)) => {
                state = next;
                reports.push(rep);
            }
            Err(error) => return Err(RunAborted { error, reports }),
        }
        let level = n + 1;
        if cfg.snapshot_every > 0 && level % cfg.snapshot_every == 0 && level != steps {
            let velocity = state.velocity(stepper.partition()).map_err(|error| RunAborted {
                error,
                reports: reports.clone(),
            })?;
            snapshots.push(Snapshot {
                step: level,
                t: level as f64 * tau,
                velocity,
            });
        }
    }
    let final_velocity = state.velocity(stepper.partition()).map_err(|error| RunAborted {
        error,
        reports: reports.clone(),
    })?;
    snapshots.push(Snapshot {
        step: steps,
        t: steps as f64 * tau,
        velocity: final_velocity.clone(),
    });
    let composite_pressure = stepper.composite_pressure(&state);
    Ok(RunOutput {
        tau,
        steps,
        final_velocity,
        final_state: state,
        reports,
        snapshots,
        partition: stepper.partition.clone(),
        composite_pressure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::apply_gradient;
    use crate::rng::Lcg64;

    fn cfg(n: usize, kind: SchemeKind) -> SchemeConfig {
        SchemeConfig::new(GridSpec::unit_square(n).unwrap(), 0.1, 1.0, 1.0, kind)
    }

    #[test]
    fn step_count_lands_on_final_time() {
        let mut c = cfg(4, SchemeKind::Monolithic);
        c.tau = 0.3;
        c.t_final = 1.0;
        let (n, tau) = c.time_steps().unwrap();
        assert_eq!(n, 3);
        assert_eq!(tau * 3.0, 1.0);
        c.tau = 2.0;
        assert!(c.time_steps().is_err());
        c.tau = -1.0;
        assert!(c.time_steps().is_err());
    }

    #[test]
    fn viscous_stage_zero_and_contraction() {
        let g = GridSpec::unit_square(8).unwrap();
        let a = ViscousOperator::new(&g, 1.0).unwrap();
        let z = VelocityField::zeros(&g);
        let (u, _) = viscous_step_monolithic(&z, &z, 0.1, &a, &SolveConfig::default()).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        let mut rng = Lcg64::new(12);
        for _ in 0..10 {
            let un = rng.velocity(&g);
            let (uh, _) = viscous_step_monolithic(&un, &z, 0.05, &a, &SolveConfig::default()).unwrap();
            assert!(uh.norm() <= un.norm());
            assert!(uh.boundary_is_zero());
        }
    }

    #[test]
    fn projection_of_divergence_free_field_is_identity() {
        let g = GridSpec::unit_square(10).unwrap();
        let w = Lcg64::new(4).velocity(&g);
        let once = pressure_projection(&w, 0.3, &SolveConfig::default()).unwrap();
        let twice = pressure_projection(&once.velocity, 0.3, &SolveConfig::default()).unwrap();
        assert!(twice.pressure.norm() <= 1e-8 * once.pressure.norm().max(1.0));
        assert!(twice.velocity.sub(&once.velocity).unwrap().norm() <= 1e-9 * once.velocity.norm());
    }

    #[test]
    fn projection_removes_gradients() {
        let g = GridSpec::unit_square(12).unwrap();
        let mut rng = Lcg64::new(31);
        let q = rng.pressure(&g);
        let w = apply_gradient(&q);
        let proj = pressure_projection(&w, 0.5, &SolveConfig::default()).unwrap();
        assert!(proj.divergence_after <= 1e-8 * proj.divergence_before);
        assert!(proj.velocity.norm() <= 1e-8 * w.norm());
        assert!(proj.pressure.mean().abs() <= 1e-12);
    }

    #[test]
    fn zero_run_stays_zero() {
        for kind in [SchemeKind::Monolithic, SchemeKind::Decomposed { m: 2, overlap: 1 }] {
            let mut c = cfg(8, kind);
            c.tau = 1.0;
            c.t_final = 1.0;
            let out = run(&c).unwrap();
            assert_eq!(out.steps, 1);
            assert_eq!(out.final_velocity.max_abs(), 0.0);
            assert!(out.reports.iter().all(|r| r.norm_end == 0.0 && r.norm_state == 0.0));
        }
    }

    #[test]
    fn decomposed_unforced_norm_is_non_increasing() {
        let g = GridSpec::unit_square(12).unwrap();
        let v = Lcg64::new(5).velocity(&g);
        let c = SchemeConfig::new(g, 0.2, 2.0, 1.0, SchemeKind::Decomposed { m: 3, overlap: 2 }).with_initial(v);
        let out = run(&c).unwrap();
        for r in &out.reports {
            assert!(r.norm_end <= r.norm_state * (1.0 + 1e-10));
            assert!(r.norm_half <= r.norm_quarter.unwrap() * (1.0 + 1e-12));
            assert!(r.norm_end <= r.norm_half * (1.0 + 1e-12));
        }
        assert!(out.composite_pressure.is_some());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let c = cfg(6, SchemeKind::Monolithic);
        let s = Stepper::new(&c).unwrap();
        let g = GridSpec::unit_square(6).unwrap();
        let bad = SchemeState::Decomposed {
            parts: DecomposedVelocity::zeros(&g, 2).unwrap(),
            pressures: vec![],
        };
        assert!(s.step(&bad, 0, &NoForcing).is_err());
    }

    #[test]
    fn non_convergence_is_propagated() {
        let g = GridSpec::unit_square(16).unwrap();
        let v = Lcg64::new(1).velocity(&g);
        let mut c = SchemeConfig::new(g, 0.1, 0.2, 1.0, SchemeKind::Monolithic).with_initial(v);
        c.solver.max_iter = Some(2);
        let err = run(&c).unwrap_err();
        assert!(matches!(err.error, StokesError::NotConverged { .. }));
        assert!(err.reports.is_empty());
    }
}
