//! Manufactured solutions, error norms, energy-estimate monitors and a dense
//! re-implementation of one time step.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dense::{self, DenseOperator};
use crate::error::{Result, StokesError};
use crate::grid::{GridSpec, PressureField, VelocityField};
use crate::linsolve::SolveConfig;
use crate::operators::{apply_divergence, apply_gradient, spectral_lower_bound, ViscousOperator};
use crate::partition::Partition;
use crate::rng::Lcg64;
use crate::schemes::{run, Forcing, SchemeConfig, SchemeKind, SchemeState, StepReport};

/// Closed-form Stokes solution on the rectangle built from the stream function
/// `ψ = a sin²(πx1/l1) sin²(πx2/l2) e^{-λt}` with `u = (∂ψ/∂x2, -∂ψ/∂x1)` and
/// `p = a cos(πx1/l1) cos(πx2/l2) e^{-λt}`.
///
/// With `k1 = π/l1`, `k2 = π/l2` and `E = a e^{-λt}`:
///
/// ```text
/// u1 =  k2 sin²(k1 x) sin(2 k2 y) E
/// u2 = -k1 sin(2 k1 x) sin²(k2 y) E
/// f1 = -λ u1 - k1 sin(k1 x) cos(k2 y) E
///      - ν k2 E [2 k1² cos(2 k1 x) - 4 k2² sin²(k1 x)] sin(2 k2 y)
/// f2 = -λ u2 - k2 cos(k1 x) sin(k2 y) E
///      + ν k1 E [2 k2² cos(2 k2 y) - 4 k1² sin²(k2 y)] sin(2 k1 x)
/// ```
///
/// `u` vanishes on the boundary and is divergence free; `p` has zero mean.
/// The derivation is recorded in `docs/manufactured.md`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub amplitude: f64,
    pub decay: f64,
    pub nu: f64,
    pub l1: f64,
    pub l2: f64,
}

impl ManufacturedCase {
    pub fn new(grid: &GridSpec, nu: f64) -> Self {
        Self {
            amplitude: 1.0,
            decay: 1.0,
            nu,
            l1: grid.l1,
            l2: grid.l2,
        }
    }

    fn k(&self) -> (f64, f64) {
        (PI / self.l1, PI / self.l2)
    }

    fn envelope(&self, t: f64) -> f64 {
        self.amplitude * (-self.decay * t).exp()
    }

    pub fn velocity_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (k1, k2) = self.k();
        let e = self.envelope(t);
        let s1 = (k1 * x).sin();
        let s2 = (k2 * y).sin();
        (
            k2 * s1 * s1 * (2.0 * k2 * y).sin() * e,
            -k1 * (2.0 * k1 * x).sin() * s2 * s2 * e,
        )
    }

    pub fn pressure_at(&self, x: f64, y: f64, t: f64) -> f64 {
        let (k1, k2) = self.k();
        (k1 * x).cos() * (k2 * y).cos() * self.envelope(t)
    }

    pub fn forcing_at(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let (k1, k2) = self.k();
        let e = self.envelope(t);
        let (u1, u2) = self.velocity_at(x, y, t);
        let s1 = (k1 * x).sin();
        let s2 = (k2 * y).sin();
        let f1 = -self.decay * u1
            - k1 * s1 * (k2 * y).cos() * e
            - self.nu
                * k2
                * e
                * (2.0 * k1 * k1 * (2.0 * k1 * x).cos() - 4.0 * k2 * k2 * s1 * s1)
                * (2.0 * k2 * y).sin();
        let f2 = -self.decay * u2 - k2 * (k1 * x).cos() * s2 * e
            + self.nu
                * k1
                * e
                * (2.0 * k2 * k2 * (2.0 * k2 * y).cos() - 4.0 * k1 * k1 * s2 * s2)
                * (2.0 * k1 * x).sin();
        (f1, f2)
    }

    /// Samples `(u, p, f)` at time `t`; `p` is sampled on `ω_p`.
    pub fn sample(&self, grid: &GridSpec, t: f64) -> (VelocityField, PressureField, VelocityField) {
        (
            VelocityField::from_fn(grid, |x, y| self.velocity_at(x, y, t)),
            PressureField::from_fn(grid, |x, y| self.pressure_at(x, y, t)),
            VelocityField::from_fn(grid, |x, y| self.forcing_at(x, y, t)),
        )
    }

    pub fn exact_velocity(&self, grid: &GridSpec, t: f64) -> VelocityField {
        VelocityField::from_fn(grid, |x, y| self.velocity_at(x, y, t))
    }
}

impl Forcing for ManufacturedCase {
    fn sample(&self, grid: &GridSpec, t: f64) -> VelocityField {
        VelocityField::from_fn(grid, |x, y| self.forcing_at(x, y, t))
    }
}

/// `(u, p, f)` of the manufactured case on `grid` at time `t`.
pub fn manufactured(case: &ManufacturedCase, grid: &GridSpec, t: f64) -> (VelocityField, PressureField, VelocityField) {
    case.sample(grid, t)
}

/// `‖numeric - exact‖` in the weighted interior norm.
pub fn error_norm(numeric: &VelocityField, exact: &VelocityField) -> Result<f64> {
    Ok(numeric.sub(exact)?.norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityMode {
    /// `‖u^{n+1}‖² ≤ ‖u^n‖² + τ/(νδ_h) ‖f‖²`; `coercivity` is `νδ_h`.
    Monolithic { coercivity: f64 },
    /// `‖U^{n+1}‖_m² ≤ e^τ ‖U^n‖_m² + τ ‖F‖_m²`.
    Decomposed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCheck {
    pub passed: bool,
    /// Smallest per-step slack divided by its scale; negative means violated.
    pub worst_margin: f64,
    pub worst_step: usize,
    /// Largest `‖U^{n+1}‖ / ‖U^n‖` over the run.
    pub max_growth: f64,
    /// `true` when forcing vanished on every step, so monotonicity was checked.
    pub unforced: bool,
    pub monotone: bool,
    /// The accumulated bound `‖U^n‖² ≤ B_n` held at every level.
    pub integrated_ok: bool,
    /// Monolithic only: the sharper `τ/(2νδ_h)` per-step bound also held.
    pub sharp_bound_ok: Option<bool>,
}

/// Relative slack allowed in every estimate, to absorb solver tolerance and
/// rounding.
pub const STABILITY_SLACK: f64 = 1e-10;

/// Evaluates the per-step energy estimate of the active scheme at every step.
pub fn check_stability(history: &[StepReport], tau: f64, mode: StabilityMode) -> StabilityCheck {
    let mut worst_margin = f64::INFINITY;
    let mut worst_step = 0;
    let mut max_growth = 0.0_f64;
    let unforced = history.iter().all(|r| r.forcing_norm == 0.0);
    let mut monotone = true;
    let mut integrated_ok = true;
    let mut sharp_ok = true;
    let mut integrated = history.first().map_or(0.0, |r| r.norm_state * r.norm_state);

    for r in history {
        let before = r.norm_state * r.norm_state;
        let after = r.norm_end * r.norm_end;
        let f2 = r.forcing_norm * r.forcing_norm;
        let (bound, sharp) = match mode {
            StabilityMode::Monolithic { coercivity } => {
                (before + tau / coercivity * f2, before + tau / (2.0 * coercivity) * f2)
            }
            StabilityMode::Decomposed => (tau.exp() * before + tau * f2, f64::INFINITY),
        };
        let scale = bound.max(after).max(f64::MIN_POSITIVE);
        let margin = (bound - after) / scale;
        if margin < worst_margin {
            worst_margin = margin;
            worst_step = r.step;
        }
        if after > sharp + STABILITY_SLACK * scale {
            sharp_ok = false;
        }
        if r.norm_state > 0.0 {
            max_growth = max_growth.max(r.norm_end / r.norm_state);
        } else if r.norm_end > 0.0 {
            max_growth = f64::INFINITY;
        }
        if unforced && r.norm_end > r.norm_state * (1.0 + STABILITY_SLACK) {
            monotone = false;
        }
        integrated = match mode {
            StabilityMode::Monolithic { coercivity } => integrated + tau / (2.0 * coercivity) * f2,
            StabilityMode::Decomposed => tau.exp() * integrated + tau * f2,
        };
        if after > integrated * (1.0 + STABILITY_SLACK) + f64::MIN_POSITIVE {
            integrated_ok = false;
        }
    }
    if history.is_empty() {
        worst_margin = 0.0;
    }
    let finite = history.iter().all(|r| r.norm_end.is_finite());
    StabilityCheck {
        passed: finite && worst_margin >= -STABILITY_SLACK && (!unforced || monotone),
        worst_margin,
        worst_step,
        max_growth,
        unforced,
        monotone,
        integrated_ok,
        sharp_bound_ok: matches!(mode, StabilityMode::Monolithic { .. }).then_some(sharp_ok),
    }
}

/// Stability mode matching a scheme configuration.
pub fn stability_mode(cfg: &SchemeConfig) -> Result<StabilityMode> {
    Ok(match cfg.kind {
        SchemeKind::Monolithic => StabilityMode::Monolithic {
            coercivity: ViscousOperator::new(&cfg.grid, cfg.nu)?.coercivity(),
        },
        SchemeKind::Decomposed { .. } => StabilityMode::Decomposed,
    })
}

fn lu_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.lu().solve(rhs).ok_or_else(|| StokesError::NumericalBreakdown {
        context: "dense LU solve".into(),
        iterations: 0,
    })
}

/// One time step computed entirely with dense matrices. `n` is the level of
/// the input state and `tau` the step size. Pressures in the returned state
/// are the minimal-norm solutions shifted to zero mean.
pub fn oracle_step(state: &SchemeState, n: usize, tau: f64, cfg: &SchemeConfig) -> Result<SchemeState> {
    let g = cfg.grid;
    let t_half = (n as f64 + 0.5) * tau;
    let f = cfg.forcing.sample(&g, t_half);
    let nv = dense::velocity_dim(&g);
    let b = dense::assemble_dense(DenseOperator::Gradient, &g)?;

    // Orthogonal projection of w onto ker(Mᵀ) together with the minimal-norm
    // pressure q solving M q = (w - Pw)/τ.
    let project = |mat: &DMatrix<f64>, w: &DVector<f64>| -> Result<(DVector<f64>, PressureField)> {
        let kept = dense::kernel_of_transpose_projector(mat) * w;
        let pinv = mat
            .clone()
            .pseudo_inverse(1e-10)
            .map_err(|e| StokesError::NumericalBreakdown {
                context: format!("dense pseudo-inverse: {e}"),
                iterations: 0,
            })?;
        let q = pinv * (w - &kept) / tau;
        let mut p = dense::vector_to_pressure(&g, &q)?;
        p.deflate();
        Ok((kept, p))
    };

    match (state, cfg.kind) {
        (SchemeState::Monolithic { velocity, .. }, SchemeKind::Monolithic) => {
            let a = dense::assemble_dense(DenseOperator::Viscous { nu: cfg.nu }, &g)?;
            let rhs = dense::velocity_to_vector(velocity) + dense::velocity_to_vector(&f) * tau;
            let half = lu_solve(DMatrix::identity(nv, nv) + a * tau, &rhs)?;
            let (end, p) = project(&b, &half)?;
            Ok(SchemeState::Monolithic {
                velocity: dense::vector_to_velocity(&g, &end)?,
                pressure: p,
            })
        }
        (SchemeState::Decomposed { parts, .. }, SchemeKind::Decomposed { m, overlap }) => {
            let partition = Partition::strips(&g, m, overlap)?;
            let lower = dense::assemble_dense(
                DenseOperator::BlockLower {
                    partition: &partition,
                    nu: cfg.nu,
                },
                &g,
            )?;
            let upper = dense::assemble_dense(
                DenseOperator::BlockUpper {
                    partition: &partition,
                    nu: cfg.nu,
                },
                &g,
            )?;
            let id = DMatrix::identity(m * nv, m * nv);
            let f_parts = partition.decompose(&f)?;
            let rhs = dense::decomposed_to_vector(parts) + dense::decomposed_to_vector(&f_parts) * tau;
            let quarter = lu_solve(&id + lower * tau, &rhs)?;
            let half = lu_solve(&id + upper * tau, &quarter)?;
            let mut end = half.clone();
            let mut pressures = Vec::with_capacity(m);
            for alpha in 0..m {
                let chi = dense::assemble_dense(DenseOperator::Mask(partition.mask(alpha)), &g)?;
                let b_alpha = chi * &b;
                let w = end.rows(alpha * nv, nv).into_owned();
                let (kept, p) = project(&b_alpha, &w)?;
                end.rows_mut(alpha * nv, nv).copy_from(&kept);
                pressures.push(p);
            }
            Ok(SchemeState::Decomposed {
                parts: dense::vector_to_decomposed(&g, m, &end)?,
                pressures,
            })
        }
        _ => Err(StokesError::InvalidConfig(
            "state does not match the scheme kind".into(),
        )),
    }
}

/// Runs the manufactured case from its exact initial velocity to `t_final`.
pub fn manufactured_run(
    grid: GridSpec,
    nu: f64,
    t_final: f64,
    tau: f64,
    kind: SchemeKind,
    solver: SolveConfig,
) -> Result<VelocityField> {
    let case = ManufacturedCase::new(&grid, nu);
    let cfg = SchemeConfig::new(grid, tau, t_final, nu, kind)
        .with_initial(case.exact_velocity(&grid, 0.0))
        .with_forcing(Arc::new(case))
        .with_solver(solver);
    run(&cfg).map(|o| o.final_velocity).map_err(|a| a.error)
}

/// `log(e_k / e_{k+1}) / log(s_k / s_{k+1})` for consecutive pairs.
pub fn observed_orders(steps: &[f64], errors: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(s, e)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect()
}

#[derive(Debug, Clone)]
pub struct TemporalRow {
    pub tau: f64,
    /// Distance to the fine-step reference on the same grid.
    pub error_reference: f64,
    /// Distance to the sampled exact solution; includes the spatial error.
    pub error_exact: f64,
    pub velocity: VelocityField,
}

/// Final-time errors of one scheme over a sequence of step sizes.
#[derive(Debug, Clone)]
pub struct TemporalStudy {
    pub kind: SchemeKind,
    pub reference_tau: f64,
    pub rows: Vec<TemporalRow>,
}

impl TemporalStudy {
    /// `e(τ_k) / e(τ_{k+1})` against the reference.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[0].error_reference / w[1].error_reference)
            .collect()
    }

    pub fn orders(&self) -> Vec<f64> {
        let taus: Vec<f64> = self.rows.iter().map(|r| r.tau).collect();
        let errs: Vec<f64> = self.rows.iter().map(|r| r.error_reference).collect();
        observed_orders(&taus, &errs)
    }
}

/// Temporal convergence of the manufactured case at fixed `grid`. The error
/// of each run is measured against the same scheme advanced with
/// `reference_tau`, which isolates the time discretization from the spatial
/// error.
pub fn temporal_study(
    grid: GridSpec,
    nu: f64,
    t_final: f64,
    kind: SchemeKind,
    taus: &[f64],
    reference_tau: f64,
    solver: SolveConfig,
) -> Result<TemporalStudy> {
    let case = ManufacturedCase::new(&grid, nu);
    let exact = case.exact_velocity(&grid, t_final);
    let reference = manufactured_run(grid, nu, t_final, reference_tau, kind, solver)?;
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let velocity = manufactured_run(grid, nu, t_final, tau, kind, solver)?;
        rows.push(TemporalRow {
            tau,
            error_reference: error_norm(&velocity, &reference)?,
            error_exact: error_norm(&velocity, &exact)?,
            velocity,
        });
    }
    Ok(TemporalStudy {
        kind,
        reference_tau,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
}

/// Final-time error against the exact solution on unit squares of `n × n`
/// intervals; `kind` picks the scheme for each `n`.
pub fn spatial_study(
    ns: &[usize],
    nu: f64,
    t_final: f64,
    tau: f64,
    kind: impl Fn(usize) -> SchemeKind,
    solver: SolveConfig,
) -> Result<Vec<SpatialRow>> {
    ns.iter()
        .map(|&n| {
            let g = GridSpec::unit_square(n)?;
            let u = manufactured_run(g, nu, t_final, tau, kind(n), solver)?;
            let exact = ManufacturedCase::new(&g, nu).exact_velocity(&g, t_final);
            Ok(SpatialRow {
                n,
                h: g.h1,
                error: error_norm(&u, &exact)?,
            })
        })
        .collect()
}

/// Outcome of one named check in [`quick_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Small-grid property and oracle checks, fast enough to run on every
/// checkout.
pub fn quick_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Lcg64::new(seed);
    let mut out = Vec::new();

    // gradient/divergence adjointness
    let mut worst = 0.0_f64;
    for n in [8usize, 13, 24] {
        let g = GridSpec::new(1.0, 1.5, n, n + 3)?;
        for _ in 0..50 {
            let p = rng.pressure(&g);
            let u = rng.velocity(&g);
            let lhs = apply_gradient(&p).dot(&u)?;
            let rhs = p.dot(&apply_divergence(&u))?;
            worst = worst.max((lhs - rhs).abs() / (p.norm() * u.norm()));
        }
    }
    out.push(CheckOutcome::new(
        "adjointness",
        worst <= 1e-13,
        format!("worst relative defect {worst:.2e}"),
    ));

    // viscous operator selfadjoint and coercive
    let g = GridSpec::new(1.0, 0.8, 12, 10)?;
    let a = ViscousOperator::new(&g, 0.5)?;
    let (mut sym, mut coer) = (0.0_f64, f64::INFINITY);
    for _ in 0..50 {
        let u = rng.velocity(&g);
        let v = rng.velocity(&g);
        let d = (a.apply(&u)?.dot(&v)? - u.dot(&a.apply(&v)?)?).abs();
        sym = sym.max(d / (u.norm() * v.norm() * a.norm_estimate()));
        coer = coer.min(a.apply(&u)?.dot(&u)? - a.coercivity() * u.dot(&u)?);
    }
    out.push(CheckOutcome::new(
        "viscous operator",
        sym <= 1e-12 && coer >= -1e-10,
        format!("symmetry defect {sym:.2e}, coercivity slack {coer:.3e}"),
    ));

    // δ_h against dense spectrum
    let mut worst = 0.0_f64;
    for (n1, n2) in [(3usize, 3usize), (4, 6), (8, 8)] {
        let g = GridSpec::new(1.0, 2.0, n1, n2)?;
        let lap = dense::assemble_dense(DenseOperator::NegLaplacian, &g)?;
        let lmin = lap.symmetric_eigen().eigenvalues.min();
        let dh = spectral_lower_bound(&g);
        worst = worst.max((lmin - dh).abs() / dh);
    }
    out.push(CheckOutcome::new(
        "spectral bound",
        worst <= 1e-10,
        format!("worst relative gap {worst:.2e}"),
    ));

    // partition normalization
    let mut worst = 0.0_f64;
    let g = GridSpec::new(1.0, 1.0, 24, 6)?;
    for m in 1..=4 {
        for overlap in [0, 1, 2, 4] {
            worst = worst.max(Partition::strips(&g, m, overlap)?.normalization_defect());
        }
    }
    out.push(CheckOutcome::new(
        "partition normalization",
        worst <= 1e-14,
        format!("max defect {worst:.2e}"),
    ));

    // triangular splitting
    let g = GridSpec::unit_square(4)?;
    let mut ok = true;
    let mut worst = 0.0_f64;
    for m in [2, 3] {
        let p = Partition::strips(&g, m, 0)?;
        let full = dense::assemble_dense(DenseOperator::BlockFull { partition: &p, nu: 1.0 }, &g)?;
        let lo = dense::assemble_dense(DenseOperator::BlockLower { partition: &p, nu: 1.0 }, &g)?;
        let up = dense::assemble_dense(DenseOperator::BlockUpper { partition: &p, nu: 1.0 }, &g)?;
        ok &= &lo + &up == full;
        let n = full.nrows();
        for _ in 0..10 {
            let x = DVector::from_fn(n, |_, _| rng.next_signed());
            let y = DVector::from_fn(n, |_, _| rng.next_signed());
            let d = ((&lo * &x).dot(&y) - x.dot(&(&up * &y))).abs();
            worst = worst.max(d / (x.norm() * y.norm() * full.norm()));
        }
    }
    out.push(CheckOutcome::new(
        "triangular splitting",
        ok && worst <= 1e-12,
        format!("exact sum {ok}, adjoint defect {worst:.2e}"),
    ));

    // oracle equivalence of both schemes
    for kind in [
        SchemeKind::Monolithic,
        SchemeKind::Decomposed { m: 1, overlap: 0 },
        SchemeKind::Decomposed { m: 2, overlap: 1 },
    ] {
        let g = GridSpec::unit_square(4)?;
        let case = ManufacturedCase::new(&g, 1.0);
        let cfg = SchemeConfig::new(g, 0.1, 1.0, 1.0, kind).with_forcing(Arc::new(case));
        let stepper = crate::schemes::Stepper::new(&cfg)?;
        let mut worst = 0.0_f64;
        for n in 0..5 {
            let state = stepper.initial_state(&rng.velocity(&g))?;
            let (fast, _) = stepper.step(&state, n, cfg.forcing.as_ref())?;
            let slow = oracle_step(&state, n, stepper.tau(), &cfg)?;
            let to_vec = |s: &SchemeState| match s {
                SchemeState::Monolithic { velocity, .. } => dense::velocity_to_vector(velocity),
                SchemeState::Decomposed { parts, .. } => dense::decomposed_to_vector(parts),
            };
            worst = worst.max(rel_diff(&to_vec(&fast), &to_vec(&slow)));
        }
        let name = match kind {
            SchemeKind::Monolithic => "oracle step (monolithic)".to_string(),
            SchemeKind::Decomposed { m, .. } => format!("oracle step (decomposed, m={m})"),
        };
        out.push(CheckOutcome::new(
            &name,
            worst <= 1e-8,
            format!("worst relative difference {worst:.2e}"),
        ));
    }

    Ok(out)
}
