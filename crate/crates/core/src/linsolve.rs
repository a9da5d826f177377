//! Unpreconditioned conjugate gradients for the symmetric positive
//! (semi-)definite systems of the time-stepping schemes.
//!
//! The solver works in whatever scalar product the vector type defines; for
//! grid fields that is the `h1·h2`-weighted product in which every scheme
//! operator is selfadjoint. Summation order is fixed, so repeated solves are
//! bitwise reproducible.

use crate::error::{Result, StokesError};
use crate::grid::{PressureField, VelocityField};

/// Vector space operations needed by [`cg_solve`].
pub trait KrylovVector: Clone {
    fn zeros_like(&self) -> Self;
    fn dot(&self, other: &Self) -> f64;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    /// `self = x + b * self`
    fn xpby(&mut self, x: &Self, b: f64);
    /// Projects out the constant mode, if the space has one.
    fn remove_constant(&mut self);
    fn all_finite(&self) -> bool;
}

impl KrylovVector for VelocityField {
    fn zeros_like(&self) -> Self {
        VelocityField::zeros(self.grid())
    }
    fn dot(&self, other: &Self) -> f64 {
        self.dot_unchecked(other)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.axpy_unchecked(a, x);
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        self.scale(b);
        self.axpy_unchecked(1.0, x);
    }
    // Constants are not admissible velocities under no-slip data.
    fn remove_constant(&mut self) {}
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl KrylovVector for PressureField {
    fn zeros_like(&self) -> Self {
        PressureField::zeros(self.grid())
    }
    fn dot(&self, other: &Self) -> f64 {
        self.dot_unchecked(other)
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.axpy_unchecked(a, x);
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        self.scale(b);
        self.axpy_unchecked(1.0, x);
    }
    fn remove_constant(&mut self) {
        self.deflate();
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

/// Plain Euclidean vectors, mainly for tests against dense matrices.
impl KrylovVector for Vec<f64> {
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += a * v;
        }
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        for (s, v) in self.iter_mut().zip(x) {
            *s = v + b * *s;
        }
    }
    fn remove_constant(&mut self) {
        if self.is_empty() {
            return;
        }
        let mean = self.iter().sum::<f64>() / self.len() as f64;
        self.iter_mut().for_each(|v| *v -= mean);
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Iteration cap; `None` means ten times the unknown count.
    pub max_iter: Option<usize>,
    pub deflate_constants: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_iter: None,
            deflate_constants: false,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(StokesError::InvalidConfig(format!(
                "solver tolerances must be positive (rel_tol={}, abs_tol={})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(StokesError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_deflation(mut self, on: bool) -> Self {
        self.deflate_constants = on;
        self
    }

    /// Residual target for a right-hand side of norm `rhs_norm`.
    pub fn target(&self, rhs_norm: f64) -> f64 {
        (self.rel_tol * rhs_norm).max(self.abs_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Norm of the true residual `b - A x` of the returned iterate.
    pub final_residual: f64,
    pub initial_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` from a zero initial guess.
///
/// `apply(x, y)` must overwrite `y` with `A x`. `unknowns` sizes the default
/// iteration cap. On exhausting the cap the current iterate is returned with
/// `converged = false`; a NaN or infinity anywhere is a breakdown error.
pub fn cg_solve<V, F>(mut apply: F, rhs: &V, unknowns: usize, cfg: &SolveConfig) -> Result<(V, SolveReport)>
where
    V: KrylovVector,
    F: FnMut(&V, &mut V),
{
    cfg.validate()?;
    let max_iter = cfg.max_iter.unwrap_or(10 * unknowns.max(1));
    let breakdown = |iterations| StokesError::NumericalBreakdown {
        context: "conjugate gradients".into(),
        iterations,
    };

    let mut b = rhs.clone();
    if cfg.deflate_constants {
        b.remove_constant();
    }
    if !b.all_finite() {
        return Err(breakdown(0));
    }
    let b_norm = b.dot(&b).sqrt();
    let target = cfg.target(b_norm);

    let mut x = b.zeros_like();
    let mut r = b.clone();
    let mut rr = b_norm * b_norm;
    let report = |iterations, residual: f64, converged| SolveReport {
        iterations,
        final_residual: residual,
        initial_residual: b_norm,
        converged,
    };
    if b_norm <= target {
        return Ok((x, report(0, b_norm, true)));
    }

    let mut p = r.clone();
    let mut ap = b.zeros_like();
    let mut iterations = 0;
    while iterations < max_iter {
        apply(&p, &mut ap);
        if cfg.deflate_constants {
            ap.remove_constant();
        }
        let pap = p.dot(&ap);
        if !pap.is_finite() {
            return Err(breakdown(iterations));
        }
        if pap <= 0.0 {
            // Only reachable when the remaining residual lies in the kernel
            // of a semidefinite operator; nothing more can be gained.
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        iterations += 1;
        let rr_new = r.dot(&r);
        if !rr_new.is_finite() {
            return Err(breakdown(iterations));
        }
        if rr_new.sqrt() <= target {
            // Confirm with the true residual before accepting.
            let true_r = true_residual(&mut apply, &x, &b, cfg.deflate_constants);
            let true_rr = true_r.dot(&true_r);
            if true_rr.sqrt() <= target {
                if cfg.deflate_constants {
                    x.remove_constant();
                }
                return Ok((x, report(iterations, true_rr.sqrt(), true)));
            }
            // Drifted: restart from the true residual.
            r = true_r;
            rr = true_rr;
            p = r.clone();
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p.xpby(&r, beta);
        if cfg.deflate_constants {
            p.remove_constant();
        }
    }

    let res = true_residual(&mut apply, &x, &b, cfg.deflate_constants);
    let res_norm = res.dot(&res).sqrt();
    if !res_norm.is_finite() {
        return Err(breakdown(iterations));
    }
    if cfg.deflate_constants {
        x.remove_constant();
    }
    Ok((x, report(iterations, res_norm, res_norm <= target)))
}

fn true_residual<V, F>(apply: &mut F, x: &V, b: &V, deflate: bool) -> V
where
    V: KrylovVector,
    F: FnMut(&V, &mut V),
{
    let mut ax = x.zeros_like();
    apply(x, &mut ax);
    if deflate {
        ax.remove_constant();
    }
    let mut r = b.clone();
    r.axpy(-1.0, &ax);
    r
}
