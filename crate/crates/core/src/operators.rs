//! Matrix-free grid operators.
//!
//! * `A = -ν Δ_h`, the 5-point viscous operator with homogeneous Dirichlet data.
//! * `B`, the forward-difference gradient from `ω_p` to `ω`.
//! * `B*`, the backward-difference operator `-div_h` from `ω` to `ω_p`, the
//!   adjoint of `B` in the `h1·h2`-weighted scalar products.
//! * `χ_α`, pointwise multiplication by a partition function.
//! * `A_αβ = χ_α A χ_β` and the block operator on `H^m` with its triangular
//!   halves.

use crate::error::{Result, StokesError};
use crate::grid::{DecomposedVelocity, GridSpec, PressureField, VelocityField};

/// Smallest eigenvalue of `-Δ_h` on the grid.
pub fn spectral_lower_bound(grid: &GridSpec) -> f64 {
    let term = |h: f64, l: f64| {
        let s = (std::f64::consts::PI * h / (2.0 * l)).sin();
        4.0 / (h * h) * s * s
    };
    term(grid.h1, grid.l1) + term(grid.h2, grid.l2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscousOperator {
    grid: GridSpec,
    nu: f64,
}

impl ViscousOperator {
    pub fn new(grid: &GridSpec, nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(StokesError::InvalidConfig(format!(
                "viscosity must be positive (got {nu})"
            )));
        }
        Ok(Self { grid: *grid, nu })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `ν δ_h`, the coercivity constant of `A`.
    pub fn coercivity(&self) -> f64 {
        self.nu * spectral_lower_bound(&self.grid)
    }

    /// Upper estimate of the spectral radius, `4ν (1/h1² + 1/h2²)`.
    pub fn norm_estimate(&self) -> f64 {
        4.0 * self.nu * (1.0 / (self.grid.h1 * self.grid.h1) + 1.0 / (self.grid.h2 * self.grid.h2))
    }

    pub fn apply(&self, u: &VelocityField) -> Result<VelocityField> {
        self.grid.ensure_same(u.grid())?;
        let mut out = VelocityField::zeros(&self.grid);
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// Writes `A u` into `out`; both fields must live on this operator's grid.
    pub(crate) fn apply_into(&self, u: &VelocityField, out: &mut VelocityField) {
        let g = &self.grid;
        let c1 = self.nu / (g.h1 * g.h1);
        let c2 = self.nu / (g.h2 * g.h2);
        let stride = g.n2 + 1;
        let (o1, o2) = out.components_mut();
        for (src, dst) in [(u.u1(), o1), (u.u2(), o2)] {
            for i1 in 1..g.n1 {
                let row = i1 * stride;
                for k in row + 1..row + g.n2 {
                    let c = src[k];
                    dst[k] =
                        c1 * (2.0 * c - src[k - stride] - src[k + stride]) + c2 * (2.0 * c - src[k - 1] - src[k + 1]);
                }
            }
        }
    }
}

pub fn apply_viscous(a: &ViscousOperator, u: &VelocityField) -> Result<VelocityField> {
    a.apply(u)
}

/// Forward-difference gradient `B p`, defined at interior nodes.
pub fn apply_gradient(p: &PressureField) -> VelocityField {
    let g = *p.grid();
    let mut out = VelocityField::zeros(&g);
    gradient_into(p, &mut out);
    out
}

pub(crate) fn gradient_into(p: &PressureField, out: &mut VelocityField) {
    let g = *p.grid();
    let stride = g.n2 + 1;
    let (r1, r2) = (1.0 / g.h1, 1.0 / g.h2);
    let src = p.values();
    let (o1, o2) = out.components_mut();
    for i1 in 1..g.n1 {
        let row = i1 * stride;
        for k in row + 1..row + g.n2 {
            o1[k] = (src[k + stride] - src[k]) * r1;
            o2[k] = (src[k + 1] - src[k]) * r2;
        }
    }
}

/// `B* u = -div_h u`, backward differences evaluated on `ω_p`.
pub fn apply_divergence(u: &VelocityField) -> PressureField {
    let g = *u.grid();
    let mut out = PressureField::zeros(&g);
    divergence_into(u, &mut out);
    out
}

pub(crate) fn divergence_into(u: &VelocityField, out: &mut PressureField) {
    let g = *u.grid();
    let stride = g.n2 + 1;
    let (r1, r2) = (1.0 / g.h1, 1.0 / g.h2);
    let (a, b) = (u.u1(), u.u2());
    let dst = out.values_mut();
    for i1 in 1..=g.n1 {
        let row = i1 * stride;
        for k in row + 1..=row + g.n2 {
            dst[k] = -(a[k] - a[k - stride]) * r1 - (b[k] - b[k - 1]) * r2;
        }
    }
}

/// Diagonal operator `χ = η(x) E`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOperator {
    grid: GridSpec,
    eta: Vec<f64>,
}

impl MaskOperator {
    pub fn new(grid: &GridSpec, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != grid.len() {
            return Err(StokesError::Shape(format!(
                "mask of length {} does not fit a grid with {} nodes",
                eta.len(),
                grid.len()
            )));
        }
        if let Some(v) = eta.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(StokesError::InvalidPartition(format!(
                "mask values must lie in [0, 1] (found {v})"
            )));
        }
        Ok(Self { grid: *grid, eta })
    }

    pub fn identity(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            eta: vec![1.0; grid.len()],
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn apply(&self, u: &VelocityField) -> Result<VelocityField> {
        self.grid.ensure_same(u.grid())?;
        let mut out = u.clone();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn apply_in_place(&self, u: &mut VelocityField) {
        let (a, b) = u.components_mut();
        for ((x, y), e) in a.iter_mut().zip(b.iter_mut()).zip(&self.eta) {
            *x *= e;
            *y *= e;
        }
    }

    pub(crate) fn apply_into(&self, u: &VelocityField, out: &mut VelocityField) {
        let (o1, o2) = out.components_mut();
        for (k, e) in self.eta.iter().enumerate() {
            o1[k] = e * u.u1()[k];
            o2[k] = e * u.u2()[k];
        }
    }

    /// Masked gradient `B_α p = χ_α B p`.
    pub fn masked_gradient(&self, p: &PressureField) -> Result<VelocityField> {
        self.grid.ensure_same(p.grid())?;
        let mut out = apply_gradient(p);
        self.apply_in_place(&mut out);
        Ok(out)
    }

    /// Masked divergence `B_α* u = B* χ_α u`.
    pub fn masked_divergence(&self, u: &VelocityField) -> Result<PressureField> {
        Ok(apply_divergence(&self.apply(u)?))
    }
}

pub fn apply_mask(chi: &MaskOperator, u: &VelocityField) -> Result<VelocityField> {
    chi.apply(u)
}

/// `χ_α A χ_β u`.
pub fn apply_block(
    chi_a: &MaskOperator,
    a: &ViscousOperator,
    chi_b: &MaskOperator,
    u: &VelocityField,
) -> Result<VelocityField> {
    chi_a.grid().ensure_same(a.grid())?;
    chi_b.grid().ensure_same(a.grid())?;
    let inner = chi_b.apply(u)?;
    let mut out = a.apply(&inner)?;
    chi_a.apply_in_place(&mut out);
    Ok(out)
}

/// `D_α = E + (τ/2) χ_α A χ_α`, the per-subdomain implicit operator.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitOperator<'a> {
    pub mask: &'a MaskOperator,
    pub viscous: &'a ViscousOperator,
    pub tau: f64,
}

impl ImplicitOperator<'_> {
    pub(crate) fn apply_into(&self, u: &VelocityField, scratch: &mut VelocityField, out: &mut VelocityField) {
        self.mask.apply_into(u, scratch);
        self.viscous.apply_into(scratch, out);
        self.mask.apply_in_place(out);
        out.scale(0.5 * self.tau);
        out.axpy_unchecked(1.0, u);
    }

    pub fn apply(&self, u: &VelocityField) -> Result<VelocityField> {
        self.viscous.grid().ensure_same(u.grid())?;
        let mut scratch = VelocityField::zeros(u.grid());
        let mut out = VelocityField::zeros(u.grid());
        self.apply_into(u, &mut scratch, &mut out);
        Ok(out)
    }
}

/// Which part of the block operator `𝔸 = {χ_α A χ_β}` to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockPart {
    /// `𝔸` itself.
    Full,
    /// `𝔸₁`: strictly lower blocks plus half the diagonal.
    Lower,
    /// `𝔸₂ = 𝔸₁*`: strictly upper blocks plus half the diagonal.
    Upper,
}

/// Applies row-by-row `Σ_β c_αβ χ_α A χ_β u_β` with the coefficient pattern
/// selected by `part`.
pub fn apply_block_operator(
    masks: &[MaskOperator],
    a: &ViscousOperator,
    part: BlockPart,
    u: &DecomposedVelocity,
) -> Result<DecomposedVelocity> {
    if masks.len() != u.m() {
        return Err(StokesError::Shape(format!(
            "{} masks for a {}-component field",
            masks.len(),
            u.m()
        )));
    }
    a.grid().ensure_same(u.grid())?;
    let grid = *u.grid();
    let mut out = Vec::with_capacity(u.m());
    let mut scratch = VelocityField::zeros(&grid);
    let mut tmp = VelocityField::zeros(&grid);
    for alpha in 0..u.m() {
        let mut acc = VelocityField::zeros(&grid);
        for (beta, ub) in u.components().iter().enumerate() {
            let weight = match (part, beta.cmp(&alpha)) {
                (_, std::cmp::Ordering::Equal) if part != BlockPart::Full => 0.5,
                (BlockPart::Full, _) => 1.0,
                (BlockPart::Lower, std::cmp::Ordering::Less) => 1.0,
                (BlockPart::Upper, std::cmp::Ordering::Greater) => 1.0,
                _ => 0.0,
            };
            if weight == 0.0 {
                continue;
            }
            masks[beta].apply_into(ub, &mut scratch);
            a.apply_into(&scratch, &mut tmp);
            acc.axpy_unchecked(weight, &tmp);
        }
        masks[alpha].apply_in_place(&mut acc);
        out.push(acc);
    }
    DecomposedVelocity::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg64;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    #[test]
    fn viscous_of_zero() {
        let g = grid(5);
        let a = ViscousOperator::new(&g, 0.7).unwrap();
        assert_eq!(a.apply(&VelocityField::zeros(&g)).unwrap(), VelocityField::zeros(&g));
    }

    #[test]
    fn extremal_eigenvector() {
        let g = GridSpec::new(2.0, 1.0, 6, 5).unwrap();
        let a = ViscousOperator::new(&g, 0.3).unwrap();
        let u = VelocityField::from_fn(&g, |x, y| {
            let s = (PI * x / g.l1).sin() * (PI * y / g.l2).sin();
            (s, s)
        });
        let au = a.apply(&u).unwrap();
        let lambda = a.coercivity();
        let mut expect = u.clone();
        expect.scale(lambda);
        let err = au.sub(&expect).unwrap().norm();
        assert!(err <= 1e-13 * lambda * u.norm(), "err = {err}");
        assert!(au.boundary_is_zero());
    }

    #[test]
    fn spectral_bound_values() {
        let g = GridSpec::unit_square(2).unwrap();
        assert!((spectral_lower_bound(&g) - 16.0).abs() < 1e-12);
        let fine = GridSpec::unit_square(4096).unwrap();
        assert!((spectral_lower_bound(&fine) - 2.0 * PI * PI).abs() < 1e-5);
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = GridSpec::new(1.0, 2.0, 5, 4).unwrap();
        let c = PressureField::constant(&g, 2.5);
        assert_eq!(apply_gradient(&c).max_abs(), 0.0);
        let lin = PressureField::from_fn(&g, |x, _| x);
        let bp = apply_gradient(&lin);
        for (i1, i2) in g.interior_nodes() {
            let (a, b) = bp.get(i1, i2);
            assert!((a - 1.0).abs() < 1e-12);
            assert_eq!(b, 0.0);
        }
        assert!(bp.boundary_is_zero());
    }

    #[test]
    fn divergence_telescopes() {
        let g = GridSpec::new(1.5, 1.0, 7, 6).unwrap();
        let mut rng = Lcg64::new(11);
        for _ in 0..20 {
            let u = rng.velocity(&g);
            let div = apply_divergence(&u);
            let total: f64 = div.values().iter().sum::<f64>() * g.weight();
            assert!(total.abs() <= 1e-13 * u.norm());
        }
        assert_eq!(apply_divergence(&VelocityField::zeros(&g)), PressureField::zeros(&g));
    }

    #[test]
    fn gradient_divergence_adjoint() {
        let g = GridSpec::new(1.0, 1.3, 9, 7).unwrap();
        let mut rng = Lcg64::new(3);
        for _ in 0..50 {
            let p = rng.pressure(&g);
            let u = rng.velocity(&g);
            let lhs = apply_gradient(&p).dot(&u).unwrap();
            let rhs = p.dot(&apply_divergence(&u)).unwrap();
            assert!((lhs - rhs).abs() <= 1e-13 * p.norm() * u.norm() * 10.0);
        }
    }

    #[test]
    fn mask_identity_and_zero() {
        let g = grid(4);
        let u = Lcg64::new(1).velocity(&g);
        assert_eq!(MaskOperator::identity(&g).apply(&u).unwrap(), u);
        let zero = MaskOperator::new(&g, vec![0.0; g.len()]).unwrap();
        assert_eq!(zero.apply(&u).unwrap().max_abs(), 0.0);
        assert!(MaskOperator::new(&g, vec![1.5; g.len()]).is_err());
        assert!(MaskOperator::new(&g, vec![1.0; 3]).is_err());
    }

    #[test]
    fn mask_selfadjoint_and_idempotent_square() {
        let g = grid(6);
        let mut rng = Lcg64::new(5);
        let eta: Vec<f64> = (0..g.len()).map(|_| rng.next_f64()).collect();
        let chi = MaskOperator::new(&g, eta.clone()).unwrap();
        let sq = MaskOperator::new(&g, eta.iter().map(|e| e * e).collect()).unwrap();
        let u = rng.velocity(&g);
        let v = rng.velocity(&g);
        // equal up to the rounding of one extra multiplication per node
        let lhs = chi.apply(&u).unwrap().dot(&v).unwrap();
        let rhs = u.dot(&chi.apply(&v).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * u.norm() * v.norm());
        let twice = chi.apply(&chi.apply(&u).unwrap()).unwrap();
        assert!(twice.sub(&sq.apply(&u).unwrap()).unwrap().max_abs() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn block_with_identity_masks_is_viscous() {
        let g = grid(5);
        let a = ViscousOperator::new(&g, 1.0).unwrap();
        let id = MaskOperator::identity(&g);
        let u = Lcg64::new(9).velocity(&g);
        assert_eq!(apply_block(&id, &a, &id, &u).unwrap(), a.apply(&u).unwrap());
    }

    #[test]
    fn block_with_disjoint_support_vanishes() {
        let g = grid(6);
        let a = ViscousOperator::new(&g, 1.0).unwrap();
        let left: Vec<f64> = g.all_nodes().map(|(i1, _)| if i1 < 3 { 1.0 } else { 0.0 }).collect();
        let chi = MaskOperator::new(&g, left.clone()).unwrap();
        let u = VelocityField::from_index_fn(&g, |i1, _| if i1 >= 3 { (1.0, -1.0) } else { (0.0, 0.0) });
        assert_eq!(apply_block(&chi, &a, &chi, &u).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mismatched_grid_is_shape_error() {
        let a = ViscousOperator::new(&grid(4), 1.0).unwrap();
        let u = VelocityField::zeros(&grid(5));
        assert!(matches!(a.apply(&u), Err(StokesError::Shape(_))));
        assert!(ViscousOperator::new(&grid(4), 0.0).is_err());
    }
}
