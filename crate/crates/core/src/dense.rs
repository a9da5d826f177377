//! Dense assembly of every scheme operator, for small-grid cross-checks.
//!
//! Matrices are built by enumerating stencil coefficients directly rather
//! than by probing the matrix-free kernels, so the two code paths stay
//! independent. Canonical enumeration:
//!
//! * velocity: interior nodes row-major over `(i1, i2)`, all `u1` values then
//!   all `u2` values;
//! * pressure: `ω_p` nodes row-major;
//! * decomposed velocity: component blocks `u_1, …, u_m` concatenated.
//!
//! All scalar products are the uniform `h1·h2`-weighted ones, so a
//! matrix that is selfadjoint in the grid scalar product is plainly symmetric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, StokesError};
use crate::grid::{DecomposedVelocity, GridSpec, PressureField, VelocityField};
use crate::operators::MaskOperator;
use crate::partition::Partition;

/// Largest matrix (rows × cols) the assembler will build.
pub const MAX_DENSE_ENTRIES: usize = 16_000_000;

#[derive(Debug, Clone, Copy)]
pub enum DenseOperator<'a> {
    /// `-Δ_h` on scalar interior functions.
    NegLaplacian,
    /// `A = -ν Δ_h` on velocities.
    Viscous { nu: f64 },
    /// `B`, pressure to velocity.
    Gradient,
    /// `B*`, velocity to pressure.
    Divergence,
    /// `χ` on velocities.
    Mask(&'a MaskOperator),
    /// `χ_a A χ_b`.
    Block {
        left: &'a MaskOperator,
        right: &'a MaskOperator,
        nu: f64,
    },
    /// `D_α = E + (τ/2) χ_α A χ_α`.
    Implicit { mask: &'a MaskOperator, nu: f64, tau: f64 },
    /// `𝔸` on the product space.
    BlockFull { partition: &'a Partition, nu: f64 },
    /// `𝔸₁`.
    BlockLower { partition: &'a Partition, nu: f64 },
    /// `𝔸₂`.
    BlockUpper { partition: &'a Partition, nu: f64 },
}

fn guard(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MAX_DENSE_ENTRIES {
        Err(StokesError::SizeGuard { rows, cols })
    } else {
        Ok(())
    }
}

fn interior_index(g: &GridSpec, i1: usize, i2: usize) -> Option<usize> {
    g.is_interior(i1, i2).then(|| (i1 - 1) * (g.n2 - 1) + (i2 - 1))
}

fn pressure_index(g: &GridSpec, i1: usize, i2: usize) -> usize {
    (i1 - 1) * g.n2 + (i2 - 1)
}

pub fn velocity_dim(g: &GridSpec) -> usize {
    2 * g.interior_count()
}

fn neg_laplacian(g: &GridSpec) -> DMatrix<f64> {
    let n = g.interior_count();
    let mut m = DMatrix::zeros(n, n);
    let (c1, c2) = (1.0 / (g.h1 * g.h1), 1.0 / (g.h2 * g.h2));
    for (i1, i2) in g.interior_nodes() {
        let row = interior_index(g, i1, i2).unwrap();
        m[(row, row)] = 2.0 * c1 + 2.0 * c2;
        let neighbors = [(i1 - 1, i2, c1), (i1 + 1, i2, c1), (i1, i2 - 1, c2), (i1, i2 + 1, c2)];
        for (j1, j2, c) in neighbors {
            if let Some(col) = interior_index(g, j1, j2) {
                m[(row, col)] = -c;
            }
        }
    }
    m
}

fn viscous(g: &GridSpec, nu: f64) -> DMatrix<f64> {
    let s = neg_laplacian(g) * nu;
    let n = s.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&s);
    m.view_mut((n, n), (n, n)).copy_from(&s);
    m
}

fn gradient(g: &GridSpec) -> DMatrix<f64> {
    let n = g.interior_count();
    let mut m = DMatrix::zeros(2 * n, g.pressure_count());
    for (i1, i2) in g.interior_nodes() {
        let row = interior_index(g, i1, i2).unwrap();
        m[(row, pressure_index(g, i1 + 1, i2))] += 1.0 / g.h1;
        m[(row, pressure_index(g, i1, i2))] -= 1.0 / g.h1;
        m[(n + row, pressure_index(g, i1, i2 + 1))] += 1.0 / g.h2;
        m[(n + row, pressure_index(g, i1, i2))] -= 1.0 / g.h2;
    }
    m
}

fn divergence(g: &GridSpec) -> DMatrix<f64> {
    let n = g.interior_count();
    let mut m = DMatrix::zeros(g.pressure_count(), 2 * n);
    for (i1, i2) in g.pressure_nodes() {
        let row = pressure_index(g, i1, i2);
        if let Some(c) = interior_index(g, i1, i2) {
            m[(row, c)] -= 1.0 / g.h1;
            m[(row, n + c)] -= 1.0 / g.h2;
        }
        if let Some(c) = interior_index(g, i1 - 1, i2) {
            m[(row, c)] += 1.0 / g.h1;
        }
        if let Some(c) = interior_index(g, i1, i2 - 1) {
            m[(row, n + c)] += 1.0 / g.h2;
        }
    }
    m
}

fn mask(g: &GridSpec, chi: &MaskOperator) -> DMatrix<f64> {
    let n = g.interior_count();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (i1, i2) in g.interior_nodes() {
        let k = interior_index(g, i1, i2).unwrap();
        let e = chi.eta()[g.idx(i1, i2)];
        m[(k, k)] = e;
        m[(n + k, n + k)] = e;
    }
    m
}

fn block_operator(g: &GridSpec, p: &Partition, nu: f64, lower: f64, diag: f64, upper: f64) -> DMatrix<f64> {
    let n = velocity_dim(g);
    let m = p.m();
    let a = viscous(g, nu);
    let chis: Vec<DMatrix<f64>> = p.masks().iter().map(|c| mask(g, c)).collect();
    let mut out = DMatrix::zeros(m * n, m * n);
    for alpha in 0..m {
        for beta in 0..m {
            let c = match alpha.cmp(&beta) {
                std::cmp::Ordering::Greater => lower,
                std::cmp::Ordering::Equal => diag,
                std::cmp::Ordering::Less => upper,
            };
            if c == 0.0 {
                continue;
            }
            let blk = &chis[alpha] * &a * &chis[beta] * c;
            out.view_mut((alpha * n, beta * n), (n, n)).copy_from(&blk);
        }
    }
    out
}

/// Explicit matrix of `op` under the canonical enumeration.
pub fn assemble_dense(op: DenseOperator<'_>, grid: &GridSpec) -> Result<DMatrix<f64>> {
    let nv = velocity_dim(grid);
    let np = grid.pressure_count();
    let (rows, cols) = match op {
        DenseOperator::NegLaplacian => (grid.interior_count(), grid.interior_count()),
        DenseOperator::Gradient => (nv, np),
        DenseOperator::Divergence => (np, nv),
        DenseOperator::BlockFull { partition, .. }
        | DenseOperator::BlockLower { partition, .. }
        | DenseOperator::BlockUpper { partition, .. } => (partition.m() * nv, partition.m() * nv),
        _ => (nv, nv),
    };
    guard(rows, cols)?;
    let check_mask = |c: &MaskOperator| grid.ensure_same(c.grid());
    Ok(match op {
        DenseOperator::NegLaplacian => neg_laplacian(grid),
        DenseOperator::Viscous { nu } => viscous(grid, nu),
        DenseOperator::Gradient => gradient(grid),
        DenseOperator::Divergence => divergence(grid),
        DenseOperator::Mask(chi) => {
            check_mask(chi)?;
            mask(grid, chi)
        }
        DenseOperator::Block { left, right, nu } => {
            check_mask(left)?;
            check_mask(right)?;
            mask(grid, left) * viscous(grid, nu) * mask(grid, right)
        }
        DenseOperator::Implicit { mask: chi, nu, tau } => {
            check_mask(chi)?;
            let c = mask(grid, chi);
            DMatrix::identity(nv, nv) + &c * viscous(grid, nu) * &c * (0.5 * tau)
        }
        DenseOperator::BlockFull { partition, nu } => {
            grid.ensure_same(partition.grid())?;
            block_operator(grid, partition, nu, 1.0, 1.0, 1.0)
        }
        DenseOperator::BlockLower { partition, nu } => {
            grid.ensure_same(partition.grid())?;
            block_operator(grid, partition, nu, 1.0, 0.5, 0.0)
        }
        DenseOperator::BlockUpper { partition, nu } => {
            grid.ensure_same(partition.grid())?;
            block_operator(grid, partition, nu, 0.0, 0.5, 1.0)
        }
    })
}

pub fn velocity_to_vector(u: &VelocityField) -> DVector<f64> {
    let g = u.grid();
    let n = g.interior_count();
    let mut v = DVector::zeros(2 * n);
    for (k, (i1, i2)) in g.interior_nodes().enumerate() {
        let (a, b) = u.get(i1, i2);
        v[k] = a;
        v[n + k] = b;
    }
    v
}

pub fn vector_to_velocity(g: &GridSpec, v: &DVector<f64>) -> Result<VelocityField> {
    let n = g.interior_count();
    if v.len() != 2 * n {
        return Err(StokesError::Shape(format!(
            "vector of length {} is not a velocity on a grid with {n} interior nodes",
            v.len()
        )));
    }
    let mut k = 0;
    Ok(VelocityField::from_index_fn(g, |_, _| {
        let out = (v[k], v[n + k]);
        k += 1;
        out
    }))
}

pub fn pressure_to_vector(p: &PressureField) -> DVector<f64> {
    let g = p.grid();
    DVector::from_iterator(g.pressure_count(), g.pressure_nodes().map(|(i1, i2)| p.get(i1, i2)))
}

pub fn vector_to_pressure(g: &GridSpec, v: &DVector<f64>) -> Result<PressureField> {
    if v.len() != g.pressure_count() {
        return Err(StokesError::Shape(format!(
            "vector of length {} is not a pressure on a grid with {} pressure nodes",
            v.len(),
            g.pressure_count()
        )));
    }
    let mut k = 0;
    Ok(PressureField::from_index_fn(g, |_, _| {
        k += 1;
        v[k - 1]
    }))
}

pub fn decomposed_to_vector(u: &DecomposedVelocity) -> DVector<f64> {
    let parts: Vec<DVector<f64>> = u.components().iter().map(velocity_to_vector).collect();
    let n = parts[0].len();
    let mut v = DVector::zeros(n * parts.len());
    for (a, part) in parts.iter().enumerate() {
        v.rows_mut(a * n, n).copy_from(part);
    }
    v
}

pub fn vector_to_decomposed(g: &GridSpec, m: usize, v: &DVector<f64>) -> Result<DecomposedVelocity> {
    let n = velocity_dim(g);
    if v.len() != m * n {
        return Err(StokesError::Shape(format!(
            "vector of length {} does not hold {m} velocity components",
            v.len()
        )));
    }
    DecomposedVelocity::new(
        (0..m)
            .map(|a| vector_to_velocity(g, &v.rows(a * n, n).into_owned()))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Orthogonal projector onto `ker(Mᵀ)` for a real matrix `M`, built from an
/// SVD with a relative singular-value cutoff.
pub fn kernel_of_transpose_projector(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-12 * (m.nrows().max(m.ncols()) as f64);
    let mut proj = DMatrix::identity(m.nrows(), m.nrows());
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff {
            let col = u.column(k);
            proj -= col * col.transpose();
        }
    }
    proj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{apply_divergence, apply_gradient, ViscousOperator};
    use crate::rng::Lcg64;

    #[test]
    fn laplacian_is_symmetric_with_stencil_rows() {
        let g = GridSpec::unit_square(4).unwrap();
        let a = assemble_dense(DenseOperator::NegLaplacian, &g).unwrap();
        assert_eq!(a.nrows(), 9);
        assert_eq!(a, a.transpose());
        // centre node couples to all four neighbours
        let c = interior_index(&g, 2, 2).unwrap();
        assert_eq!(a.row(c).iter().filter(|v| **v != 0.0).count(), 5);
        assert_eq!(a.row(c).sum(), 0.0);
        // corner node row sum keeps the two missing neighbour weights
        let k = interior_index(&g, 1, 1).unwrap();
        assert_eq!(a.row(k).sum(), 2.0 * 16.0);
    }

    #[test]
    fn identity_mask_is_identity_matrix() {
        let g = GridSpec::unit_square(4).unwrap();
        let id = MaskOperator::identity(&g);
        let m = assemble_dense(DenseOperator::Mask(&id), &g).unwrap();
        assert_eq!(m, DMatrix::identity(18, 18));
    }

    #[test]
    fn divergence_is_gradient_transpose() {
        let g = GridSpec::new(1.0, 2.0, 4, 5).unwrap();
        let b = assemble_dense(DenseOperator::Gradient, &g).unwrap();
        let bs = assemble_dense(DenseOperator::Divergence, &g).unwrap();
        assert!((b.transpose() - bs).abs().max() < 1e-14);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let g = GridSpec::new(1.0, 1.5, 4, 4).unwrap();
        let mut rng = Lcg64::new(77);
        let u = rng.velocity(&g);
        let p = rng.pressure(&g);
        let a = ViscousOperator::new(&g, 0.8).unwrap();
        let ad = assemble_dense(DenseOperator::Viscous { nu: 0.8 }, &g).unwrap();
        let lhs = velocity_to_vector(&a.apply(&u).unwrap());
        let rhs = &ad * velocity_to_vector(&u);
        assert!((lhs - &rhs).norm() <= 1e-13 * rhs.norm());
        let bd = assemble_dense(DenseOperator::Gradient, &g).unwrap();
        let bp = velocity_to_vector(&apply_gradient(&p));
        assert!((&bp - &bd * pressure_to_vector(&p)).norm() <= 1e-13 * bp.norm());
        let sd = assemble_dense(DenseOperator::Divergence, &g).unwrap();
        let du = pressure_to_vector(&apply_divergence(&u));
        assert!((&du - &sd * velocity_to_vector(&u)).norm() <= 1e-13 * du.norm());
    }

    #[test]
    fn conversions_round_trip() {
        let g = GridSpec::new(1.0, 1.0, 5, 4).unwrap();
        let mut rng = Lcg64::new(3);
        let u = rng.velocity(&g);
        assert_eq!(vector_to_velocity(&g, &velocity_to_vector(&u)).unwrap(), u);
        let p = rng.pressure(&g);
        assert_eq!(vector_to_pressure(&g, &pressure_to_vector(&p)).unwrap(), p);
        let uu = DecomposedVelocity::new(vec![u.clone(), rng.velocity(&g)]).unwrap();
        assert_eq!(vector_to_decomposed(&g, 2, &decomposed_to_vector(&uu)).unwrap(), uu);
        assert!(vector_to_velocity(&g, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn size_guard_refuses_large_grids() {
        let g = GridSpec::unit_square(200).unwrap();
        assert!(matches!(
            assemble_dense(DenseOperator::Viscous { nu: 1.0 }, &g),
            Err(StokesError::SizeGuard { .. })
        ));
    }

    #[test]
    fn triangular_halves_sum_to_full() {
        let g = GridSpec::unit_square(4).unwrap();
        let p = Partition::strips(&g, 2, 1).unwrap();
        let full = assemble_dense(DenseOperator::BlockFull { partition: &p, nu: 1.0 }, &g).unwrap();
        let lo = assemble_dense(DenseOperator::BlockLower { partition: &p, nu: 1.0 }, &g).unwrap();
        let up = assemble_dense(DenseOperator::BlockUpper { partition: &p, nu: 1.0 }, &g).unwrap();
        assert!((&lo + &up - &full).abs().max() <= 1e-12 * full.abs().max());
        assert!((lo.transpose() - up).abs().max() == 0.0);
    }
}
