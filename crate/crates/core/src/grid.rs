//! Uniform rectangular grid, node sets and grid functions.
//!
//! All fields store the full closed node rectangle `0 <= i1 <= n1`,
//! `0 <= i2 <= n2` in row-major order (`i1` outer). Velocity fields keep
//! boundary entries at exactly zero; pressure fields keep entries outside the
//! pressure node set (the `i1 = 0` and `i2 = 0` lines) at exactly zero.

use crate::error::{Result, StokesError};

/// Geometry and resolution of the rectangle `(0, l1) x (0, l2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub l1: f64,
    pub l2: f64,
    /// Number of mesh intervals in direction 1; nodes run `0..=n1`.
    pub n1: usize,
    pub n2: usize,
    pub h1: f64,
    pub h2: f64,
}

impl GridSpec {
    pub fn new(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        if !(l1.is_finite() && l1 > 0.0 && l2.is_finite() && l2 > 0.0) {
            return Err(StokesError::InvalidGrid(format!(
                "edge lengths must be positive and finite (got l1={l1}, l2={l2})"
            )));
        }
        if n1 < 2 || n2 < 2 {
            return Err(StokesError::InvalidGrid(format!(
                "node counts must be at least 2 (got n1={n1}, n2={n2})"
            )));
        }
        Ok(Self {
            l1,
            l2,
            n1,
            n2,
            h1: l1 / n1 as f64,
            h2: l2 / n2 as f64,
        })
    }

    /// Unit square with `n x n` intervals.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, n)
    }

    /// Number of stored nodes, `(n1 + 1) * (n2 + 1)`.
    #[inline]
    pub fn len(&self) -> usize {
        (self.n1 + 1) * (self.n2 + 1)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        i1 * (self.n2 + 1) + i2
    }

    /// Cell area, the quadrature weight of every node.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.h1 * self.h2
    }

    #[inline]
    pub fn x1(&self, i1: usize) -> f64 {
        i1 as f64 * self.h1
    }

    #[inline]
    pub fn x2(&self, i2: usize) -> f64 {
        i2 as f64 * self.h2
    }

    #[inline]
    pub fn is_interior(&self, i1: usize, i2: usize) -> bool {
        i1 >= 1 && i1 < self.n1 && i2 >= 1 && i2 < self.n2
    }

    #[inline]
    pub fn is_pressure_node(&self, i1: usize, i2: usize) -> bool {
        i1 >= 1 && i1 <= self.n1 && i2 >= 1 && i2 <= self.n2
    }

    pub fn interior_count(&self) -> usize {
        (self.n1 - 1) * (self.n2 - 1)
    }

    pub fn pressure_count(&self) -> usize {
        self.n1 * self.n2
    }

    /// Interior nodes `ω` in canonical (row-major) order.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.n1).flat_map(move |i1| (1..self.n2).map(move |i2| (i1, i2)))
    }

    /// Pressure nodes `ω_p` in canonical (row-major) order.
    pub fn pressure_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.n1).flat_map(move |i1| (1..=self.n2).map(move |i2| (i1, i2)))
    }

    /// All nodes of the closed rectangle in canonical order.
    pub fn all_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.n1).flat_map(move |i1| (0..=self.n2).map(move |i2| (i1, i2)))
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(StokesError::Shape(format!(
                "grid {}x{} on [{}, {}] does not match grid {}x{} on [{}, {}]",
                self.n1, self.n2, self.l1, self.l2, other.n1, other.n2, other.l1, other.l2
            )))
        }
    }
}

/// Two-component grid function that vanishes on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: GridSpec,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            u1: vec![0.0; grid.len()],
            u2: vec![0.0; grid.len()],
        }
    }

    /// Builds a field from full-rectangle arrays; boundary entries are zeroed.
    pub fn from_arrays(grid: &GridSpec, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        if u1.len() != grid.len() || u2.len() != grid.len() {
            return Err(StokesError::Shape(format!(
                "velocity arrays of length {}/{} do not fit a grid with {} nodes",
                u1.len(),
                u2.len(),
                grid.len()
            )));
        }
        let mut field = Self { grid: *grid, u1, u2 };
        field.zero_boundary();
        Ok(field)
    }

    /// Samples `f(x1, x2) -> (u1, u2)` at interior nodes.
    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut field = Self::zeros(grid);
        for (i1, i2) in grid.interior_nodes() {
            let (a, b) = f(grid.x1(i1), grid.x2(i2));
            let k = grid.idx(i1, i2);
            field.u1[k] = a;
            field.u2[k] = b;
        }
        field
    }

    /// Builds a field by evaluating `f(i1, i2)` at interior nodes.
    pub fn from_index_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut field = Self::zeros(grid);
        for (i1, i2) in grid.interior_nodes() {
            let (a, b) = f(i1, i2);
            let k = grid.idx(i1, i2);
            field.u1[k] = a;
            field.u2[k] = b;
        }
        field
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    #[inline]
    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> (f64, f64) {
        let k = self.grid.idx(i1, i2);
        (self.u1[k], self.u2[k])
    }

    /// Mutable access to both components. Callers must leave boundary entries
    /// at zero; [`VelocityField::zero_boundary`] restores the invariant.
    pub(crate) fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u1, &mut self.u2)
    }

    pub(crate) fn zero_boundary(&mut self) {
        let g = self.grid;
        for i1 in 0..=g.n1 {
            for i2 in [0, g.n2] {
                let k = g.idx(i1, i2);
                self.u1[k] = 0.0;
                self.u2[k] = 0.0;
            }
        }
        for i2 in 0..=g.n2 {
            for i1 in [0, g.n1] {
                let k = g.idx(i1, i2);
                self.u1[k] = 0.0;
                self.u2[k] = 0.0;
            }
        }
    }

    /// True iff every boundary entry is exactly zero.
    pub fn boundary_is_zero(&self) -> bool {
        self.grid
            .all_nodes()
            .filter(|&(i1, i2)| !self.grid.is_interior(i1, i2))
            .all(|(i1, i2)| {
                let k = self.grid.idx(i1, i2);
                self.u1[k] == 0.0 && self.u2[k] == 0.0
            })
    }

    /// Weighted scalar product over interior nodes; fails on grid mismatch.
    pub fn dot(&self, other: &VelocityField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &VelocityField) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for i1 in 1..g.n1 {
            let row = g.idx(i1, 0);
            for k in row + 1..row + g.n2 {
                acc += self.u1[k] * other.u1[k] + self.u2[k] * other.u2[k];
            }
        }
        acc * g.weight()
    }

    pub fn norm(&self) -> f64 {
        self.dot_unchecked(self).sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &VelocityField) -> Result<()> {
        self.grid.ensure_same(&x.grid)?;
        self.axpy_unchecked(a, x);
        Ok(())
    }

    pub(crate) fn axpy_unchecked(&mut self, a: f64, x: &VelocityField) {
        for (s, v) in self.u1.iter_mut().zip(&x.u1) {
            *s += a * v;
        }
        for (s, v) in self.u2.iter_mut().zip(&x.u2) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.u1.iter_mut().for_each(|v| *v *= a);
        self.u2.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> VelocityField {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `a - b`
    pub fn sub(&self, other: &VelocityField) -> Result<VelocityField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &VelocityField) -> Result<VelocityField> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.u1.iter().chain(&self.u2).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.u1.iter().chain(&self.u2).fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Free function form of [`VelocityField::dot`].
pub fn dot_velocity(a: &VelocityField, b: &VelocityField) -> Result<f64> {
    a.dot(b)
}

pub fn norm_velocity(a: &VelocityField) -> f64 {
    a.norm()
}

/// Scalar grid function on the pressure nodes `ω_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    grid: GridSpec,
    p: Vec<f64>,
}

impl PressureField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            p: vec![0.0; grid.len()],
        }
    }

    /// Builds a field from a full-rectangle array; entries off `ω_p` are zeroed.
    pub fn from_array(grid: &GridSpec, p: Vec<f64>) -> Result<Self> {
        if p.len() != grid.len() {
            return Err(StokesError::Shape(format!(
                "pressure array of length {} does not fit a grid with {} nodes",
                p.len(),
                grid.len()
            )));
        }
        let mut field = Self { grid: *grid, p };
        field.zero_outside();
        Ok(field)
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for (i1, i2) in grid.pressure_nodes() {
            field.p[grid.idx(i1, i2)] = f(grid.x1(i1), grid.x2(i2));
        }
        field
    }

    pub fn from_index_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for (i1, i2) in grid.pressure_nodes() {
            field.p[grid.idx(i1, i2)] = f(i1, i2);
        }
        field
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self::from_index_fn(grid, |_, _| c)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.p
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.p[self.grid.idx(i1, i2)]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.p
    }

    fn zero_outside(&mut self) {
        let g = self.grid;
        for i2 in 0..=g.n2 {
            self.p[g.idx(0, i2)] = 0.0;
        }
        for i1 in 0..=g.n1 {
            self.p[g.idx(i1, 0)] = 0.0;
        }
    }

    pub fn dot(&self, other: &PressureField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.dot_unchecked(other))
    }

    pub(crate) fn dot_unchecked(&self, other: &PressureField) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for i1 in 1..=g.n1 {
            let row = g.idx(i1, 0);
            for k in row + 1..=row + g.n2 {
                acc += self.p[k] * other.p[k];
            }
        }
        acc * g.weight()
    }

    pub fn norm(&self) -> f64 {
        self.dot_unchecked(self).sqrt()
    }

    pub(crate) fn axpy_unchecked(&mut self, a: f64, x: &PressureField) {
        for (s, v) in self.p.iter_mut().zip(&x.p) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.p.iter_mut().for_each(|v| *v *= a);
    }

    /// Weighted mean over `ω_p`.
    pub fn mean(&self) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for i1 in 1..=g.n1 {
            let row = g.idx(i1, 0);
            for k in row + 1..=row + g.n2 {
                acc += self.p[k];
            }
        }
        // uniform weights cancel between numerator and denominator
        acc / g.pressure_count() as f64
    }

    /// Subtracts the mean in place.
    pub fn deflate(&mut self) {
        let g = self.grid;
        let mean = self.mean();
        for (i1, i2) in g.pressure_nodes() {
            self.p[g.idx(i1, i2)] -= mean;
        }
    }

    pub fn deflated(&self) -> PressureField {
        let mut out = self.clone();
        out.deflate();
        out
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|v| v.is_finite())
    }
}

pub fn pressure_mean(p: &PressureField) -> f64 {
    p.mean()
}

pub fn deflate_pressure(p: &PressureField) -> PressureField {
    p.deflated()
}

/// Ordered tuple of velocity fields on one grid, an element of `H^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedVelocity {
    components: Vec<VelocityField>,
}

impl DecomposedVelocity {
    pub fn new(components: Vec<VelocityField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| StokesError::Shape("a decomposed velocity needs at least one component".into()))?;
        let grid = *first.grid();
        for c in &components[1..] {
            grid.ensure_same(c.grid())?;
        }
        Ok(Self { components })
    }

    pub fn zeros(grid: &GridSpec, m: usize) -> Result<Self> {
        Self::new(vec![VelocityField::zeros(grid); m])
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.components.len()
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    #[inline]
    pub fn components(&self) -> &[VelocityField] {
        &self.components
    }

    #[inline]
    pub fn component(&self, alpha: usize) -> &VelocityField {
        &self.components[alpha]
    }

    pub(crate) fn component_mut(&mut self, alpha: usize) -> &mut VelocityField {
        &mut self.components[alpha]
    }

    pub fn into_components(self) -> Vec<VelocityField> {
        self.components
    }

    pub fn ensure_compatible(&self, other: &DecomposedVelocity) -> Result<()> {
        if self.m() != other.m() {
            return Err(StokesError::Shape(format!(
                "decomposed fields have {} and {} components",
                self.m(),
                other.m()
            )));
        }
        self.grid().ensure_same(other.grid())
    }

    /// Product-space scalar product `(U, V)_m`.
    pub fn dot(&self, other: &DecomposedVelocity) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.dot_unchecked(b))
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c.dot_unchecked(c)).sum::<f64>().sqrt()
    }

    pub fn axpy(&mut self, a: f64, x: &DecomposedVelocity) -> Result<()> {
        self.ensure_compatible(x)?;
        for (s, v) in self.components.iter_mut().zip(&x.components) {
            s.axpy_unchecked(a, v);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(VelocityField::is_finite)
    }
}

pub fn dot_decomposed(a: &DecomposedVelocity, b: &DecomposedVelocity) -> Result<f64> {
    a.dot(b)
}

pub fn norm_decomposed(a: &DecomposedVelocity) -> f64 {
    a.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_grid_counts() {
        let g = GridSpec::new(1.0, 1.0, 4, 4).unwrap();
        assert_eq!(g.h1, 0.25);
        assert_eq!(g.h2, 0.25);
        assert_eq!(g.interior_nodes().count(), 9);
        assert_eq!(g.pressure_nodes().count(), 16);
        assert_eq!(g.interior_count(), 9);
        assert_eq!(g.pressure_count(), 16);
    }

    #[test]
    fn anisotropic_steps() {
        let g = GridSpec::new(2.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.h1, 0.5);
        assert_eq!(g.h2, 0.5);
        assert!((g.h1 * g.n1 as f64 - g.l1).abs() <= f64::EPSILON * g.l1);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            GridSpec::new(1.0, 1.0, 1, 4),
            Err(StokesError::InvalidGrid(_))
        ));
        assert!(GridSpec::new(0.0, 1.0, 4, 4).is_err());
        assert!(GridSpec::new(1.0, -1.0, 4, 4).is_err());
        assert!(GridSpec::new(f64::NAN, 1.0, 4, 4).is_err());
    }

    #[test]
    fn construction_zeroes_boundary() {
        let g = GridSpec::unit_square(5).unwrap();
        let u = VelocityField::from_arrays(&g, vec![1.0; g.len()], vec![-2.0; g.len()]).unwrap();
        assert!(u.boundary_is_zero());
        assert_eq!(u.get(2, 3), (1.0, -2.0));
        assert_eq!(u.get(0, 3), (0.0, 0.0));
        assert_eq!(u.get(5, 5), (0.0, 0.0));
    }

    #[test]
    fn constant_field_dot() {
        let g = GridSpec::unit_square(4).unwrap();
        let u = VelocityField::from_fn(&g, |_, _| (1.0, 1.0));
        assert_eq!(u.dot(&u).unwrap(), 1.125);
        let z = VelocityField::zeros(&g);
        assert_eq!(z.dot(&u).unwrap(), 0.0);
    }

    #[test]
    fn dot_rejects_mismatch() {
        let a = VelocityField::zeros(&GridSpec::unit_square(4).unwrap());
        let b = VelocityField::zeros(&GridSpec::unit_square(5).unwrap());
        assert!(matches!(a.dot(&b), Err(StokesError::Shape(_))));
    }

    #[test]
    fn pressure_mean_and_deflate() {
        let g = GridSpec::new(1.0, 2.0, 3, 5).unwrap();
        let p = PressureField::constant(&g, 3.5);
        assert!((p.mean() - 3.5).abs() < 1e-15);
        let d = p.deflated();
        assert!(d.values().iter().all(|v| v.abs() < 1e-15));
        let z = PressureField::zeros(&g);
        assert_eq!(z.mean(), 0.0);
        assert_eq!(z.deflated(), z);
    }

    #[test]
    fn pressure_outside_nodes_zeroed() {
        let g = GridSpec::unit_square(3).unwrap();
        let p = PressureField::from_array(&g, vec![1.0; g.len()]).unwrap();
        assert_eq!(p.get(0, 2), 0.0);
        assert_eq!(p.get(2, 0), 0.0);
        assert_eq!(p.get(3, 3), 1.0);
    }

    #[test]
    fn decomposed_requires_components() {
        assert!(DecomposedVelocity::new(vec![]).is_err());
        let g = GridSpec::unit_square(4).unwrap();
        let h = GridSpec::unit_square(6).unwrap();
        assert!(DecomposedVelocity::new(vec![VelocityField::zeros(&g), VelocityField::zeros(&h)]).is_err());
        let a = DecomposedVelocity::zeros(&g, 2).unwrap();
        let b = DecomposedVelocity::zeros(&g, 3).unwrap();
        assert!(matches!(a.dot(&b), Err(StokesError::Shape(_))));
    }

    #[test]
    fn single_component_matches_velocity_dot() {
        let g = GridSpec::unit_square(4).unwrap();
        let u = VelocityField::from_index_fn(&g, |i, j| (i as f64, j as f64 * 0.5));
        let uu = DecomposedVelocity::new(vec![u.clone()]).unwrap();
        assert_eq!(uu.dot(&uu).unwrap(), u.dot(&u).unwrap());
    }
}
