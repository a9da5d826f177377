//! Overlapping vertical strips and their square-root partition functions.
//!
//! Strips split the `i1` direction. The raw weights `w_α` form an ordinary
//! partition of unity, with `w_α ≡ 1` in each strip core and linear ramps
//! across each overlap zone. The masks are `η_α = sqrt(w_α)`, so
//! `Σ_α η_α² = 1` at every node.

use crate::error::{Result, StokesError};
use crate::grid::{DecomposedVelocity, GridSpec, VelocityField};
use crate::operators::MaskOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    grid: GridSpec,
    overlap: usize,
    masks: Vec<MaskOperator>,
    /// Inclusive `i1` range where `η_α > 0`.
    extents: Vec<(usize, usize)>,
}

/// Nominal strip interfaces `b_0 = 0 < b_1 < … < b_m = n1`. The first
/// `n1 mod m` strips get one extra interval.
fn interfaces(n1: usize, m: usize) -> Vec<usize> {
    let (q, r) = (n1 / m, n1 % m);
    let mut b = Vec::with_capacity(m + 1);
    b.push(0);
    for k in 0..m {
        let width = q + usize::from(k < r);
        b.push(b[k] + width);
    }
    b
}

impl Partition {
    /// Single subdomain covering the whole rectangle.
    pub fn whole(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            overlap: 0,
            masks: vec![MaskOperator::identity(grid)],
            extents: vec![(0, grid.n1)],
        }
    }

    /// `m` vertical strips with `overlap` ramp nodes around each interface.
    ///
    /// For an interface at node `b`, the ramp nodes are
    /// `b - overlap/2 ..= b - overlap/2 + overlap - 1` (integer division), so
    /// for even overlaps the extra node falls on the lower-index side. With no
    /// overlap the masks are indicators and node `b` belongs to the upper strip.
    pub fn strips(grid: &GridSpec, m: usize, overlap: usize) -> Result<Self> {
        if m == 0 {
            return Err(StokesError::InvalidPartition("need at least one subdomain".into()));
        }
        if m > grid.n1 {
            return Err(StokesError::InvalidPartition(format!(
                "{m} strips do not fit into {} intervals",
                grid.n1
            )));
        }
        if m > 1 && grid.n1 / m <= overlap {
            return Err(StokesError::InvalidPartition(format!(
                "overlap of {overlap} nodes needs strips wider than {} intervals",
                grid.n1 / m
            )));
        }
        if m == 1 {
            return Ok(Self::whole(grid));
        }

        let b = interfaces(grid.n1, m);
        let shift = overlap / 2;
        let denom = (overlap + 1) as f64;
        // Weight of the upper side of interface k at node i1; interface 0 is
        // the left edge (weight 1 everywhere) and interface m the right edge.
        let upper = |k: usize, i1: usize| -> f64 {
            if k == 0 {
                return 1.0;
            }
            if k == m {
                return 0.0;
            }
            let start = b[k] - shift;
            if i1 < start {
                0.0
            } else if i1 >= start + overlap {
                1.0
            } else {
                (i1 + 1 - start) as f64 / denom
            }
        };

        let mut masks = Vec::with_capacity(m);
        let mut extents = Vec::with_capacity(m);
        for alpha in 0..m {
            let column: Vec<f64> = (0..=grid.n1)
                .map(|i1| {
                    let lo = upper(alpha, i1);
                    let hi = upper(alpha + 1, i1);
                    // Zones never overlap, so at most one of the two factors
                    // is fractional and the difference is exact.
                    if hi == 0.0 {
                        lo
                    } else if lo == 1.0 {
                        1.0 - hi
                    } else {
                        0.0
                    }
                })
                .map(f64::sqrt)
                .collect();
            let first = column.iter().position(|&v| v > 0.0).unwrap_or(0);
            let last = column.iter().rposition(|&v| v > 0.0).unwrap_or(0);
            extents.push((first, last));
            let eta: Vec<f64> = grid.all_nodes().map(|(i1, _)| column[i1]).collect();
            masks.push(MaskOperator::new(grid, eta)?);
        }

        Ok(Self {
            grid: *grid,
            overlap,
            masks,
            extents,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.masks.len()
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn overlap(&self) -> usize {
        self.overlap
    }

    #[inline]
    pub fn masks(&self) -> &[MaskOperator] {
        &self.masks
    }

    #[inline]
    pub fn mask(&self, alpha: usize) -> &MaskOperator {
        &self.masks[alpha]
    }

    /// Inclusive `i1` range on which `η_α` is positive.
    #[inline]
    pub fn extent(&self, alpha: usize) -> (usize, usize) {
        self.extents[alpha]
    }

    /// `max_x |Σ_α η_α(x)² - 1|` over all nodes.
    pub fn normalization_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| {
                let s: f64 = self.masks.iter().map(|mk| mk.eta()[k] * mk.eta()[k]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `u_α = χ_α u`.
    pub fn decompose(&self, u: &VelocityField) -> Result<DecomposedVelocity> {
        self.grid.ensure_same(u.grid())?;
        DecomposedVelocity::new(self.masks.iter().map(|mk| mk.apply(u)).collect::<Result<Vec<_>>>()?)
    }

    /// `u = Σ_α χ_α u_α`.
    pub fn recompose(&self, parts: &DecomposedVelocity) -> Result<VelocityField> {
        if parts.m() != self.m() {
            return Err(StokesError::Shape(format!(
                "partition has {} subdomains but the field has {} components",
                self.m(),
                parts.m()
            )));
        }
        self.grid.ensure_same(parts.grid())?;
        let mut out = VelocityField::zeros(&self.grid);
        let mut tmp = VelocityField::zeros(&self.grid);
        for (mk, c) in self.masks.iter().zip(parts.components()) {
            mk.apply_into(c, &mut tmp);
            out.axpy_unchecked(1.0, &tmp);
        }
        Ok(out)
    }
}

pub fn build_strips(grid: &GridSpec, m: usize, overlap: usize) -> Result<Partition> {
    Partition::strips(grid, m, overlap)
}

pub fn decompose(p: &Partition, u: &VelocityField) -> Result<DecomposedVelocity> {
    p.decompose(u)
}

pub fn recompose(p: &Partition, parts: &DecomposedVelocity) -> Result<VelocityField> {
    p.recompose(parts)
}
