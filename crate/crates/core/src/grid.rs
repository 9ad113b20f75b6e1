//! Cell-centered grid and the Neumann Laplacian.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sparse::SparseOperator;

/// Uniform cell-centered 3D grid.
///
/// Voxels are linearized with x fastest, then y, then z:
/// `index = i + n1 * (j + n2 * k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid("grid spacings must be positive and finite"));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .ok_or_else(|| Error::invalid("grid voxel count overflows usize"))?;
        Ok(Self { dims, spacing })
    }

    /// Unit-spacing grid.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Total voxel count `n1 * n2 * n3`.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `Δx Δy Δz`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [n1, n2, _] = self.dims;
        [index % n1, (index / n1) % n2, index / (n1 * n2)]
    }

    /// Linear stride of one step along `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    /// Physical position of a voxel center, with voxel `(0,0,0)` at the origin.
    pub fn center(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    /// Upper corner of the box spanned by voxel centers.
    pub fn extent(&self) -> [f64; 3] {
        [
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
            (self.dims[2] - 1) as f64 * self.spacing[2],
        ]
    }
}

/// Second-difference Laplacian with a zero-flux (mirrored ghost cell) closure.
///
/// Each row and column sums to zero, and the operator is exactly symmetric.
pub fn build_laplacian(grid: &Grid) -> SparseOperator {
    let n = grid.len();
    let dims = grid.dims();
    let inv_h2 = grid.spacing().map(|h| 1.0 / (h * h));
    let mut triplets = Vec::with_capacity(7 * n);
    for idx in 0..n {
        let c = grid.coords(idx);
        let mut diag = 0.0;
        for axis in 0..3 {
            let stride = grid.stride(axis);
            if c[axis] > 0 {
                triplets.push((idx, idx - stride, inv_h2[axis]));
                diag -= inv_h2[axis];
            }
            if c[axis] + 1 < dims[axis] {
                triplets.push((idx, idx + stride, inv_h2[axis]));
                diag -= inv_h2[axis];
            }
        }
        if diag != 0.0 {
            triplets.push((idx, idx, diag));
        }
    }
    SparseOperator::from_triplets(n, n, triplets)
}
