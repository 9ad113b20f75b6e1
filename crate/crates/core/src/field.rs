//! Per-voxel fields on a [`Grid`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// One real value per voxel (density, relative source, speed, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Error::check_len("scalar field values", grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Evaluates `f(i, j, k)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f(i, j, k)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub(crate) fn check_grid(&self, grid: &Grid, what: &'static str) -> Result<()> {
        if &self.grid == grid {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!("{what} lives on a different grid")))
        }
    }
}

/// Three components per voxel, stored as `[all x | all y | all z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Error::check_len("vector field values", 3 * grid.len(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; 3 * grid.len()],
        }
    }

    /// Same vector at every voxel.
    pub fn uniform(grid: Grid, v: [f64; 3]) -> Self {
        let n = grid.len();
        let mut values = vec![0.0; 3 * n];
        for c in 0..3 {
            values[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = v[c]);
        }
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Self {
        let n = grid.len();
        let mut values = vec![0.0; 3 * n];
        for idx in 0..n {
            let [i, j, k] = grid.coords(idx);
            let v = f(i, j, k);
            for c in 0..3 {
                values[c * n + idx] = v[c];
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[axis * n..(axis + 1) * n]
    }

    pub fn at(&self, index: usize) -> [f64; 3] {
        let n = self.grid.len();
        [self.values[index], self.values[n + index], self.values[2 * n + index]]
    }

    /// Euclidean norm per voxel.
    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|i| {
                let [x, y, z] = self.at(i);
                libm::sqrt(x * x + y * y + z * z)
            })
            .collect();
        ScalarField {
            grid: self.grid,
            values,
        }
    }
}

/// Mask of voxels where the relative source is active. Entries are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField {
    grid: Grid,
    values: Vec<f64>,
}

impl IndicatorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Error::check_len("indicator values", grid.len(), values.len())?;
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("indicator entries must be exactly 0 or 1"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_mask(grid: Grid, mask: impl IntoIterator<Item = bool>) -> Result<Self> {
        let values: Vec<f64> = mask.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(grid, values)
    }

    pub fn ones(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![1.0; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.values[index] == 1.0
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }
}
