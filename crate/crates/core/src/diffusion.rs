//! Implicit diffusion operator `L = I − σΔt·Q` and its solvers.
//!
//! The default backend diagonalizes `L` exactly: the zero-flux Laplacian on a
//! uniform cell-centered grid is separable, and each 1D factor has the
//! orthonormal DCT-II vectors as eigenvectors. A solve is then three small dense
//! transforms per axis, a diagonal scaling, and three inverse transforms. The
//! conjugate gradient backend is kept for cross-checking.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{build_laplacian, Grid};
use crate::linalg::conjugate_gradient;
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionBackend {
    /// Exact separable eigendecomposition (direct solve).
    Spectral,
    /// Conjugate gradient on `L`, started from the right-hand side.
    ConjugateGradient { tol: f64, max_iter: usize },
}

impl DiffusionBackend {
    pub const DEFAULT_CG: DiffusionBackend = DiffusionBackend::ConjugateGradient {
        tol: 1e-10,
        max_iter: 1000,
    };
}

#[derive(Debug, Clone)]
struct SpectralFactors {
    /// Row-major `n_a × n_a` eigenvector matrices, `basis[i * n_a + k] = V[i][k]`.
    bases: [Vec<f64>; 3],
    /// `Vᵀ` per axis, row-major.
    transposed: [Vec<f64>; 3],
    /// `1 / (1 − σΔt (λx + λy + λz))` per 3D mode, linearized like voxels.
    inverse_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Backend {
    Identity,
    Spectral(SpectralFactors),
    ConjugateGradient { tol: f64, max_iter: usize },
}

/// `L = I − σΔt·Q` with a reusable solver for `L x = b`.
#[derive(Debug, Clone)]
pub struct DiffusionSolver {
    grid: Grid,
    sigma: f64,
    dt: f64,
    operator: SparseOperator,
    backend: Backend,
}

/// Builds `L` with the default (spectral) backend.
pub fn build_diffusion_solver(grid: &Grid, sigma: f64, dt: f64) -> Result<DiffusionSolver> {
    DiffusionSolver::new(grid, sigma, dt, DiffusionBackend::Spectral)
}

impl DiffusionSolver {
    pub fn new(grid: &Grid, sigma: f64, dt: f64, backend: DiffusionBackend) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("diffusion coefficient must be finite and nonnegative"));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("time step must be positive"));
        }
        let n = grid.len();
        let q = build_laplacian(grid);
        let operator = if sigma == 0.0 {
            SparseOperator::identity(n)
        } else {
            SparseOperator::identity(n).add_scaled(-sigma * dt, &q)
        };
        let backend = if sigma == 0.0 {
            Backend::Identity
        } else {
            match backend {
                DiffusionBackend::Spectral => Backend::Spectral(spectral_factors(grid, sigma * dt)),
                DiffusionBackend::ConjugateGradient { tol, max_iter } => {
                    if !(tol > 0.0) {
                        return Err(Error::invalid("CG tolerance must be positive"));
                    }
                    Backend::ConjugateGradient { tol, max_iter }
                }
            }
        };
        Ok(Self {
            grid: *grid,
            sigma,
            dt,
            operator,
            backend,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The assembled sparse `L`.
    pub fn operator(&self) -> &SparseOperator {
        &self.operator
    }

    /// Returns `L⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_into(b, &mut x)?;
        Ok(x)
    }

    /// Solves `L x = b`; for the CG backend `x` holds the initial guess on entry.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let n = self.grid.len();
        Error::check_len("diffusion right-hand side", n, b.len())?;
        Error::check_len("diffusion solution", n, x.len())?;
        match &self.backend {
            Backend::Identity => {
                x.copy_from_slice(b);
                Ok(())
            }
            Backend::Spectral(factors) => {
                x.copy_from_slice(b);
                factors.apply_inverse(&self.grid, x);
                Ok(())
            }
            Backend::ConjugateGradient { tol, max_iter } => {
                let op = &self.operator;
                let outcome = conjugate_gradient(|p, out| op.apply(p, out), b, x, *tol, *max_iter);
                if outcome.converged() {
                    Ok(())
                } else {
                    Err(Error::SolverNotConverged {
                        iterations: outcome.iterations,
                        relative_residual: outcome.relative_residual,
                    })
                }
            }
        }
    }
}

fn spectral_factors(grid: &Grid, sigma_dt: f64) -> SpectralFactors {
    let dims = grid.dims();
    let spacing = grid.spacing();
    let mut eigs: [Vec<f64>; 3] = Default::default();
    let bases: [Vec<f64>; 3] = core::array::from_fn(|axis| {
        let n = dims[axis];
        let h2 = spacing[axis] * spacing[axis];
        eigs[axis] = (0..n)
            .map(|k| -(2.0 - 2.0 * libm::cos(PI * k as f64 / n as f64)) / h2)
            .collect();
        let mut basis = vec![0.0; n * n];
        let nf = n as f64;
        for i in 0..n {
            for k in 0..n {
                basis[i * n + k] = if k == 0 {
                    libm::sqrt(1.0 / nf)
                } else {
                    libm::sqrt(2.0 / nf) * libm::cos(PI * k as f64 * (i as f64 + 0.5) / nf)
                };
            }
        }
        basis
    });
    let inverse_eigenvalues = (0..grid.len())
        .map(|idx| {
            let [a, b, c] = grid.coords(idx);
            1.0 / (1.0 - sigma_dt * (eigs[0][a] + eigs[1][b] + eigs[2][c]))
        })
        .collect();
    let transposed = core::array::from_fn(|axis| {
        let n = dims[axis];
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                t[k * n + i] = bases[axis][i * n + k];
            }
        }
        t
    });
    SpectralFactors {
        bases,
        transposed,
        inverse_eigenvalues,
    }
}

impl SpectralFactors {
    fn apply_inverse(&self, grid: &Grid, data: &mut [f64]) {
        let mut scratch = Vec::new();
        for axis in 0..3 {
            transform_axis(grid, axis, &self.transposed[axis], data, &mut scratch);
        }
        for (v, s) in data.iter_mut().zip(&self.inverse_eigenvalues) {
            *v *= s;
        }
        for axis in 0..3 {
            transform_axis(grid, axis, &self.bases[axis], data, &mut scratch);
        }
    }
}

/// Multiplies every grid line along `axis` by the row-major `matrix`.
fn transform_axis(grid: &Grid, axis: usize, matrix: &[f64], data: &mut [f64], scratch: &mut Vec<f64>) {
    let n = grid.dims()[axis];
    if n == 1 {
        return;
    }
    let inner = grid.stride(axis);
    let block = n * inner;
    scratch.resize(block, 0.0);
    for chunk in data.chunks_exact_mut(block) {
        if inner == 1 {
            for (o, slot) in scratch.iter_mut().enumerate() {
                let row = &matrix[o * n..(o + 1) * n];
                *slot = row.iter().zip(chunk.iter()).map(|(m, x)| m * x).sum();
            }
        } else {
            scratch.iter_mut().for_each(|x| *x = 0.0);
            for o in 0..n {
                let dst = &mut scratch[o * inner..(o + 1) * inner];
                for i in 0..n {
                    let w = matrix[o * n + i];
                    let src = &chunk[i * inner..(i + 1) * inner];
                    for (d, x) in dst.iter_mut().zip(src) {
                        *d += w * x;
                    }
                }
            }
        }
        chunk.copy_from_slice(scratch);
    }
}
