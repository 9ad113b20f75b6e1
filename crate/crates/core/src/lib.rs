//! Unbalanced regularized optimal mass transport (urOMT) on 3D density volumes.
//!
//! Given two density images and an indicator of where mass may be created or
//! destroyed, the solver looks for a velocity field `v` and a relative source
//! `r` that carry the first image towards the second through a discretized
//! source / advection / diffusion process, minimizing
//!
//! ```text
//! Γ(v, r) = Γ₁ (kinetic energy) + α Γ₂ (Fisher-Rao source cost) + β Γ₃ (end-point mismatch)
//! ```
//!
//! The crate is `no_std` with `alloc`. Everything that touches the file system
//! lives in the companion `uromt` crate.
//!
//! Module map:
//! - [`grid`], [`field`], [`sparse`], [`diffusion`]: discretization, the Neumann
//!   Laplacian and the implicit diffusion operator.
//! - [`transport`]: the operator-split forward solve.
//! - [`objective`]: the discrete cost.
//! - [`sensitivity`]: Jacobian products, gradient, Gauss-Newton Hessian.
//! - [`solver`]: Gauss-Newton outer loop and the multi-frame pipeline.
//! - [`analysis`]: Eulerian maps, pathlines, Péclet numbers, NMSE / PCTM.
//! - [`synth`]: the Gaussian-sphere benchmark series.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod diffusion;
mod error;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod objective;
pub mod sensitivity;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod transport;

pub use diffusion::{DiffusionBackend, DiffusionSolver};
pub use error::{Error, Result};
pub use field::{IndicatorField, ScalarField, VectorField};
pub use grid::Grid;
pub use objective::CostBreakdown;
pub use sensitivity::{Controls, GradientVector, LinearizationCache};
pub use solver::{IndicatorSchedule, SequenceResult, TerminationReason, TransportSolution, UromtConfig};
pub use sparse::SparseOperator;
