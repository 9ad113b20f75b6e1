//! Jacobian products, gradient and Gauss-Newton Hessian of the discrete cost.
//!
//! With `ρ_{k} = L⁻¹ S(v_{k−1}) R(r_{k−1}) ρ_{k−1}`, the sensitivities of the
//! densities with respect to the controls are block lower triangular:
//!
//! ```text
//! ∂ρ_{j+1}/∂v_j = L⁻¹ B_j            B_j = ∂/∂v_j [S(v_j) R(r_j) ρ_j]
//! ∂ρ_{j+1}/∂r_j = Δt L⁻¹ S(v_j) diag(ρ_j ⊙ χ_j)
//! ∂ρ_{k+1}/∂ρ_k = L⁻¹ S(v_k) R(r_k)
//! ```
//!
//! None of these matrices is formed. Forward products (`J x`) run the chain
//! once; transpose products (`Jᵀ w`) run it backwards, using `Lᵀ = L`.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::diffusion::DiffusionSolver;
use crate::error::{Error, Result};
use crate::field::{IndicatorField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::linalg::dot;
use crate::objective::{chain_cost, CostBreakdown};
use crate::sparse::SparseOperator;
use crate::transport::{forward_chain, TimeSeries};

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Optimization variables `[v; r]` for `m` steps, stacked per step.
///
/// Every mutation stamps a new version token; a [`LinearizationCache`] refuses
/// to serve controls whose token differs from the one it was built with.
#[derive(Debug)]
pub struct Controls {
    grid: Grid,
    steps: usize,
    v: Vec<f64>,
    r: Vec<f64>,
    token: u64,
}

impl Clone for Controls {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            steps: self.steps,
            v: self.v.clone(),
            r: self.r.clone(),
            token: self.token,
        }
    }
}

impl Controls {
    pub fn zeros(grid: Grid, steps: usize) -> Self {
        let n = grid.len();
        Self {
            grid,
            steps,
            v: vec![0.0; 3 * steps * n],
            r: vec![0.0; steps * n],
            token: fresh_token(),
        }
    }

    pub fn new(grid: Grid, steps: usize, v: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        Error::check_len("stacked velocity", 3 * steps * n, v.len())?;
        Error::check_len("stacked relative source", steps * n, r.len())?;
        Ok(Self {
            grid,
            steps,
            v,
            r,
            token: fresh_token(),
        })
    }

    pub fn from_series(series: &TimeSeries) -> Self {
        Self {
            grid: *series.grid(),
            steps: series.steps(),
            v: series.flat_velocity(),
            r: series.flat_source(),
            token: fresh_token(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn token(&self) -> u64 {
        self.token
    }

    /// Stacked velocity, `3mn` entries.
    pub fn velocity(&self) -> &[f64] {
        &self.v
    }

    /// Stacked relative source, `mn` entries.
    pub fn source(&self) -> &[f64] {
        &self.r
    }

    pub fn velocity_at(&self, step: usize) -> VectorField {
        let n3 = 3 * self.grid.len();
        VectorField::new(self.grid, self.v[step * n3..(step + 1) * n3].to_vec()).unwrap()
    }

    pub fn source_at(&self, step: usize) -> ScalarField {
        let n = self.grid.len();
        ScalarField::new(self.grid, self.r[step * n..(step + 1) * n].to_vec()).unwrap()
    }

    /// `[v; r]` as one `4mn` vector.
    pub fn stacked(&self) -> Vec<f64> {
        let mut x = self.v.clone();
        x.extend_from_slice(&self.r);
        x
    }

    /// `[v; r] += scale · direction` with `direction` laid out like [`Controls::stacked`].
    pub fn add_scaled(&mut self, scale: f64, direction: &[f64]) -> Result<()> {
        Error::check_len("control update", self.v.len() + self.r.len(), direction.len())?;
        let (dv, dr) = direction.split_at(self.v.len());
        crate::linalg::axpy(scale, dv, &mut self.v);
        crate::linalg::axpy(scale, dr, &mut self.r);
        self.token = fresh_token();
        Ok(())
    }

    /// Mutable access to both blocks; bumps the version token.
    pub fn modify(&mut self, f: impl FnOnce(&mut [f64], &mut [f64])) {
        f(&mut self.v, &mut self.r);
        self.token = fresh_token();
    }

    pub fn to_series(&self, dt: f64, indicators: Vec<IndicatorField>) -> Result<TimeSeries> {
        TimeSeries::new(
            dt,
            (0..self.steps).map(|i| self.velocity_at(i)).collect(),
            (0..self.steps).map(|i| self.source_at(i)).collect(),
            indicators,
        )
    }
}

/// `g = [g_v; g_r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    /// `3mn` entries, stacked like the velocity.
    pub v: Vec<f64>,
    /// `mn` entries.
    pub r: Vec<f64>,
}

impl GradientVector {
    pub fn stacked(&self) -> Vec<f64> {
        let mut g = self.v.clone();
        g.extend_from_slice(&self.r);
        g
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.v, &self.v) + dot(&self.r, &self.r))
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(&self.r).all(|x| x.is_finite())
    }
}

/// Forward chain plus every per-step operator needed for derivative products,
/// valid for exactly one set of controls.
#[derive(Debug, Clone)]
pub struct LinearizationCache<'a> {
    diffusion: &'a DiffusionSolver,
    grid: Grid,
    steps: usize,
    dt: f64,
    token: u64,
    v: Vec<f64>,
    r: Vec<f64>,
    chi: Vec<f64>,
    /// `ρ_0 … ρ_m`.
    densities: Vec<Vec<f64>>,
    /// `S(v_i)ᵀ`, rows indexed by source voxel.
    pic_transposed: Vec<SparseOperator>,
    /// `B_iᵀ`, `3n × n`.
    jacobian_transposed: Vec<SparseOperator>,
    negative_source_voxels: usize,
}

/// Runs the forward chain and builds `S(v_i)`, `R(r_i)` and `B_i` for every step.
pub fn build_cache<'a>(
    rho0: &ScalarField,
    controls: &Controls,
    indicators: &[IndicatorField],
    diffusion: &'a DiffusionSolver,
) -> Result<LinearizationCache<'a>> {
    rho0.check_grid(controls.grid(), "initial density")?;
    Error::check_len("indicator steps", controls.steps(), indicators.len())?;
    let chi: Vec<f64> = indicators.iter().flat_map(|c| c.values().iter().copied()).collect();
    LinearizationCache::build(rho0.values(), controls, chi, diffusion)
}

impl<'a> LinearizationCache<'a> {
    pub(crate) fn build(rho0: &[f64], controls: &Controls, chi: Vec<f64>, diffusion: &'a DiffusionSolver) -> Result<Self> {
        if diffusion.grid() != controls.grid() {
            return Err(Error::invalid("diffusion solver and controls use different grids"));
        }
        let chain = forward_chain(rho0, controls.velocity(), controls.source(), &chi, diffusion, true)?;
        Ok(Self {
            diffusion,
            grid: *controls.grid(),
            steps: controls.steps(),
            dt: diffusion.dt(),
            token: controls.token(),
            v: controls.velocity().to_vec(),
            r: controls.source().to_vec(),
            chi,
            densities: chain.densities,
            pic_transposed: chain.pic_transposed,
            jacobian_transposed: chain.jacobian_transposed,
            negative_source_voxels: chain.negative_source_voxels,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn token(&self) -> u64 {
        self.token
    }

    /// `ρ_0 … ρ_m` as raw vectors.
    pub fn densities(&self) -> &[Vec<f64>] {
        &self.densities
    }

    pub fn final_density(&self) -> &[f64] {
        &self.densities[self.steps]
    }

    pub fn negative_source_voxels(&self) -> usize {
        self.negative_source_voxels
    }

    /// The advection Jacobian `B_i` (`n × 3n`).
    pub fn advection_jacobian(&self, step: usize) -> SparseOperator {
        self.jacobian_transposed[step].transpose()
    }

    /// The averaging matrix `S(v_i)`.
    pub fn pic_matrix(&self, step: usize) -> SparseOperator {
        self.pic_transposed[step].transpose()
    }

    pub fn ensure_current(&self, controls: &Controls) -> Result<()> {
        if controls.token() == self.token {
            Ok(())
        } else {
            Err(Error::StaleCache {
                cache_token: self.token,
                controls_token: controls.token(),
            })
        }
    }

    pub fn cost(&self, target: &[f64], alpha: f64, beta: f64) -> CostBreakdown {
        chain_cost(&self.grid, &self.densities, &self.v, &self.r, &self.chi, target, alpha, beta, self.dt)
    }

    fn n(&self) -> usize {
        self.grid.len()
    }

    /// `δρ_1 … δρ_m = J_v x_v + J_r x_r`.
    fn linearized_chain(&self, x_v: &[f64], x_r: &[f64], keep_all: bool) -> Result<Vec<Vec<f64>>> {
        let n = self.n();
        let m = self.steps;
        Error::check_len("velocity direction", 3 * m * n, x_v.len())?;
        Error::check_len("source direction", m * n, x_r.len())?;
        let mut out = Vec::with_capacity(if keep_all { m } else { 1 });
        let mut delta = vec![0.0; n];
        let mut mixed = vec![0.0; n];
        let mut moved = vec![0.0; n];
        let mut pushed = vec![0.0; n];
        for i in 0..m {
            let rho = &self.densities[i];
            let r = &self.r[i * n..(i + 1) * n];
            let chi = &self.chi[i * n..(i + 1) * n];
            let xr = &x_r[i * n..(i + 1) * n];
            for p in 0..n {
                mixed[p] = (1.0 + self.dt * r[p] * chi[p]) * delta[p] + self.dt * rho[p] * chi[p] * xr[p];
            }
            self.pic_transposed[i].apply_transpose(&mixed, &mut moved);
            self.jacobian_transposed[i].apply_transpose(&x_v[3 * i * n..3 * (i + 1) * n], &mut pushed);
            for p in 0..n {
                moved[p] += pushed[p];
            }
            delta = self.diffusion.solve(&moved)?;
            if keep_all {
                out.push(delta.clone());
            }
        }
        if !keep_all {
            out.push(delta);
        }
        Ok(out)
    }

    /// Back-propagates adjoint seeds. `seed(k, λ)` adds `∂/∂ρ_k` for `k = 1..=m` into `λ`.
    fn adjoint(&self, mut seed: impl FnMut(usize, &mut [f64])) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let m = self.steps;
        let mut gv = vec![0.0; 3 * m * n];
        let mut gr = vec![0.0; m * n];
        let mut mu = vec![0.0; n];
        let mut back = vec![0.0; n];
        for k in (1..=m).rev() {
            seed(k, &mut mu);
            let z = self.diffusion.solve(&mu)?;
            let i = k - 1;
            self.jacobian_transposed[i].apply(&z, &mut gv[3 * i * n..3 * (i + 1) * n]);
            self.pic_transposed[i].apply(&z, &mut back);
            let rho = &self.densities[i];
            let r = &self.r[i * n..(i + 1) * n];
            let chi = &self.chi[i * n..(i + 1) * n];
            let gr_i = &mut gr[i * n..(i + 1) * n];
            for p in 0..n {
                gr_i[p] = self.dt * rho[p] * chi[p] * back[p];
                mu[p] = (1.0 + self.dt * r[p] * chi[p]) * back[p];
            }
        }
        Ok((gv, gr))
    }

    /// All density perturbations `J_v x_v + J_r x_r`, one block per `ρ_1 … ρ_m`.
    pub fn jac_apply(&self, controls: &Controls, x_v: &[f64], x_r: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.ensure_current(controls)?;
        self.linearized_chain(x_v, x_r, true)
    }

    pub fn jac_v_apply(&self, controls: &Controls, x_v: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.jac_apply(controls, x_v, &vec![0.0; self.steps * self.n()])
    }

    pub fn jac_r_apply(&self, controls: &Controls, x_r: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.jac_apply(controls, &vec![0.0; 3 * self.steps * self.n()], x_r)
    }

    /// `J^m_v x_v + J^m_r x_r`: perturbation of the final density only.
    pub fn final_jac_apply(&self, controls: &Controls, x_v: &[f64], x_r: &[f64]) -> Result<Vec<f64>> {
        self.ensure_current(controls)?;
        Ok(self.linearized_chain(x_v, x_r, false)?.pop().unwrap())
    }

    /// `(J_vᵀ w, J_rᵀ w)` for `w = [w_1; …; w_m]` (length `mn`).
    pub fn jac_transpose_apply(&self, controls: &Controls, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.ensure_current(controls)?;
        let n = self.n();
        Error::check_len("adjoint weights", self.steps * n, w.len())?;
        self.adjoint(|k, mu| {
            for (a, b) in mu.iter_mut().zip(&w[(k - 1) * n..k * n]) {
                *a += b;
            }
        })
    }

    pub fn jac_v_transpose_apply(&self, controls: &Controls, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jac_transpose_apply(controls, w)?.0)
    }

    pub fn jac_r_transpose_apply(&self, controls: &Controls, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jac_transpose_apply(controls, w)?.1)
    }

    /// `((J^m_v)ᵀ y, (J^m_r)ᵀ y)`.
    pub fn final_jac_transpose_apply(&self, controls: &Controls, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.ensure_current(controls)?;
        Error::check_len("final adjoint weights", self.n(), y.len())?;
        let m = self.steps;
        self.adjoint(|k, mu| {
            if k == m {
                for (a, b) in mu.iter_mut().zip(y) {
                    *a += b;
                }
            }
        })
    }

    /// Exact gradient of `Γ₁ + αΓ₂ + βΓ₃` with respect to `[v; r]`.
    pub fn gradient(&self, controls: &Controls, alpha: f64, beta: f64, target: &[f64]) -> Result<GradientVector> {
        self.ensure_current(controls)?;
        let n = self.n();
        let m = self.steps;
        Error::check_len("target density", n, target.len())?;
        let volume = self.grid.cell_volume();
        let c = self.dt * volume;
        let (v, r, chi) = (&self.v, &self.r, &self.chi);
        let final_density = &self.densities[m];
        let (mut gv, mut gr) = self.adjoint(|k, mu| {
            let i = k - 1;
            let vi = &v[3 * i * n..3 * (i + 1) * n];
            for p in 0..n {
                let speed2 = vi[p] * vi[p] + vi[n + p] * vi[n + p] + vi[2 * n + p] * vi[2 * n + p];
                let q = i * n + p;
                mu[p] += c * speed2 + alpha * c * r[q] * r[q] * chi[q];
            }
            if k == m {
                for p in 0..n {
                    mu[p] += 2.0 * beta * volume * (final_density[p] - target[p]);
                }
            }
        })?;
        for i in 0..m {
            let rho = &self.densities[i + 1];
            for a in 0..3 {
                let block = 3 * i * n + a * n;
                for p in 0..n {
                    gv[block + p] += 2.0 * c * v[block + p] * rho[p];
                }
            }
            for p in 0..n {
                let q = i * n + p;
                gr[q] += 2.0 * alpha * c * r[q] * chi[q] * rho[p];
            }
        }
        Ok(GradientVector { v: gv, r: gr })
    }

    /// Gauss-Newton Hessian handle bound to this cache.
    pub fn hessian(&self, controls: &Controls, alpha: f64, beta: f64) -> Result<GaussNewtonHessian<'_, 'a>> {
        self.ensure_current(controls)?;
        Ok(GaussNewtonHessian {
            cache: self,
            alpha,
            beta,
        })
    }

    /// `H x` for `x = [x_v; x_r]` (length `4mn`).
    pub fn hessian_apply(&self, controls: &Controls, alpha: f64, beta: f64, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.hessian(controls, alpha, beta)?;
        let mut out = vec![0.0; x.len()];
        h.apply(x, &mut out)?;
        Ok(out)
    }
}

/// Matrix-free Gauss-Newton Hessian
///
/// ```text
/// H₁₁ = 2ΔtΔV diag(Mᵀρ) + 2βΔV (J^m_v)ᵀ J^m_v      H₁₂ = 2βΔV (J^m_v)ᵀ J^m_r
/// H₂₂ = 2αΔtΔV diag(ρ⊙χ) + 2βΔV (J^m_r)ᵀ J^m_r    H₂₁ = 2βΔV (J^m_r)ᵀ J^m_v
/// ```
///
/// where `Mᵀρ` repeats each `ρ_{i+1}` over the three velocity components.
#[derive(Debug, Clone, Copy)]
pub struct GaussNewtonHessian<'c, 'a> {
    cache: &'c LinearizationCache<'a>,
    alpha: f64,
    beta: f64,
}

impl GaussNewtonHessian<'_, '_> {
    pub fn dim(&self) -> usize {
        4 * self.cache.steps * self.cache.n()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let cache = self.cache;
        let n = cache.n();
        let m = cache.steps;
        Error::check_len("Hessian argument", self.dim(), x.len())?;
        Error::check_len("Hessian output", self.dim(), out.len())?;
        let volume = cache.grid.cell_volume();
        let c = cache.dt * volume;
        let (x_v, x_r) = x.split_at(3 * m * n);
        let (out_v, out_r) = out.split_at_mut(3 * m * n);
        if self.beta != 0.0 {
            let y = cache.linearized_chain(x_v, x_r, false)?.pop().unwrap();
            let final_seed = |k: usize, mu: &mut [f64]| {
                if k == m {
                    mu.copy_from_slice(&y);
                }
            };
            let (hv, hr) = cache.adjoint(final_seed)?;
            let w = 2.0 * self.beta * volume;
            for (o, h) in out_v.iter_mut().zip(&hv) {
                *o = w * h;
            }
            for (o, h) in out_r.iter_mut().zip(&hr) {
                *o = w * h;
            }
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
        }
        let (out_v, out_r) = out.split_at_mut(3 * m * n);
        for i in 0..m {
            let rho = &cache.densities[i + 1];
            for a in 0..3 {
                let block = 3 * i * n + a * n;
                for p in 0..n {
                    out_v[block + p] += 2.0 * c * rho[p] * x_v[block + p];
                }
            }
            for p in 0..n {
                let q = i * n + p;
                out_r[q] += 2.0 * self.alpha * c * rho[p] * cache.chi[q] * x_r[q];
            }
        }
        Ok(())
    }
}
