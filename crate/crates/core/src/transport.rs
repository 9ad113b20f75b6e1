//! Operator-split forward solve: source, particle-in-cell advection, implicit diffusion.
//!
//! One step maps `ρ_i` to `ρ_{i+1} = L⁻¹ S(v_i) R(r_i) ρ_i` where
//! `R(r) = I + Δt·diag(r ⊙ χ)` and `S(v)` moves each voxel's mass by `Δt·v`
//! and deposits it trilinearly on the 8 surrounding voxel centers.

use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::DiffusionSolver;
use crate::error::{Error, Result};
use crate::field::{IndicatorField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::sparse::SparseOperator;

/// Per-step controls and indicators of one transport chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    velocities: Vec<VectorField>,
    sources: Vec<ScalarField>,
    indicators: Vec<IndicatorField>,
}

impl TimeSeries {
    pub fn new(dt: f64, velocities: Vec<VectorField>, sources: Vec<ScalarField>, indicators: Vec<IndicatorField>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        let m = velocities.len();
        if m == 0 {
            return Err(Error::invalid("a time series needs at least one step"));
        }
        Error::check_len("relative source steps", m, sources.len())?;
        Error::check_len("indicator steps", m, indicators.len())?;
        let grid = *velocities[0].grid();
        for i in 0..m {
            if velocities[i].grid() != &grid || sources[i].grid() != &grid || indicators[i].grid() != &grid {
                return Err(Error::invalid("all time-series fields must share one grid"));
            }
        }
        Ok(Self {
            dt,
            velocities,
            sources,
            indicators,
        })
    }

    /// Zero velocity and source for `m` steps.
    pub fn at_rest(grid: Grid, dt: f64, indicators: Vec<IndicatorField>) -> Result<Self> {
        let m = indicators.len();
        Self::new(dt, vec![VectorField::zeros(grid); m], vec![ScalarField::zeros(grid); m], indicators)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn grid(&self) -> &Grid {
        self.velocities[0].grid()
    }

    pub fn velocities(&self) -> &[VectorField] {
        &self.velocities
    }

    pub fn sources(&self) -> &[ScalarField] {
        &self.sources
    }

    pub fn indicators(&self) -> &[IndicatorField] {
        &self.indicators
    }

    /// Stacked velocity `[v_0; …; v_{m−1}]` (length `3mn`).
    pub fn flat_velocity(&self) -> Vec<f64> {
        self.velocities.iter().flat_map(|v| v.values().iter().copied()).collect()
    }

    /// Stacked source `[r_0; …; r_{m−1}]` (length `mn`).
    pub fn flat_source(&self) -> Vec<f64> {
        self.sources.iter().flat_map(|r| r.values().iter().copied()).collect()
    }

    pub fn flat_indicator(&self) -> Vec<f64> {
        self.indicators.iter().flat_map(|c| c.values().iter().copied()).collect()
    }
}

/// Result of [`forward`]: `ρ_1 … ρ_m` plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub densities: Vec<ScalarField>,
    /// Voxel-steps where `1 + Δt·r·χ < 0`, i.e. the source step drove density negative.
    pub negative_source_voxels: usize,
}

/// `(1 + Δt·r·χ) ⊙ ρ`, plus the number of voxels whose factor is negative.
pub fn apply_source(rho: &ScalarField, r: &ScalarField, chi: &IndicatorField, dt: f64) -> Result<(ScalarField, usize)> {
    r.check_grid(rho.grid(), "relative source")?;
    if chi.grid() != rho.grid() {
        return Err(Error::invalid("indicator lives on a different grid"));
    }
    let mut out = vec![0.0; rho.grid().len()];
    let negative = source_step(rho.values(), r.values(), chi.values(), dt, &mut out);
    Ok((ScalarField::new(*rho.grid(), out)?, negative))
}

pub(crate) fn source_step(rho: &[f64], r: &[f64], chi: &[f64], dt: f64, out: &mut [f64]) -> usize {
    let mut negative = 0;
    for i in 0..rho.len() {
        let factor = 1.0 + dt * r[i] * chi[i];
        if factor < 0.0 {
            negative += 1;
        }
        out[i] = factor * rho[i];
    }
    negative
}

/// The particle-in-cell averaging matrix `S(v)`: entry `(j, k)` is the share of
/// voxel `k`'s mass deposited on voxel `j`. Columns sum to one.
pub fn build_pic_matrix(v: &VectorField, dt: f64) -> SparseOperator {
    deposition(v.grid(), v.values(), dt, None).0.transpose()
}

/// `S(v) ρ`.
pub fn apply_advection(rho: &ScalarField, v: &VectorField, dt: f64) -> Result<ScalarField> {
    v.grid()
        .eq(rho.grid())
        .then_some(())
        .ok_or_else(|| Error::invalid("velocity lives on a different grid"))?;
    let st = deposition(v.grid(), v.values(), dt, None).0;
    let mut out = vec![0.0; rho.grid().len()];
    st.apply_transpose(rho.values(), &mut out);
    ScalarField::new(*rho.grid(), out)
}

/// Advection Jacobian `B = ∂/∂v [S(v) ρ_src]` as an `n × 3n` operator, columns
/// ordered like the velocity blocks.
pub fn advection_jacobian(v: &VectorField, dt: f64, rho_src: &ScalarField) -> Result<SparseOperator> {
    rho_src.check_grid(v.grid(), "advected density")?;
    Ok(deposition(v.grid(), v.values(), dt, Some(rho_src.values())).1.unwrap().transpose())
}

/// One full step `ρ_{i+1} = L⁻¹ S(v_i) R(r_i) ρ_i`.
pub fn step(
    rho: &ScalarField,
    v: &VectorField,
    r: &ScalarField,
    chi: &IndicatorField,
    diffusion: &DiffusionSolver,
    dt: f64,
) -> Result<(ScalarField, usize)> {
    check_dt(diffusion, dt)?;
    let (sourced, negative) = apply_source(rho, r, chi, dt)?;
    let advected = apply_advection(&sourced, v, dt)?;
    let next = diffusion.solve(advected.values())?;
    Ok((ScalarField::new(*rho.grid(), next)?, negative))
}

/// Iterates [`step`] over the whole series and returns `ρ_1 … ρ_m`.
pub fn forward(rho0: &ScalarField, series: &TimeSeries, diffusion: &DiffusionSolver) -> Result<ForwardSolution> {
    rho0.check_grid(series.grid(), "initial density")?;
    check_dt(diffusion, series.dt())?;
    let chain = forward_chain(
        rho0.values(),
        &series.flat_velocity(),
        &series.flat_source(),
        &series.flat_indicator(),
        diffusion,
        false,
    )?;
    let grid = *rho0.grid();
    let densities = chain
        .densities
        .into_iter()
        .skip(1)
        .map(|d| ScalarField::new(grid, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardSolution {
        densities,
        negative_source_voxels: chain.negative_source_voxels,
    })
}

fn check_dt(diffusion: &DiffusionSolver, dt: f64) -> Result<()> {
    if diffusion.dt() == dt {
        Ok(())
    } else {
        Err(Error::invalid("diffusion solver was built for a different time step"))
    }
}

/// Forward chain on stacked vectors. Keeps `Sᵀ` and `Bᵀ` per step when asked.
pub(crate) struct Chain {
    /// `ρ_0 … ρ_m`.
    pub densities: Vec<Vec<f64>>,
    /// `R(r_i) ρ_i` for `i < m`.
    pub sourced: Vec<Vec<f64>>,
    pub pic_transposed: Vec<SparseOperator>,
    pub jacobian_transposed: Vec<SparseOperator>,
    pub negative_source_voxels: usize,
}

pub(crate) fn forward_chain(
    rho0: &[f64],
    v: &[f64],
    r: &[f64],
    chi: &[f64],
    diffusion: &DiffusionSolver,
    keep_operators: bool,
) -> Result<Chain> {
    let grid = *diffusion.grid();
    let dt = diffusion.dt();
    let n = grid.len();
    Error::check_len("initial density", n, rho0.len())?;
    let m = r.len() / n;
    Error::check_len("stacked relative source", m * n, r.len())?;
    Error::check_len("stacked velocity", 3 * m * n, v.len())?;
    Error::check_len("stacked indicator", m * n, chi.len())?;
    let mut chain = Chain {
        densities: Vec::with_capacity(m + 1),
        sourced: Vec::with_capacity(m),
        pic_transposed: Vec::new(),
        jacobian_transposed: Vec::new(),
        negative_source_voxels: 0,
    };
    chain.densities.push(rho0.to_vec());
    let mut advected = vec![0.0; n];
    for i in 0..m {
        let mut sourced = vec![0.0; n];
        chain.negative_source_voxels += source_step(
            &chain.densities[i],
            &r[i * n..(i + 1) * n],
            &chi[i * n..(i + 1) * n],
            dt,
            &mut sourced,
        );
        let vi = &v[3 * i * n..3 * (i + 1) * n];
        let (st, bt) = deposition(&grid, vi, dt, keep_operators.then_some(sourced.as_slice()));
        st.apply_transpose(&sourced, &mut advected);
        let next = diffusion.solve(&advected)?;
        chain.densities.push(next);
        if keep_operators {
            chain.pic_transposed.push(st);
            chain.jacobian_transposed.push(bt.unwrap());
            chain.sourced.push(sourced);
        }
    }
    Ok(chain)
}

/// Up to three `(voxel, weight, d weight / d displacement)` entries along one axis.
#[derive(Debug, Clone, Copy)]
struct AxisStencil {
    len: usize,
    idx: [usize; 3],
    w: [f64; 3],
    dw: [f64; 3],
}

impl AxisStencil {
    fn one(i: usize, dw: f64) -> Self {
        Self {
            len: 1,
            idx: [i, 0, 0],
            w: [1.0, 0.0, 0.0],
            dw: [dw, 0.0, 0.0],
        }
    }

    fn two(i: usize, w0: f64, w1: f64, d0: f64, d1: f64) -> Self {
        Self {
            len: 2,
            idx: [i, i + 1, 0],
            w: [w0, w1, 0.0],
            dw: [d0, d1, 0.0],
        }
    }
}

/// Linear (hat) deposition of a particle at index-space position `pos` on `n` cells.
///
/// Positions are clamped to `[0, n−1]`; clamped coordinates have zero derivative.
/// At exact cell centers the derivative is the mean of the one-sided ones.
fn axis_stencil(pos: f64, n: usize) -> AxisStencil {
    if n == 1 {
        return AxisStencil::one(0, 0.0);
    }
    let hi = (n - 1) as f64;
    if pos < 0.0 {
        return AxisStencil::one(0, 0.0);
    }
    if pos > hi {
        return AxisStencil::one(n - 1, 0.0);
    }
    if pos == 0.0 {
        return AxisStencil::two(0, 1.0, 0.0, -0.5, 0.5);
    }
    if pos == hi {
        return AxisStencil::two(n - 2, 0.0, 1.0, -0.5, 0.5);
    }
    let base = libm::floor(pos);
    let f = pos - base;
    let b = base as usize;
    if f == 0.0 {
        return AxisStencil {
            len: 3,
            idx: [b - 1, b, b + 1],
            w: [0.0, 1.0, 0.0],
            dw: [-0.5, 0.0, 0.5],
        };
    }
    AxisStencil::two(b, 1.0 - f, f, -1.0, 1.0)
}

/// Builds `Sᵀ` (rows = source voxels) and, given the sourced density, `Bᵀ`
/// (rows = velocity coordinates) for one step's velocity `v` (length `3n`).
pub(crate) fn deposition(grid: &Grid, v: &[f64], dt: f64, rho_src: Option<&[f64]>) -> (SparseOperator, Option<SparseOperator>) {
    let n = grid.len();
    debug_assert_eq!(v.len(), 3 * n);
    let dims = grid.dims();
    let spacing = grid.spacing();
    let scale = [dt / spacing[0], dt / spacing[1], dt / spacing[2]];

    let mut s_ptr = Vec::with_capacity(n + 1);
    let mut s_idx = Vec::with_capacity(8 * n);
    let mut s_val = Vec::with_capacity(8 * n);
    s_ptr.push(0);
    let mut b_rows: [(Vec<usize>, Vec<usize>, Vec<f64>); 3] = Default::default();
    if rho_src.is_some() {
        for rows in b_rows.iter_mut() {
            rows.0.reserve(n + 1);
            rows.0.push(0);
            rows.1.reserve(12 * n);
            rows.2.reserve(12 * n);
        }
    }

    for k in 0..n {
        let c = grid.coords(k);
        let st: [AxisStencil; 3] = core::array::from_fn(|a| axis_stencil(c[a] as f64 + scale[a] * v[a * n + k], dims[a]));
        let [sx, sy, sz] = st;
        for iz in 0..sz.len {
            for iy in 0..sy.len {
                for ix in 0..sx.len {
                    let w = sx.w[ix] * sy.w[iy] * sz.w[iz];
                    if w != 0.0 {
                        s_idx.push(grid.index(sx.idx[ix], sy.idx[iy], sz.idx[iz]));
                        s_val.push(w);
                    }
                }
            }
        }
        s_ptr.push(s_idx.len());

        if let Some(rho) = rho_src {
            let mass = rho[k];
            for (axis, rows) in b_rows.iter_mut().enumerate() {
                let factor = mass * scale[axis];
                if factor != 0.0 {
                    for iz in 0..sz.len {
                        for iy in 0..sy.len {
                            for ix in 0..sx.len {
                                let d = match axis {
                                    0 => sx.dw[ix] * sy.w[iy] * sz.w[iz],
                                    1 => sx.w[ix] * sy.dw[iy] * sz.w[iz],
                                    _ => sx.w[ix] * sy.w[iy] * sz.dw[iz],
                                };
                                if d != 0.0 {
                                    rows.1.push(grid.index(sx.idx[ix], sy.idx[iy], sz.idx[iz]));
                                    rows.2.push(factor * d);
                                }
                            }
                        }
                    }
                }
                rows.0.push(rows.1.len());
            }
        }
    }
    let st = SparseOperator::from_sorted_rows(n, n, s_ptr, s_idx, s_val);
    let bt = rho_src.map(|_| {
        let [(px, ix, vx), (py, iy, vy), (pz, iz, vz)] = b_rows;
        let mut ptr = px;
        let mut idx = ix;
        let mut val = vx;
        for (p, i, v) in [(py, iy, vy), (pz, iz, vz)] {
            let offset = idx.len();
            ptr.extend(p.into_iter().skip(1).map(|q| q + offset));
            idx.extend(i);
            val.extend(v);
        }
        SparseOperator::from_sorted_rows(3 * n, n, ptr, idx, val)
    });
    (st, bt)
}
