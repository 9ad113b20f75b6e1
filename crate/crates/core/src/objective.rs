//! Discrete cost `Γ = Γ₁ + αΓ₂ + βΓ₃`.
//!
//! `Γ₁` and `Γ₂` pair the post-step density `ρ_{i+1}` with `v_i` and `r_i`.

use crate::error::{Error, Result};
use crate::field::{IndicatorField, ScalarField, VectorField};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    /// Kinetic energy.
    pub gamma1: f64,
    /// Fisher-Rao source cost.
    pub gamma2: f64,
    /// End-point mismatch.
    pub gamma3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(gamma1: f64, gamma2: f64, gamma3: f64, alpha: f64, beta: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            gamma3,
            alpha,
            beta,
            total: gamma1 + alpha * gamma2 + beta * gamma3,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.gamma1.is_finite() && self.gamma2.is_finite() && self.gamma3.is_finite()
    }
}

/// `ΔtΔxΔyΔz · Σ_i Σ_x ρ_{i+1}·‖v_i‖²`.
pub fn gamma1(densities: &[ScalarField], velocities: &[VectorField], grid: &Grid, dt: f64) -> Result<f64> {
    Error::check_len("velocity steps", densities.len(), velocities.len())?;
    let n = grid.len();
    let mut acc = 0.0;
    for (rho, v) in densities.iter().zip(velocities) {
        rho.check_grid(grid, "density")?;
        acc += kinetic_step(rho.values(), v.values(), n);
    }
    Ok(dt * grid.cell_volume() * acc)
}

/// `ΔtΔxΔyΔz · Σ_i Σ_x ρ_{i+1}·r_i²·χ_i`.
pub fn gamma2(densities: &[ScalarField], sources: &[ScalarField], indicators: &[IndicatorField], grid: &Grid, dt: f64) -> Result<f64> {
    Error::check_len("source steps", densities.len(), sources.len())?;
    Error::check_len("indicator steps", densities.len(), indicators.len())?;
    let mut acc = 0.0;
    for ((rho, r), chi) in densities.iter().zip(sources).zip(indicators) {
        rho.check_grid(grid, "density")?;
        acc += source_step_cost(rho.values(), r.values(), chi.values());
    }
    Ok(dt * grid.cell_volume() * acc)
}

/// `ΔxΔyΔz · ‖ρ_m − ρ_target‖²`.
pub fn gamma3(final_density: &ScalarField, target: &ScalarField, grid: &Grid) -> Result<f64> {
    final_density.check_grid(grid, "final density")?;
    target.check_grid(grid, "target density")?;
    Ok(grid.cell_volume() * mismatch(final_density.values(), target.values()))
}

pub(crate) fn kinetic_step(rho: &[f64], v: &[f64], n: usize) -> f64 {
    let (vx, rest) = v.split_at(n);
    let (vy, vz) = rest.split_at(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += rho[i] * (vx[i] * vx[i] + vy[i] * vy[i] + vz[i] * vz[i]);
    }
    acc
}

pub(crate) fn source_step_cost(rho: &[f64], r: &[f64], chi: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..rho.len() {
        acc += rho[i] * r[i] * r[i] * chi[i];
    }
    acc
}

pub(crate) fn mismatch(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cost of a chain given as `ρ_0 … ρ_m` and stacked controls.
pub(crate) fn chain_cost(
    grid: &Grid,
    densities: &[alloc::vec::Vec<f64>],
    v: &[f64],
    r: &[f64],
    chi: &[f64],
    target: &[f64],
    alpha: f64,
    beta: f64,
    dt: f64,
) -> CostBreakdown {
    let n = grid.len();
    let m = densities.len() - 1;
    let mut kinetic = 0.0;
    let mut source = 0.0;
    for i in 0..m {
        let rho = &densities[i + 1];
        kinetic += kinetic_step(rho, &v[3 * i * n..3 * (i + 1) * n], n);
        source += source_step_cost(rho, &r[i * n..(i + 1) * n], &chi[i * n..(i + 1) * n]);
    }
    let w = dt * grid.cell_volume();
    CostBreakdown::new(
        w * kinetic,
        w * source,
        grid.cell_volume() * mismatch(&densities[m], target),
        alpha,
        beta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Grid {
        Grid::unit([1, 1, 1]).unwrap()
    }

    #[test]
    fn kinetic_by_hand() {
        let g = single();
        let rho = [ScalarField::constant(g, 2.0)];
        let v = [VectorField::uniform(g, [3.0, 4.0, 0.0])];
        assert_eq!(gamma1(&rho, &v, &g, 1.0).unwrap(), 50.0);
        assert_eq!(gamma1(&rho, &[VectorField::zeros(g)], &g, 1.0).unwrap(), 0.0);
        let v3 = [VectorField::uniform(g, [9.0, 12.0, 0.0])];
        assert_eq!(gamma1(&rho, &v3, &g, 1.0).unwrap(), 450.0);
    }

    #[test]
    fn source_cost_by_hand() {
        let g = single();
        let rho = [ScalarField::constant(g, 2.0)];
        let r = [ScalarField::constant(g, 0.5)];
        assert_eq!(gamma2(&rho, &r, &[IndicatorField::ones(g)], &g, 1.0).unwrap(), 0.5);
        assert_eq!(gamma2(&rho, &r, &[IndicatorField::zeros(g)], &g, 1.0).unwrap(), 0.0);
        assert_eq!(gamma2(&rho, &[ScalarField::zeros(g)], &[IndicatorField::ones(g)], &g, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn mismatch_by_hand() {
        let g = Grid::unit([2, 1, 1]).unwrap();
        let a = ScalarField::new(g, vec![1.0, 1.0]).unwrap();
        let b = ScalarField::new(g, vec![1.0, 2.0]).unwrap();
        assert_eq!(gamma3(&a, &b, &g).unwrap(), 1.0);
        assert_eq!(gamma3(&b, &a, &g).unwrap(), 1.0);
        assert_eq!(gamma3(&a, &a, &g).unwrap(), 0.0);
    }

    #[test]
    fn measures_scale_terms() {
        let g = Grid::new([1, 1, 1], [2.0, 1.0, 0.5]).unwrap();
        let rho = [ScalarField::constant(g, 1.0)];
        let v = [VectorField::uniform(g, [1.0, 0.0, 0.0])];
        assert_eq!(gamma1(&rho, &v, &g, 0.4).unwrap(), 0.4);
    }

    #[test]
    fn total_combines_weights() {
        let c = CostBreakdown::new(1.0, 2.0, 3.0, 10.0, 100.0);
        assert_eq!(c.total, 321.0);
    }
}
