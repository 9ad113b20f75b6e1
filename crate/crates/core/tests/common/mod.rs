#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uromt_core::diffusion::DiffusionSolver;
use uromt_core::objective::{gamma1, gamma2, gamma3};
use uromt_core::transport::{forward, TimeSeries};
use uromt_core::{Controls, Grid, IndicatorField, ScalarField, VectorField};

pub struct Problem {
    pub grid: Grid,
    pub dt: f64,
    pub rho0: ScalarField,
    pub target: ScalarField,
    pub indicators: Vec<IndicatorField>,
    pub controls: Controls,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positive densities, velocities moving up to about half a voxel per step,
/// moderate sources and a random indicator.
pub fn random_problem(seed: u64, grid: Grid, steps: usize, dt: f64) -> Problem {
    let mut rng = rng(seed);
    let n = grid.len();
    let rho0 = ScalarField::new(grid, (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
    let target = ScalarField::new(grid, (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap();
    let indicators = (0..steps)
        .map(|_| IndicatorField::from_mask(grid, (0..n).map(|_| rng.gen_bool(0.7))).unwrap())
        .collect();
    let h = grid.spacing();
    let v = (0..steps)
        .flat_map(|_| (0..3).flat_map(move |a| (0..n).map(move |_| (a, ()))))
        .map(|(a, _)| rng.gen_range(-1.2..1.2) * h[a])
        .collect();
    let r = (0..steps * n).map(|_| rng.gen_range(-0.6..0.6)).collect();
    let controls = Controls::new(grid, steps, v, r).unwrap();
    Problem {
        grid,
        dt,
        rho0,
        target,
        indicators,
        controls,
    }
}

/// Cost terms `(Γ₁, Γ₂, Γ₃)` evaluated from scratch through the public forward
/// solve. Independent of the linearization cache.
pub fn cost_terms(p: &Problem, controls: &Controls, diffusion: &DiffusionSolver) -> (f64, f64, f64) {
    let series: TimeSeries = controls.to_series(p.dt, p.indicators.clone()).unwrap();
    let rho = forward(&p.rho0, &series, diffusion).unwrap().densities;
    let g1 = gamma1(&rho, series.velocities(), &p.grid, p.dt).unwrap();
    let g2 = gamma2(&rho, series.sources(), series.indicators(), &p.grid, p.dt).unwrap();
    let g3 = gamma3(rho.last().unwrap(), &p.target, &p.grid).unwrap();
    (g1, g2, g3)
}

/// Central differences of `weights · (Γ₁, Γ₂, Γ₃)` over every control coordinate.
pub fn fd_gradient(p: &Problem, diffusion: &DiffusionSolver, weights: [f64; 3], eps: f64) -> Vec<f64> {
    let base = p.controls.stacked();
    let combine = |c: &Controls| {
        let (a, b, d) = cost_terms(p, c, diffusion);
        weights[0] * a + weights[1] * b + weights[2] * d
    };
    (0..base.len())
        .map(|i| {
            let mut plus = p.controls.clone();
            let mut e = vec![0.0; base.len()];
            e[i] = eps;
            plus.add_scaled(1.0, &e).unwrap();
            let mut minus = p.controls.clone();
            minus.add_scaled(-1.0, &e).unwrap();
            (combine(&plus) - combine(&minus)) / (2.0 * eps)
        })
        .collect()
}

/// `max |a − b| / max |b|`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn uniform_velocity(grid: Grid, v: [f64; 3]) -> VectorField {
    VectorField::uniform(grid, v)
}
