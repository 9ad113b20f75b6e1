//! Post-processing of solved transport: Eulerian maps, pathlines, Péclet
//! numbers and the NMSE / PCTM accuracy metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::solver::TransportSolution;

/// Per-step speed and source maps of a series of loops, with averages over a loop window.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianMaps {
    /// `speed[k][j] = ‖v*_{k,j}‖`.
    pub speed: Vec<Vec<ScalarField>>,
    /// `source[k][j] = r*_{k,j}`.
    pub source: Vec<Vec<ScalarField>>,
    pub window: Range<usize>,
    pub mean_speed: ScalarField,
    pub mean_source: ScalarField,
}

pub fn speed_map(v: &VectorField) -> ScalarField {
    v.magnitude()
}

fn mean_of(maps: &[&ScalarField]) -> ScalarField {
    let grid = *maps[0].grid();
    let mut acc = vec![0.0; grid.len()];
    for map in maps {
        for (a, x) in acc.iter_mut().zip(map.values()) {
            *a += x;
        }
    }
    let count = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    ScalarField::new(grid, acc).unwrap()
}

/// Maps for every loop, averaged over loops `window` (0-based, half-open).
pub fn eulerian_maps(solutions: &[TransportSolution], window: Range<usize>) -> Result<EulerianMaps> {
    let velocities: Vec<&[VectorField]> = solutions.iter().map(|s| s.velocities.as_slice()).collect();
    let sources: Vec<&[ScalarField]> = solutions.iter().map(|s| s.sources.as_slice()).collect();
    eulerian_maps_from(&velocities, &sources, window)
}

/// [`eulerian_maps`] on per-loop velocity and source lists.
pub fn eulerian_maps_from(velocities: &[&[VectorField]], sources: &[&[ScalarField]], window: Range<usize>) -> Result<EulerianMaps> {
    Error::check_len("source loops", velocities.len(), sources.len())?;
    if window.start >= window.end || window.end > velocities.len() {
        return Err(Error::invalid("averaging window must be a nonempty range of solved loops"));
    }
    if velocities[window.clone()].iter().any(|v| v.is_empty()) {
        return Err(Error::invalid("a loop in the averaging window has no steps"));
    }
    let speed: Vec<Vec<ScalarField>> = velocities.iter().map(|v| v.iter().map(speed_map).collect()).collect();
    let source: Vec<Vec<ScalarField>> = sources.iter().map(|s| s.to_vec()).collect();
    let mean_speed = mean_of(&speed[window.clone()].iter().flatten().collect::<Vec<_>>());
    let mean_source = mean_of(&source[window.clone()].iter().flatten().collect::<Vec<_>>());
    Ok(EulerianMaps {
        speed,
        source,
        window,
        mean_speed,
        mean_source,
    })
}

/// Mean of `field` over the voxels where `mask` is set, `None` for an empty mask.
pub fn masked_mean(field: &ScalarField, mask: impl Fn(usize) -> bool) -> Option<f64> {
    let (sum, count) = field
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask(*i))
        .fold((0.0, 0usize), |(s, c), (_, x)| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Péclet map and the voxels where the floor `ε` outweighs `σ‖∇ρ‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct PecletMap {
    pub values: ScalarField,
    /// Voxels with nonzero advective flux whose value is set by the floor.
    pub floor_dominated: Vec<bool>,
}

impl PecletMap {
    pub fn flagged(&self) -> usize {
        self.floor_dominated.iter().filter(|f| **f).count()
    }
}

/// `10⁻⁸ · max ρ · max ‖v‖`.
pub fn default_peclet_floor(rho: &ScalarField, v: &VectorField) -> f64 {
    1e-8 * rho.max().max(0.0) * v.magnitude().max()
}

/// `∇ρ` by central differences; boundary faces use the mirrored ghost voxel.
pub fn gradient(rho: &ScalarField) -> VectorField {
    let grid = *rho.grid();
    let dims = grid.dims();
    let h = grid.spacing();
    let n = grid.len();
    let values = rho.values();
    let mut out = vec![0.0; 3 * n];
    for idx in 0..n {
        let c = grid.coords(idx);
        for axis in 0..3 {
            if dims[axis] == 1 {
                continue;
            }
            let s = grid.stride(axis);
            let lo = if c[axis] == 0 { idx } else { idx - s };
            let hi = if c[axis] + 1 == dims[axis] { idx } else { idx + s };
            out[axis * n + idx] = (values[hi] - values[lo]) / (2.0 * h[axis]);
        }
    }
    VectorField::new(grid, out).unwrap()
}

/// `Pe = ρ‖v‖ / (σ‖∇ρ‖ + ε)`.
///
/// With `σ = 0` voxels with advective flux get `+∞`. Voxels without
/// advective flux always get 0.
pub fn peclet(rho: &ScalarField, v: &VectorField, sigma: f64, floor: f64) -> Result<PecletMap> {
    let grid = *rho.grid();
    if v.grid() != &grid {
        return Err(Error::invalid("density and velocity live on different grids"));
    }
    if !(sigma >= 0.0) || !(floor >= 0.0) {
        return Err(Error::invalid("sigma and the Péclet floor must be nonnegative"));
    }
    let speed = v.magnitude();
    let grad = gradient(rho).magnitude();
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut floor_dominated = vec![false; n];
    for i in 0..n {
        let advective = rho.values()[i] * speed.values()[i];
        if advective == 0.0 {
            continue;
        }
        if sigma == 0.0 {
            values[i] = f64::INFINITY;
            continue;
        }
        let diffusive = sigma * grad.values()[i];
        floor_dominated[i] = diffusive <= floor;
        values[i] = if diffusive + floor > 0.0 {
            advective / (diffusive + floor)
        } else {
            f64::INFINITY
        };
    }
    Ok(PecletMap {
        values: ScalarField::new(grid, values)?,
        floor_dominated,
    })
}

/// Trilinear interpolation of node values at fractional index coordinates, clamped to the grid.
pub fn trilinear(grid: &Grid, values: &[f64], position: [f64; 3]) -> f64 {
    let dims = grid.dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        let p = position[a].clamp(0.0, hi);
        let i = libm::floor(p) as usize;
        if i + 1 >= dims[a] {
            base[a] = dims[a] - 1;
            frac[a] = 0.0;
        } else {
            base[a] = i;
            frac[a] = p - i as f64;
        }
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut c = base;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                if frac[a] == 0.0 {
                    w = 0.0;
                    break;
                }
                c[a] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w != 0.0 {
            acc += w * values[grid.index(c[0], c[1], c[2])];
        }
    }
    acc
}

/// Trajectory of a particle seeded at `t = 0`, sampled at the end of every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Pathline {
    pub seed: [f64; 3],
    /// Physical positions, starting with the seed.
    pub points: Vec<[f64; 3]>,
    /// Speed of the interval starting at each point; the last point reuses the final interval.
    pub speed: Vec<f64>,
    pub peclet: Vec<f64>,
}

impl Pathline {
    pub fn displacement(&self) -> [f64; 3] {
        let end = self.points.last().unwrap();
        [end[0] - self.seed[0], end[1] - self.seed[1], end[2] - self.seed[2]]
    }
}

/// Precomputed per-interval data for tracing many pathlines through the same velocity history.
#[derive(Debug, Clone)]
pub struct PathlineTracer {
    grid: Grid,
    dt: f64,
    substeps: usize,
    velocities: Vec<VectorField>,
    peclet: Vec<ScalarField>,
}

impl PathlineTracer {
    /// `densities[i]` is the density at the start of interval `i`.
    pub fn new(velocities: Vec<VectorField>, densities: &[ScalarField], dt: f64, sigma: f64, substeps: usize) -> Result<Self> {
        if velocities.is_empty() {
            return Err(Error::invalid("no velocity intervals to trace through"));
        }
        Error::check_len("interval densities", velocities.len(), densities.len())?;
        if substeps == 0 || !(dt > 0.0) {
            return Err(Error::invalid("substeps and dt must be positive"));
        }
        let grid = *velocities[0].grid();
        let peclet = velocities
            .iter()
            .zip(densities)
            .map(|(v, rho)| {
                if v.grid() != &grid || rho.grid() != &grid {
                    return Err(Error::invalid("all intervals must share one grid"));
                }
                peclet(rho, v, sigma, default_peclet_floor(rho, v)).map(|p| p.values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            dt,
            substeps,
            velocities,
            peclet,
        })
    }

    /// Concatenates the velocity history of consecutive loops.
    pub fn from_solutions(solutions: &[TransportSolution], dt: f64, sigma: f64, substeps: usize) -> Result<Self> {
        let mut velocities = Vec::new();
        let mut densities = Vec::new();
        for s in solutions {
            velocities.extend(s.velocities.iter().cloned());
            densities.push(s.initial.clone());
            densities.extend(s.interpolations[..s.interpolations.len() - 1].iter().cloned());
        }
        Self::new(velocities, &densities, dt, sigma, substeps)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn intervals(&self) -> usize {
        self.velocities.len()
    }

    fn velocity_at(&self, interval: usize, x: [f64; 3]) -> [f64; 3] {
        let h = self.grid.spacing();
        let p = [x[0] / h[0], x[1] / h[1], x[2] / h[2]];
        let v = &self.velocities[interval];
        [
            trilinear(&self.grid, v.component(0), p),
            trilinear(&self.grid, v.component(1), p),
            trilinear(&self.grid, v.component(2), p),
        ]
    }

    fn sample(&self, interval: usize, x: [f64; 3]) -> (f64, f64) {
        let [a, b, c] = self.velocity_at(interval, x);
        let h = self.grid.spacing();
        let p = [x[0] / h[0], x[1] / h[1], x[2] / h[2]];
        (
            libm::sqrt(a * a + b * b + c * c),
            trilinear(&self.grid, self.peclet[interval].values(), p),
        )
    }

    /// Explicit Euler with `substeps` steps per interval, clamped to the domain.
    pub fn trace(&self, seed: [f64; 3]) -> Pathline {
        let upper = self.grid.extent();
        let clamp = |x: [f64; 3]| {
            [
                x[0].clamp(0.0, upper[0]),
                x[1].clamp(0.0, upper[1]),
                x[2].clamp(0.0, upper[2]),
            ]
        };
        let tau = self.dt / self.substeps as f64;
        let mut x = clamp(seed);
        let mut line = Pathline {
            seed,
            points: vec![x],
            speed: Vec::with_capacity(self.intervals() + 1),
            peclet: Vec::with_capacity(self.intervals() + 1),
        };
        for interval in 0..self.intervals() {
            let (s, pe) = self.sample(interval, x);
            line.speed.push(s);
            line.peclet.push(pe);
            for _ in 0..self.substeps {
                let v = self.velocity_at(interval, x);
                x = clamp([x[0] + tau * v[0], x[1] + tau * v[1], x[2] + tau * v[2]]);
            }
            line.points.push(x);
        }
        let (s, pe) = self.sample(self.intervals() - 1, x);
        line.speed.push(s);
        line.peclet.push(pe);
        line
    }

    pub fn trace_all(&self, seeds: &[[f64; 3]]) -> Vec<Pathline> {
        seeds.iter().map(|s| self.trace(*s)).collect()
    }
}

/// Voxel centers with `ρ ≥ θ·max ρ` on every `stride`-th voxel along each axis.
pub fn seed_points(rho: &ScalarField, threshold: f64, stride: usize) -> Vec<[f64; 3]> {
    let grid = rho.grid();
    let stride = stride.max(1);
    let cut = threshold * rho.max();
    (0..grid.len())
        .filter(|&i| {
            let c = grid.coords(i);
            c.iter().all(|x| x % stride == 0) && rho.values()[i] >= cut && rho.values()[i] > 0.0
        })
        .map(|i| grid.center(i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxVector {
    pub seed: [f64; 3],
    pub displacement: [f64; 3],
}

pub fn flux_vectors(lines: &[Pathline]) -> Vec<FluxVector> {
    lines
        .iter()
        .map(|l| FluxVector {
            seed: l.seed,
            displacement: l.displacement(),
        })
        .collect()
}

/// `‖ρ_m − ρ_img‖² / ‖ρ_img‖² · 100`.
pub fn nmse(final_density: &[f64], target: &[f64]) -> Result<f64> {
    Error::check_len("target", final_density.len(), target.len())?;
    let den: f64 = target.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("NMSE of an all-zero target"));
    }
    let num: f64 = final_density.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den * 100.0)
}

/// `|Σρ_m − Σρ_img| / Σρ_img · 100`.
pub fn pctm(final_density: &[f64], target: &[f64]) -> Result<f64> {
    Error::check_len("target", final_density.len(), target.len())?;
    let den: f64 = target.iter().sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("PCTM of a zero-mass target"));
    }
    let num: f64 = final_density.iter().sum();
    Ok(libm::fabs(num - den) / libm::fabs(den) * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub nmse: Vec<f64>,
    pub pctm: Vec<f64>,
    /// Total intensity of every input image.
    pub input_mass: Vec<f64>,
    /// Total intensity of `ρ_{k,1} … ρ_{k,m}` for every loop `k`.
    pub interpolation_mass: Vec<Vec<f64>>,
}

/// Metrics of loop `k` against `images[k + 1]`.
pub fn metrics_report(images: &[ScalarField], solutions: &[TransportSolution]) -> Result<MetricsReport> {
    let interpolations: Vec<&[ScalarField]> = solutions.iter().map(|s| s.interpolations.as_slice()).collect();
    metrics_from(images, &interpolations)
}

/// [`metrics_report`] on per-loop interpolation lists `ρ_{k,1} … ρ_{k,m}`.
pub fn metrics_from(images: &[ScalarField], interpolations: &[&[ScalarField]]) -> Result<MetricsReport> {
    Error::check_len("images", interpolations.len() + 1, images.len())?;
    let mut nmse_all = Vec::with_capacity(interpolations.len());
    let mut pctm_all = Vec::with_capacity(interpolations.len());
    for (k, loop_fields) in interpolations.iter().enumerate() {
        let last = loop_fields
            .last()
            .ok_or_else(|| Error::invalid("a loop has no interpolations"))?;
        let target = images[k + 1].values();
        nmse_all.push(nmse(last.values(), target)?);
        pctm_all.push(pctm(last.values(), target)?);
    }
    Ok(MetricsReport {
        nmse: nmse_all,
        pctm: pctm_all,
        input_mass: images.iter().map(|im| im.sum()).collect(),
        interpolation_mass: interpolations
            .iter()
            .map(|l| l.iter().map(|d| d.sum()).collect())
            .collect(),
    })
}
