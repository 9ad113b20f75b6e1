//! Gauss-Newton optimization of `Γ(v, r)` and the multi-frame pipeline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::{DiffusionBackend, DiffusionSolver};
use crate::error::{Error, Result};
use crate::field::{IndicatorField, ScalarField, VectorField};
use crate::grid::Grid;
use crate::linalg::{conjugate_gradient, dot, norm, CgOutcome};
use crate::objective::{chain_cost, CostBreakdown};
use crate::sensitivity::{Controls, LinearizationCache};
use crate::transport::{forward, forward_chain, TimeSeries};

/// Model weights, discretization and solver controls for one urOMT solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UromtConfig {
    /// Weight of the source (Fisher-Rao) term.
    pub alpha: f64,
    /// Weight of the end-point mismatch term.
    pub beta: f64,
    /// Diffusion coefficient.
    pub sigma: f64,
    /// Number of time steps `m` between two images.
    pub steps: usize,
    pub dt: f64,
    pub max_outer_iters: usize,
    /// Stop when `‖g‖ ≤ grad_tol · ‖g₀‖`.
    pub grad_tol: f64,
    /// Relative residual target of the inner CG solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub ls_max_backtracks: usize,
    /// Accept steps on the Armijo sufficient-decrease condition instead of simple decrease.
    pub armijo: bool,
    /// Start loop `k` from loop `k−1`'s final interpolation instead of image `k−1`.
    pub reuse_last_interp: bool,
    /// Project trial sources onto `1 + Δt·r·χ ≥ 10⁻³`, keeping every density nonnegative.
    pub positivity_guard: bool,
    /// Fixed reduction order. The core is sequential, so this is always honored.
    pub deterministic: bool,
    pub diffusion: DiffusionBackend,
}

impl Default for UromtConfig {
    fn default() -> Self {
        Self {
            alpha: 10_000.0,
            beta: 5_000.0,
            sigma: 0.002,
            steps: 10,
            dt: 0.4,
            max_outer_iters: 100,
            grad_tol: 1e-6,
            cg_tol: 1e-2,
            cg_max_iters: 20,
            ls_max_backtracks: 12,
            armijo: false,
            reuse_last_interp: false,
            positivity_guard: true,
            deterministic: true,
            diffusion: DiffusionBackend::Spectral,
        }
    }
}

impl UromtConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.alpha) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !positive(self.beta) {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps (m) must be at least 1"));
        }
        if !positive(self.dt) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !positive(self.grad_tol) || !positive(self.cg_tol) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.cg_max_iters == 0 || self.ls_max_backtracks == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    MaxIterations,
    LineSearchFailed,
    GradientTolerance,
}

/// Progress of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    /// Cost at the start of the iteration.
    pub cost: CostBreakdown,
    pub gradient_norm: f64,
    /// Accepted step length, `None` if the iteration stopped before or in the line search.
    pub step_length: Option<f64>,
    pub cg_iterations: usize,
    pub steepest_descent_fallback: bool,
}

/// Optimal controls of one image pair and the interpolations they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    pub initial: ScalarField,
    pub velocities: Vec<VectorField>,
    pub sources: Vec<ScalarField>,
    pub indicators: Vec<IndicatorField>,
    /// `ρ_1 … ρ_m`.
    pub interpolations: Vec<ScalarField>,
    /// Cost at the initial guess followed by the cost after every accepted step.
    pub cost_trace: Vec<CostBreakdown>,
    pub termination: TerminationReason,
    /// Outer iterations started, including the one that detected termination.
    pub iterations: usize,
    pub negative_source_voxels: usize,
}

impl TransportSolution {
    pub fn grid(&self) -> &Grid {
        self.initial.grid()
    }

    pub fn final_interpolation(&self) -> &ScalarField {
        self.interpolations.last().unwrap()
    }

    pub fn final_cost(&self) -> &CostBreakdown {
        self.cost_trace.last().unwrap()
    }

    /// Re-runs the forward solve from the stored controls.
    pub fn recompute_interpolations(&self, config: &UromtConfig) -> Result<Vec<ScalarField>> {
        let diffusion = DiffusionSolver::new(self.grid(), config.sigma, config.dt, config.diffusion)?;
        let series = TimeSeries::new(config.dt, self.velocities.clone(), self.sources.clone(), self.indicators.clone())?;
        Ok(forward(&self.initial, &series, &diffusion)?.densities)
    }
}

/// Indicator input for one image pair.
#[derive(Debug, Clone, PartialEq)]
pub enum IndicatorSchedule {
    /// One indicator, used for every sub-step.
    PerPair(IndicatorField),
    /// One indicator per sub-step.
    PerStep(Vec<IndicatorField>),
}

impl IndicatorSchedule {
    pub fn expand(&self, steps: usize) -> Result<Vec<IndicatorField>> {
        match self {
            IndicatorSchedule::PerPair(chi) => Ok(vec![chi.clone(); steps]),
            IndicatorSchedule::PerStep(list) => {
                Error::check_len("per-step indicators", steps, list.len())?;
                Ok(list.clone())
            }
        }
    }

    fn grid(&self) -> Option<&Grid> {
        match self {
            IndicatorSchedule::PerPair(chi) => Some(chi.grid()),
            IndicatorSchedule::PerStep(list) => list.first().map(|c| c.grid()),
        }
    }
}

/// Newton direction with its inner-solve diagnostics.
#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub direction: Vec<f64>,
    pub cg: CgOutcome,
    /// The CG direction was not a descent direction and `−g` was used instead.
    pub fallback: bool,
}

/// Truncated CG on `H x = −g` from `x = 0`, falling back to `−g` unless `xᵀg < 0`.
pub fn solve_newton_system<F>(apply: F, gradient: &[f64], cg_tol: f64, cg_max_iters: usize) -> NewtonStep
where
    F: FnMut(&[f64], &mut [f64]),
{
    let rhs: Vec<f64> = gradient.iter().map(|g| -g).collect();
    let mut x = vec![0.0; gradient.len()];
    let cg = conjugate_gradient(apply, &rhs, &mut x, cg_tol, cg_max_iters);
    let descent = dot(&x, gradient) < 0.0 && x.iter().all(|v| v.is_finite());
    if descent {
        NewtonStep {
            direction: x,
            cg,
            fallback: false,
        }
    } else {
        NewtonStep {
            direction: rhs,
            cg,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchOutcome {
    Accepted { length: f64, value: f64, trials: usize },
    Failed { trials: usize },
}

/// Backtracking from `l = 1`, halving up to `max_trials` times in total.
///
/// With `armijo_slope = Some(gᵀx)` a trial needs `Γ(l) ≤ Γ₀ + 10⁻⁴·l·gᵀx`,
/// otherwise plain `Γ(l) < Γ₀`. Non-finite trial values are rejected.
pub fn line_search<F>(mut evaluate: F, current: f64, armijo_slope: Option<f64>, max_trials: usize) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    const ARMIJO_C1: f64 = 1e-4;
    let mut length = 1.0;
    for trial in 1..=max_trials {
        let value = evaluate(length)?;
        let accept = value.is_finite()
            && match armijo_slope {
                Some(slope) => value <= current + ARMIJO_C1 * length * slope && value < current,
                None => value < current,
            };
        if accept {
            return Ok(LineSearchOutcome::Accepted {
                length,
                value,
                trials: trial,
            });
        }
        length *= 0.5;
    }
    Ok(LineSearchOutcome::Failed { trials: max_trials })
}

const MIN_SOURCE_FACTOR: f64 = 1e-3;

fn trial_point(controls: &Controls, length: f64, direction: &[f64], chi: &[f64], config: &UromtConfig) -> Result<Controls> {
    let mut trial = controls.clone();
    trial.add_scaled(length, direction)?;
    if config.positivity_guard {
        let floor = (MIN_SOURCE_FACTOR - 1.0) / config.dt;
        trial.modify(|_, r| {
            for (x, c) in r.iter_mut().zip(chi) {
                if *c != 0.0 && *x < floor {
                    *x = floor;
                }
            }
        });
    }
    Ok(trial)
}

/// Stacked indices of sources held at the floor whose gradient pushes them further down.
fn active_bounds(controls: &Controls, g: &[f64], chi: &[f64], dt: f64) -> Vec<usize> {
    let floor = (MIN_SOURCE_FACTOR - 1.0) / dt;
    let offset = controls.velocity().len();
    controls
        .source()
        .iter()
        .zip(chi)
        .enumerate()
        .filter(|&(i, (r, c))| *c != 0.0 && *r <= floor && g[offset + i] > 0.0)
        .map(|(i, _)| offset + i)
        .collect()
}

fn check_problem(rho0: &ScalarField, target: &ScalarField) -> Result<()> {
    target.check_grid(rho0.grid(), "target image")?;
    if !rho0.is_nonnegative() || !target.is_nonnegative() {
        return Err(Error::invalid("input images must be nonnegative"));
    }
    if rho0.values().iter().chain(target.values()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("input images must be finite"));
    }
    Ok(())
}

/// Solves one image pair from the all-zero initial guess.
pub fn gauss_newton(
    rho0: &ScalarField,
    target: &ScalarField,
    indicators: &[IndicatorField],
    config: &UromtConfig,
    observer: &mut dyn FnMut(&IterationReport),
) -> Result<TransportSolution> {
    config.validate()?;
    check_problem(rho0, target)?;
    Error::check_len("indicators", config.steps, indicators.len())?;
    let grid = *rho0.grid();
    if indicators.iter().any(|c| c.grid() != &grid) {
        return Err(Error::invalid("indicators live on a different grid"));
    }
    let diffusion = DiffusionSolver::new(&grid, config.sigma, config.dt, config.diffusion)?;
    let chi: Vec<f64> = indicators.iter().flat_map(|c| c.values().iter().copied()).collect();
    let target_values = target.values();
    let (alpha, beta) = (config.alpha, config.beta);

    let mut controls = Controls::zeros(grid, config.steps);
    let mut cache = LinearizationCache::build(rho0.values(), &controls, chi.clone(), &diffusion)?;
    let mut cost = cache.cost(target_values, alpha, beta);
    let mut trace = vec![cost];
    let mut initial_gradient_norm = None;
    let mut termination = TerminationReason::MaxIterations;
    let mut iterations = 0;

    for iteration in 1..=config.max_outer_iters {
        iterations = iteration;
        if !cost.is_finite() {
            return Err(Error::NumericalFailure {
                iteration,
                detail: format!("non-finite cost {cost:?}"),
            });
        }
        let gradient = cache.gradient(&controls, alpha, beta, target_values)?;
        if !gradient.is_finite() {
            return Err(Error::NumericalFailure {
                iteration,
                detail: format!("non-finite gradient (cost {cost:?})"),
            });
        }
        let mut g = gradient.stacked();
        let active = if config.positivity_guard {
            active_bounds(&controls, &g, &chi, config.dt)
        } else {
            Vec::new()
        };
        for &i in &active {
            g[i] = 0.0;
        }
        let gradient_norm = norm(&g);
        let g0 = *initial_gradient_norm.get_or_insert(gradient_norm);
        let mut report = IterationReport {
            iteration,
            cost,
            gradient_norm,
            step_length: None,
            cg_iterations: 0,
            steepest_descent_fallback: false,
        };
        if gradient_norm == 0.0 || gradient_norm <= config.grad_tol * g0 {
            termination = TerminationReason::GradientTolerance;
            observer(&report);
            break;
        }
        let hessian = cache.hessian(&controls, alpha, beta)?;
        let mut hessian_error = None;
        let mut masked = vec![0.0; g.len()];
        let step = solve_newton_system(
            |x, out| {
                masked.copy_from_slice(x);
                for &i in &active {
                    masked[i] = 0.0;
                }
                if let Err(e) = hessian.apply(&masked, out) {
                    hessian_error.get_or_insert(e);
                }
                for &i in &active {
                    out[i] = 0.0;
                }
            },
            &g,
            config.cg_tol,
            config.cg_max_iters,
        );
        if let Some(e) = hessian_error {
            return Err(e);
        }
        report.cg_iterations = step.cg.iterations;
        report.steepest_descent_fallback = step.fallback;
        let slope = config.armijo.then(|| dot(&g, &step.direction));

        let outcome = line_search(
            |length| {
                let trial = trial_point(&controls, length, &step.direction, &chi, config)?;
                let chain = forward_chain(rho0.values(), trial.velocity(), trial.source(), &chi, &diffusion, false)?;
                let value = chain_cost(&grid, &chain.densities, trial.velocity(), trial.source(), &chi, target_values, alpha, beta, config.dt);
                Ok(value.total)
            },
            cost.total,
            slope,
            config.ls_max_backtracks,
        )?;
        match outcome {
            LineSearchOutcome::Accepted { length, .. } => {
                controls = trial_point(&controls, length, &step.direction, &chi, config)?;
                cache = LinearizationCache::build(rho0.values(), &controls, chi.clone(), &diffusion)?;
                cost = cache.cost(target_values, alpha, beta);
                trace.push(cost);
                report.step_length = Some(length);
                observer(&report);
            }
            LineSearchOutcome::Failed { .. } => {
                termination = TerminationReason::LineSearchFailed;
                observer(&report);
                break;
            }
        }
    }

    let densities = cache.densities();
    Ok(TransportSolution {
        initial: rho0.clone(),
        velocities: (0..config.steps).map(|i| controls.velocity_at(i)).collect(),
        sources: (0..config.steps).map(|i| controls.source_at(i)).collect(),
        indicators: indicators.to_vec(),
        interpolations: densities[1..]
            .iter()
            .map(|d| ScalarField::new(grid, d.clone()))
            .collect::<Result<Vec<_>>>()?,
        cost_trace: trace,
        termination,
        iterations,
        negative_source_voxels: cache.negative_source_voxels(),
    })
}

/// Per-loop solutions of a whole image series plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub loops: Vec<TransportSolution>,
    pub config: UromtConfig,
    /// FNV-1a digests of the input images, in order.
    pub input_digests: Vec<u64>,
}

/// A loop failed; the loops solved before it are kept.
#[derive(Debug, Clone)]
pub struct SequenceError {
    pub loop_index: usize,
    pub error: Error,
    pub completed: Vec<TransportSolution>,
}

impl core::fmt::Display for SequenceError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "loop {} failed after {} completed loops: {}",
            self.loop_index + 1,
            self.completed.len(),
            self.error
        )
    }
}

impl core::error::Error for SequenceError {}

/// 64-bit FNV-1a over the IEEE-754 bits of `values`.
pub fn field_digest(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

/// Solves `images[k] → images[k+1]` for every adjacent pair, in order.
pub fn run_sequence(
    images: &[ScalarField],
    indicators: &[IndicatorSchedule],
    config: &UromtConfig,
    observer: &mut dyn FnMut(usize, &IterationReport),
) -> core::result::Result<SequenceResult, SequenceError> {
    let fail = |loop_index, error, completed| SequenceError {
        loop_index,
        error,
        completed,
    };
    if images.len() < 2 {
        return Err(fail(0, Error::invalid("need at least two images"), Vec::new()));
    }
    if let Err(e) = Error::check_len("indicator schedules", images.len() - 1, indicators.len()) {
        return Err(fail(0, e, Vec::new()));
    }
    let grid = *images[0].grid();
    if images.iter().any(|im| im.grid() != &grid) || indicators.iter().any(|s| s.grid().is_some_and(|g| g != &grid)) {
        return Err(fail(0, Error::invalid("all images and indicators must share one grid"), Vec::new()));
    }
    let mut loops: Vec<TransportSolution> = Vec::with_capacity(images.len() - 1);
    for k in 0..images.len() - 1 {
        let start = match (config.reuse_last_interp, loops.last()) {
            (true, Some(prev)) => prev.final_interpolation().clone(),
            _ => images[k].clone(),
        };
        let solved = indicators[k]
            .expand(config.steps)
            .and_then(|chi| gauss_newton(&start, &images[k + 1], &chi, config, &mut |r| observer(k, r)));
        match solved {
            Ok(solution) => loops.push(solution),
            Err(e) => return Err(fail(k, e, loops)),
        }
    }
    Ok(SequenceResult {
        loops,
        config: *config,
        input_digests: images.iter().map(|im| field_digest(im.values())).collect(),
    })
}
