//! The `synth`, `solve`, `post` and `metrics` stages as library calls.
//!
//! File layout, with loops numbered from 1 and steps from 0:
//!
//! ```text
//! <series>/image_II.hdr                 input image I
//! <series>/indicator_KK_JJ.hdr          χ of loop K, step J (synthetic series)
//! <run>/config.toml                     resolved configuration
//! <run>/manifest.json
//! <run>/loop_KK/initial.hdr             ρ₀ of the loop
//! <run>/loop_KK/velocity_JJ.hdr         v*_{K,J} (3 components)
//! <run>/loop_KK/source_JJ.hdr           r*_{K,J}
//! <run>/loop_KK/interp_JJ.hdr           ρ_J, J = 1..m
//! <run>/loop_KK/cost_trace.csv
//! <run>/maps/speed_lKK_sJJ.hdr          ‖v*_{K,J}‖
//! <run>/maps/source_lKK_sJJ.hdr         r*_{K,J}
//! <run>/maps/mean_speed.hdr             averages over the configured window
//! <run>/maps/mean_source.hdr
//! <run>/lines/pathlines.csv, pathlines.vtk, flux.csv
//! <run>/metrics/metrics.csv, intensity.csv
//! ```
//!
//! Every `.hdr` has a `.raw` payload next to it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use uromt_core::analysis::{eulerian_maps_from, flux_vectors, metrics_from, seed_points, MetricsReport, PathlineTracer};
use uromt_core::solver::{run_sequence, IterationReport, SequenceError};
use uromt_core::synth::{gaussian_sphere_series, GaussianSeriesSpec};
use uromt_core::{IndicatorField, IndicatorSchedule, ScalarField, TransportSolution, VectorField};

use crate::config::{IndicatorMode, RunConfig};
use crate::error::{Error, Result};
use crate::export;
use crate::manifest::{record, CostRecord, FileRecord, LoopRecord, RunManifest, StageRecord};
use crate::volume;

/// Thread count for the parallel stages.
pub const THREADS_ENV: &str = "UROMT_THREADS";

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("image_{index:02}.hdr"))
}

pub fn indicator_path(dir: &Path, loop_number: usize, step: usize) -> PathBuf {
    dir.join(format!("indicator_{loop_number:02}_{step:02}.hdr"))
}

pub fn loop_dir(run: &Path, loop_number: usize) -> PathBuf {
    run.join(format!("loop_{loop_number:02}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("`{THREADS_ENV}`: expected a positive integer, found `{value}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("`{THREADS_ENV}`: {e}")))
}

/// Gaussian-sphere series on the configured grid; the first `q` frames are written.
pub fn synth_gaussian(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let [dx, dy, dz] = config.spacing;
    if dx != dy || dx != dz {
        return Err(Error::Config("`dx`, `dy`, `dz`: the Gaussian series needs isotropic spacing".into()));
    }
    let full = GaussianSeriesSpec::default();
    if config.frames > full.frames() {
        return Err(Error::Config(format!(
            "`q`: the Gaussian series has {} frames, {} requested",
            full.frames(),
            config.frames
        )));
    }
    let spec = GaussianSeriesSpec {
        dims: config.dims,
        spacing: config.spacing,
        smoothing_scale: 1.0 / dx,
        steps: config.solver.steps,
        coefficients: full.coefficients[..config.frames].to_vec(),
        ..full
    };
    let series = gaussian_sphere_series(&spec)?;
    create_dir(out)?;
    let mut written = Vec::new();
    for (i, image) in series.images.iter().enumerate() {
        let path = image_path(out, i);
        volume::write_scalar(&path, image)?;
        written.push(path);
    }
    for (k, pair) in series.indicators.iter().enumerate() {
        for (j, chi) in pair.iter().enumerate() {
            let path = indicator_path(out, k + 1, j);
            volume::write_indicator(&path, chi)?;
            written.push(path);
        }
    }
    log::info!("wrote {} images and {} indicator volumes to {}", series.images.len(), written.len() - series.images.len(), out.display());
    Ok(written)
}

/// Images and indicator schedules of a series directory, with their file records.
pub struct SeriesInput {
    pub images: Vec<ScalarField>,
    pub indicators: Vec<IndicatorSchedule>,
    pub image_files: Vec<FileRecord>,
    pub indicator_files: Vec<FileRecord>,
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn load_series(config: &RunConfig, input: &Path) -> Result<SeriesInput> {
    let grid = config.grid()?;
    let check = |path: &Path, g: &uromt_core::Grid| -> Result<()> {
        if g.dims() != grid.dims() {
            return Err(Error::format(
                path,
                "dims",
                format!("{:?} does not match the configured n1, n2, n3 = {:?}", g.dims(), grid.dims()),
            ));
        }
        for (a, key) in ["dx", "dy", "dz"].iter().enumerate() {
            let (h, want) = (g.spacing()[a], grid.spacing()[a]);
            if (h - want).abs() > 1e-9 * want {
                return Err(Error::format(path, "spacing", format!("{key} = {h} does not match the configured {want}")));
            }
        }
        Ok(())
    };
    let mut images = Vec::with_capacity(config.frames);
    let mut image_files = Vec::with_capacity(config.frames);
    for i in 0..config.frames {
        let path = image_path(input, i);
        let image = volume::read_scalar(&path)?;
        check(&path, image.grid())?;
        images.push(image);
        image_files.push(record(Path::new(""), &absolute(&path))?);
    }
    let m = config.solver.steps;
    let mut indicator_files = Vec::new();
    let indicators = match config.indicator {
        IndicatorMode::AllOnes => vec![IndicatorSchedule::PerPair(IndicatorField::ones(grid)); config.frames - 1],
        IndicatorMode::None => vec![IndicatorSchedule::PerPair(IndicatorField::zeros(grid)); config.frames - 1],
        IndicatorMode::CenterRegions => {
            let mut schedules = Vec::with_capacity(config.frames - 1);
            for k in 1..config.frames {
                let mut steps = Vec::with_capacity(m);
                for j in 0..m {
                    let path = indicator_path(input, k, j);
                    let chi = volume::read_indicator(&path)?;
                    check(&path, chi.grid())?;
                    steps.push(chi);
                    indicator_files.push(record(Path::new(""), &absolute(&path))?);
                }
                schedules.push(IndicatorSchedule::PerStep(steps));
            }
            schedules
        }
    };
    Ok(SeriesInput {
        images,
        indicators,
        image_files,
        indicator_files,
    })
}

fn write_loop(run: &Path, loop_number: usize, solution: &TransportSolution) -> Result<Vec<FileRecord>> {
    let dir = loop_dir(run, loop_number);
    create_dir(&dir)?;
    let mut paths = Vec::new();
    let mut scalar = |name: String, field: &ScalarField| -> Result<()> {
        let hdr = dir.join(name);
        let raw = volume::write_scalar(&hdr, field)?;
        paths.push(hdr);
        paths.push(raw);
        Ok(())
    };
    scalar("initial.hdr".into(), &solution.initial)?;
    for (j, r) in solution.sources.iter().enumerate() {
        scalar(format!("source_{j:02}.hdr"), r)?;
    }
    for (j, rho) in solution.interpolations.iter().enumerate() {
        scalar(format!("interp_{:02}.hdr", j + 1), rho)?;
    }
    for (j, v) in solution.velocities.iter().enumerate() {
        let hdr = dir.join(format!("velocity_{j:02}.hdr"));
        let raw = volume::write_vector(&hdr, v)?;
        paths.push(hdr);
        paths.push(raw);
    }
    let trace = dir.join("cost_trace.csv");
    export::write_cost_trace_csv(&trace, &solution.cost_trace)?;
    paths.push(trace);
    paths.iter().map(|p| record(run, p)).collect()
}

/// Runs every loop of the series in `input` and writes the results under `out`.
/// A failing loop still leaves the completed loops and a manifest naming the
/// failure on disk; the failure is then returned as [`Error::Sequence`].
pub fn solve(
    config: &RunConfig,
    input: &Path,
    out: &Path,
    observer: &mut dyn FnMut(usize, &IterationReport),
) -> Result<RunManifest> {
    let series = load_series(config, input)?;
    create_dir(out)?;
    let config_path = out.join("config.toml");
    volume::write_atomic(&config_path, config.to_toml().as_bytes())?;

    let mut manifest = RunManifest::new(config.to_raw());
    manifest.inputs = series.image_files.iter().chain(&series.indicator_files).cloned().collect();
    let started = Instant::now();
    let outcome = run_sequence(&series.images, &series.indicators, &config.solver, observer);
    manifest.solve_seconds = started.elapsed().as_secs_f64();
    let (loops, failure) = match outcome {
        Ok(result) => (result.loops, None),
        Err(e) => {
            let SequenceError {
                loop_index,
                error,
                completed,
            } = e;
            (
                completed.clone(),
                Some(Box::new(SequenceError {
                    loop_index,
                    error,
                    completed,
                })),
            )
        }
    };
    for (k, solution) in loops.iter().enumerate() {
        let files = write_loop(out, k + 1, solution)?;
        let c = solution.final_cost();
        manifest.loops.push(LoopRecord {
            index: k + 1,
            termination: format!("{:?}", solution.termination),
            iterations: solution.iterations,
            negative_source_voxels: solution.negative_source_voxels,
            final_cost: CostRecord {
                gamma1: c.gamma1,
                gamma2: c.gamma2,
                gamma3: c.gamma3,
                total: c.total,
            },
            files,
        });
    }
    manifest.failure = failure.as_ref().map(|e| e.to_string());
    manifest.write(out)?;
    match failure {
        Some(e) => Err(Error::Sequence(e)),
        None => Ok(manifest),
    }
}

/// Solver outputs of one loop, read back from disk.
pub struct LoopFields {
    pub initial: ScalarField,
    pub velocities: Vec<VectorField>,
    pub sources: Vec<ScalarField>,
    pub interpolations: Vec<ScalarField>,
}

pub fn load_loop(run: &Path, loop_number: usize, steps: usize) -> Result<LoopFields> {
    let dir = loop_dir(run, loop_number);
    let scalar = |name: String| volume::read_scalar(&dir.join(name));
    Ok(LoopFields {
        initial: scalar("initial.hdr".into())?,
        velocities: (0..steps)
            .map(|j| volume::read_vector(&dir.join(format!("velocity_{j:02}.hdr"))))
            .collect::<Result<_>>()?,
        sources: (0..steps).map(|j| scalar(format!("source_{j:02}.hdr"))).collect::<Result<_>>()?,
        interpolations: (1..=steps).map(|j| scalar(format!("interp_{j:02}.hdr"))).collect::<Result<_>>()?,
    })
}

fn run_config(manifest: &RunManifest) -> Result<RunConfig> {
    manifest.config.resolve(None)
}

fn load_loops(run: &Path, manifest: &RunManifest, steps: usize) -> Result<Vec<LoopFields>> {
    if manifest.loops.is_empty() {
        return Err(Error::Config(format!("{}: the run has no completed loops", run.display())));
    }
    (1..=manifest.loops.len()).map(|k| load_loop(run, k, steps)).collect()
}

/// Eulerian maps, pathlines, flux vectors and polylines for a solved run.
pub fn post(run: &Path) -> Result<StageRecord> {
    let started = Instant::now();
    let mut manifest = RunManifest::read(run)?;
    let config = run_config(&manifest)?;
    let steps = config.solver.steps;
    let loops = load_loops(run, &manifest, steps)?;
    let [n0, n1] = config.window();
    let window = n0..n1.min(loops.len());
    if window.is_empty() {
        return Err(Error::Config(format!(
            "`post.window`: [{n0}, {n1}] selects no completed loop ({} completed)",
            loops.len()
        )));
    }

    let velocities: Vec<&[VectorField]> = loops.iter().map(|l| l.velocities.as_slice()).collect();
    let sources: Vec<&[ScalarField]> = loops.iter().map(|l| l.sources.as_slice()).collect();
    let maps = eulerian_maps_from(&velocities, &sources, window.clone())?;
    let maps_dir = run.join("maps");
    create_dir(&maps_dir)?;
    let mut written = Vec::new();
    let mut scalar = |name: String, field: &ScalarField| -> Result<()> {
        let hdr = maps_dir.join(name);
        let raw = volume::write_scalar(&hdr, field)?;
        written.push(hdr);
        written.push(raw);
        Ok(())
    };
    for (k, (speed, source)) in maps.speed.iter().zip(&maps.source).enumerate() {
        for (j, (s, r)) in speed.iter().zip(source).enumerate() {
            scalar(format!("speed_l{:02}_s{j:02}.hdr", k + 1), s)?;
            scalar(format!("source_l{:02}_s{j:02}.hdr", k + 1), r)?;
        }
    }
    scalar("mean_speed.hdr".into(), &maps.mean_speed)?;
    scalar("mean_source.hdr".into(), &maps.mean_source)?;

    let mut interval_velocities = Vec::new();
    let mut interval_densities = Vec::new();
    for l in &loops[window.clone()] {
        interval_velocities.extend(l.velocities.iter().cloned());
        interval_densities.push(l.initial.clone());
        interval_densities.extend(l.interpolations[..steps - 1].iter().cloned());
    }
    let tracer = PathlineTracer::new(
        interval_velocities,
        &interval_densities,
        config.solver.dt,
        config.solver.sigma,
        config.post.substeps,
    )?;
    let seeds = seed_points(&loops[window.start].initial, config.post.seed_threshold, config.post.seed_stride);
    let pool = thread_pool()?;
    let lines = pool.install(|| seeds.par_iter().map(|s| tracer.trace(*s)).collect::<Vec<_>>());
    log::info!("traced {} pathlines over {} intervals", lines.len(), tracer.intervals());

    let lines_dir = run.join("lines");
    create_dir(&lines_dir)?;
    let csv = lines_dir.join("pathlines.csv");
    export::write_pathlines_csv(&csv, &lines)?;
    let vtk = lines_dir.join("pathlines.vtk");
    export::write_pathlines_vtk(&vtk, &lines)?;
    let flux = lines_dir.join("flux.csv");
    export::write_flux_csv(&flux, &flux_vectors(&lines))?;
    written.extend([csv, vtk, flux]);

    let stage = StageRecord {
        name: "post".into(),
        seconds: started.elapsed().as_secs_f64(),
        files: written.iter().map(|p| record(run, p)).collect::<Result<_>>()?,
    };
    manifest.set_stage(stage.clone());
    manifest.write(run)?;
    Ok(stage)
}

/// NMSE, PCTM and total-intensity curves of a solved run against its input images.
pub fn metrics(run: &Path) -> Result<(MetricsReport, StageRecord)> {
    let started = Instant::now();
    let mut manifest = RunManifest::read(run)?;
    let config = run_config(&manifest)?;
    let loops = load_loops(run, &manifest, config.solver.steps)?;
    let image_records: Vec<&FileRecord> = manifest
        .inputs
        .iter()
        .filter(|r| Path::new(&r.path).file_name().is_some_and(|n| n.to_string_lossy().starts_with("image_")))
        .take(loops.len() + 1)
        .collect();
    let mut images = Vec::with_capacity(image_records.len());
    for r in &image_records {
        let path = Path::new(&r.path);
        if crate::manifest::sha256_file(path)? != r.sha256 {
            log::warn!("{} changed since the solve", path.display());
        }
        images.push(volume::read_scalar(path)?);
    }
    let interpolations: Vec<&[ScalarField]> = loops.iter().map(|l| l.interpolations.as_slice()).collect();
    let report = metrics_from(&images, &interpolations)?;

    let dir = run.join("metrics");
    create_dir(&dir)?;
    let metrics_csv = dir.join("metrics.csv");
    export::write_metrics_csv(&metrics_csv, &report)?;
    let intensity_csv = dir.join("intensity.csv");
    export::write_intensity_csv(&intensity_csv, &report)?;
    let stage = StageRecord {
        name: "metrics".into(),
        seconds: started.elapsed().as_secs_f64(),
        files: vec![record(run, &metrics_csv)?, record(run, &intensity_csv)?],
    };
    manifest.set_stage(stage.clone());
    manifest.write(run)?;
    Ok((report, stage))
}
