//! Gaussian-sphere benchmark series: translating, diffusing spheres that gain
//! and then lose mass in a moving center ball.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{IndicatorField, ScalarField};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeriesSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Physical window `[lo, hi]` sampled on every axis, cell-centered.
    pub window: [f64; 2],
    /// Center shift per frame along each axis.
    pub shift: f64,
    pub amplitude: f64,
    /// Mass-gain coefficient `a_i` of each frame; its length sets the frame count.
    pub coefficients: Vec<f64>,
    pub radius: f64,
    /// Multiplier on the smoothing standard deviations `(i+1)·√0.2` (in voxels).
    pub smoothing_scale: f64,
    /// Sub-steps `m` per pair, for the translating indicators.
    pub steps: usize,
}

impl Default for GaussianSeriesSpec {
    fn default() -> Self {
        Self {
            dims: [50, 50, 50],
            spacing: [1.0; 3],
            window: [-4.0, 8.0],
            shift: 0.8,
            amplitude: 100.0 / libm::sqrt(2.0 * core::f64::consts::PI),
            coefficients: vec![0.0, 0.1, 0.2, 0.1, 0.0],
            radius: 1.5,
            smoothing_scale: 1.0,
            steps: 10,
        }
    }
}

impl GaussianSeriesSpec {
    /// Same physical series on an `n³` grid: voxel spacing and smoothing
    /// are rescaled so that the 50³ reference is sampled more coarsely.
    pub fn at_resolution(n: usize) -> Self {
        let scale = n as f64 / 50.0;
        Self {
            dims: [n; 3],
            spacing: [1.0 / scale; 3],
            smoothing_scale: scale,
            ..Self::default()
        }
    }

    pub fn frames(&self) -> usize {
        self.coefficients.len()
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing)
    }

    fn validate(&self) -> Result<()> {
        if !(self.window[1] > self.window[0]) {
            return Err(Error::invalid("sampling window must have hi > lo"));
        }
        if self.frames() < 2 || self.steps == 0 {
            return Err(Error::invalid("need at least two frames and one sub-step"));
        }
        if !(self.radius >= 0.0) || !(self.smoothing_scale >= 0.0) {
            return Err(Error::invalid("radius and smoothing scale must be nonnegative"));
        }
        Ok(())
    }

    /// Physical coordinate of voxel `i` along `axis`.
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        let [lo, hi] = self.window;
        lo + (i as f64 + 0.5) * (hi - lo) / self.dims[axis] as f64
    }

    fn point(&self, grid: &Grid, idx: usize) -> [f64; 3] {
        let c = grid.coords(idx);
        [self.coordinate(0, c[0]), self.coordinate(1, c[1]), self.coordinate(2, c[2])]
    }

    /// Ball of the configured radius around `(c, c, c)`.
    pub fn ball(&self, center: f64) -> Result<IndicatorField> {
        let grid = self.grid()?;
        let r2 = self.radius * self.radius;
        IndicatorField::from_mask(
            grid,
            (0..grid.len()).map(|i| {
                let p = self.point(&grid, i);
                p.iter().map(|x| (x - center) * (x - center)).sum::<f64>() <= r2
            }),
        )
    }

    /// Unsmoothed frame `i` at a physical point: `(1 + a_i χ_i) G_i`.
    pub fn density_at(&self, frame: usize, p: [f64; 3]) -> f64 {
        let c = self.shift * frame as f64;
        let d2: f64 = p.iter().map(|x| (x - c) * (x - c)).sum();
        let g = self.amplitude * libm::exp(-d2 / 2.0);
        let inside = d2 <= self.radius * self.radius;
        if inside {
            (1.0 + self.coefficients[frame]) * g
        } else {
            g
        }
    }

    /// Smoothing standard deviation of frame `i`, 0 for the first frame.
    pub fn smoothing_std(&self, frame: usize) -> f64 {
        if frame == 0 {
            0.0
        } else {
            (frame + 1) as f64 * libm::sqrt(0.2) * self.smoothing_scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeries {
    pub images: Vec<ScalarField>,
    /// `indicators[i][j]`: ball at `shift·(i + j/m)` for pair `(i, i+1)`.
    pub indicators: Vec<Vec<IndicatorField>>,
}

impl GaussianSeries {
    /// Union of the indicators of pair `i`.
    pub fn center_region(&self, pair: usize) -> Vec<bool> {
        let n = self.images[0].grid().len();
        (0..n)
            .map(|v| self.indicators[pair].iter().any(|c| c.is_active(v)))
            .collect()
    }
}

pub fn gaussian_sphere_series(spec: &GaussianSeriesSpec) -> Result<GaussianSeries> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut images = Vec::with_capacity(spec.frames());
    for frame in 0..spec.frames() {
        let values = (0..grid.len()).map(|i| spec.density_at(frame, spec.point(&grid, i))).collect();
        let raw = ScalarField::new(grid, values)?;
        let std = spec.smoothing_std(frame);
        images.push(if std > 0.0 { gaussian_filter_3d(&raw, std)? } else { raw });
    }
    let m = spec.steps;
    let indicators = (0..spec.frames() - 1)
        .map(|i| {
            (0..m)
                .map(|j| spec.ball(spec.shift * (i as f64 + j as f64 / m as f64)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianSeries { images, indicators })
}

/// Normalized 1D Gaussian kernel with half-width `⌈2·std⌉`.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let half = libm::ceil(2.0 * std) as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * std * std)))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Separable Gaussian smoothing in voxel units with replicate-edge padding.
pub fn gaussian_filter_3d(field: &ScalarField, std: f64) -> Result<ScalarField> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::invalid("smoothing standard deviation must be positive"));
    }
    let grid = *field.grid();
    let kernel = gaussian_kernel(std);
    let half = (kernel.len() / 2) as i64;
    let dims = grid.dims();
    let mut current = field.values().to_vec();
    let mut next = vec![0.0; grid.len()];
    for axis in 0..3 {
        let len = dims[axis] as i64;
        let stride = grid.stride(axis);
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = grid.coords(idx)[axis] as i64;
            let line_start = idx - pos as usize * stride;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let src = (pos + t as i64 - half).clamp(0, len - 1) as usize;
                acc += w * current[line_start + src * stride];
            }
            *out = acc;
        }
        core::mem::swap(&mut current, &mut next);
    }
    ScalarField::new(grid, current)
}
