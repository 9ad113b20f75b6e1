//! Run configuration: TOML file, named presets and command-line overrides.
//!
//! ```toml
//! preset = "gauss-test-1"   # optional; explicit keys below override it
//! n1 = 50
//! n2 = 50
//! n3 = 50
//! q = 5
//! m = 10
//! dt = 0.4
//! dx = 1.0
//! dy = 1.0
//! dz = 1.0
//! sigma = 0.002
//! alpha = 9000.0
//! beta = 5000.0
//! indicator = "center-regions"   # or "all-ones", "none"
//!
//! [solver]
//! max_outer_iters = 100
//! cg_tol = 1e-2
//! diffusion = "spectral"         # or "cg"
//!
//! [post]
//! window = [0, 4]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uromt_core::{DiffusionBackend, Grid, UromtConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndicatorMode {
    /// Per-step indicator volumes produced alongside the images.
    CenterRegions,
    AllOnes,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    GaussTest1,
    GaussTest2,
    RatBrain,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::GaussTest1, Preset::GaussTest2, Preset::RatBrain];

    pub fn name(self) -> &'static str {
        match self {
            Preset::GaussTest1 => "gauss-test-1",
            Preset::GaussTest2 => "gauss-test-2",
            Preset::RatBrain => "rat-brain",
        }
    }

    pub fn config(self) -> RunConfig {
        let (dims, frames, alpha, beta, indicator) = match self {
            Preset::GaussTest1 => ([50, 50, 50], 5, 9000.0, 5000.0, IndicatorMode::CenterRegions),
            Preset::GaussTest2 => ([50, 50, 50], 2, 10000.0, 5000.0, IndicatorMode::AllOnes),
            Preset::RatBrain => ([56, 106, 51], 15, 10000.0, 50.0, IndicatorMode::AllOnes),
        };
        RunConfig {
            dims,
            spacing: [1.0; 3],
            frames,
            indicator,
            solver: UromtConfig {
                alpha,
                beta,
                sigma: 0.002,
                steps: 10,
                dt: 0.4,
                ..UromtConfig::default()
            },
            post: PostConfig::default(),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("`preset`: unknown preset `{s}` (expected gauss-test-1, gauss-test-2 or rat-brain)")))
    }
}

/// Post-processing controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostConfig {
    /// Image window `[N₀, N₁]` for time averages; `None` covers the whole series.
    pub window: Option<[usize; 2]>,
    pub seed_threshold: f64,
    pub seed_stride: usize,
    pub substeps: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            window: None,
            seed_threshold: 0.1,
            seed_stride: 2,
            substeps: 10,
        }
    }
}

/// A validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Number of images `q`.
    pub frames: usize,
    pub indicator: IndicatorMode,
    pub solver: UromtConfig,
    pub post: PostConfig,
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.dims, self.spacing)?)
    }

    /// Resamples the domain onto `n` voxels along the first axis, scaling the
    /// others proportionally and keeping the physical extent `n_a·h_a`.
    pub fn with_resolution(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("`resolution`: must be positive".into()));
        }
        let scale = n as f64 / self.dims[0] as f64;
        for a in 0..3 {
            let extent = self.dims[a] as f64 * self.spacing[a];
            let na = ((self.dims[a] as f64 * scale).round() as usize).max(1);
            self.dims[a] = na;
            self.spacing[a] = extent / na as f64;
        }
        self.validate()?;
        Ok(self)
    }

    /// Time-average window, clamped to the default when unset.
    pub fn window(&self) -> [usize; 2] {
        self.post.window.unwrap_or([0, self.frames - 1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("`{key}`: {msg}")));
        for (key, n) in ["n1", "n2", "n3"].iter().zip(self.dims) {
            if n == 0 {
                return bad(key, "must be positive");
            }
        }
        for (key, h) in ["dx", "dy", "dz"].iter().zip(self.spacing) {
            if !(h > 0.0) || !h.is_finite() {
                return bad(key, "must be positive and finite");
            }
        }
        if self.frames < 2 {
            return bad("q", "need at least two images");
        }
        let s = &self.solver;
        if s.steps == 0 {
            return bad("m", "must be at least 1");
        }
        for (key, v) in [("dt", s.dt), ("alpha", s.alpha), ("beta", s.beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(key, "must be positive and finite");
            }
        }
        if !(s.sigma >= 0.0) || !s.sigma.is_finite() {
            return bad("sigma", "must be nonnegative and finite");
        }
        for (key, v) in [("solver.grad_tol", s.grad_tol), ("solver.cg_tol", s.cg_tol)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(key, "must be positive and finite");
            }
        }
        for (key, v) in [
            ("solver.cg_max_iters", s.cg_max_iters),
            ("solver.ls_max_backtracks", s.ls_max_backtracks),
        ] {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        if let DiffusionBackend::ConjugateGradient { tol, max_iter } = s.diffusion {
            if !(tol > 0.0) || max_iter == 0 {
                return bad("solver.diffusion_cg_tol", "CG diffusion needs a positive tolerance and iteration limit");
            }
        }
        let p = &self.post;
        if let Some([n0, n1]) = p.window {
            if n0 >= n1 || n1 > self.frames - 1 {
                return bad("post.window", "need 0 <= N0 < N1 <= q-1");
            }
        }
        if !(0.0..=1.0).contains(&p.seed_threshold) {
            return bad("post.seed_threshold", "must lie in [0, 1]");
        }
        if p.seed_stride == 0 {
            return bad("post.seed_stride", "must be positive");
        }
        if p.substeps == 0 {
            return bad("post.substeps", "must be positive");
        }
        Ok(())
    }

    /// Fully populated file form of this configuration.
    pub fn to_raw(&self) -> RawConfig {
        let s = &self.solver;
        let (diffusion, diffusion_cg_tol, diffusion_cg_max_iters) = match s.diffusion {
            DiffusionBackend::Spectral => ("spectral", None, None),
            DiffusionBackend::ConjugateGradient { tol, max_iter } => ("cg", Some(tol), Some(max_iter)),
        };
        RawConfig {
            preset: None,
            n1: Some(self.dims[0]),
            n2: Some(self.dims[1]),
            n3: Some(self.dims[2]),
            q: Some(self.frames),
            m: Some(s.steps),
            dt: Some(s.dt),
            dx: Some(self.spacing[0]),
            dy: Some(self.spacing[1]),
            dz: Some(self.spacing[2]),
            sigma: Some(s.sigma),
            alpha: Some(s.alpha),
            beta: Some(s.beta),
            indicator: Some(self.indicator),
            solver: Some(RawSolver {
                max_outer_iters: Some(s.max_outer_iters),
                grad_tol: Some(s.grad_tol),
                cg_tol: Some(s.cg_tol),
                cg_max_iters: Some(s.cg_max_iters),
                ls_max_backtracks: Some(s.ls_max_backtracks),
                armijo: Some(s.armijo),
                reuse_last_interp: Some(s.reuse_last_interp),
                positivity_guard: Some(s.positivity_guard),
                deterministic: Some(s.deterministic),
                diffusion: Some(diffusion.into()),
                diffusion_cg_tol,
                diffusion_cg_max_iters,
            }),
            post: Some(RawPost {
                window: self.post.window,
                seed_threshold: Some(self.post.seed_threshold),
                seed_stride: Some(self.post.seed_stride),
                substeps: Some(self.post.substeps),
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("configuration serializes")
    }
}

/// The on-disk form: every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n3: Option<usize>,
    pub q: Option<usize>,
    pub m: Option<usize>,
    pub dt: Option<f64>,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub dz: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub indicator: Option<IndicatorMode>,
    pub solver: Option<RawSolver>,
    pub post: Option<RawPost>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub max_outer_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub cg_tol: Option<f64>,
    pub cg_max_iters: Option<usize>,
    pub ls_max_backtracks: Option<usize>,
    pub armijo: Option<bool>,
    pub reuse_last_interp: Option<bool>,
    pub positivity_guard: Option<bool>,
    pub deterministic: Option<bool>,
    pub diffusion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_cg_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_cg_max_iters: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPost {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[usize; 2]>,
    pub seed_threshold: Option<f64>,
    pub seed_stride: Option<usize>,
    pub substeps: Option<usize>,
}

impl RawConfig {
    /// Fills unset keys from `preset` (the argument wins over the file's own
    /// `preset` key). Without any preset every model key is required.
    pub fn resolve(&self, preset: Option<Preset>) -> Result<RunConfig> {
        let preset = match (preset, &self.preset) {
            (Some(p), _) => Some(p),
            (None, Some(name)) => Some(name.parse()?),
            (None, None) => None,
        };
        let base = preset.map(Preset::config);
        fn pick<T: Copy>(key: &str, value: Option<T>, fallback: Option<T>) -> Result<T> {
            value
                .or(fallback)
                .ok_or_else(|| Error::Config(format!("`{key}`: missing (set it or choose a preset)")))
        }
        let b = base.as_ref();
        let mut solver = UromtConfig {
            steps: pick("m", self.m, b.map(|c| c.solver.steps))?,
            dt: pick("dt", self.dt, b.map(|c| c.solver.dt))?,
            sigma: pick("sigma", self.sigma, b.map(|c| c.solver.sigma))?,
            alpha: pick("alpha", self.alpha, b.map(|c| c.solver.alpha))?,
            beta: pick("beta", self.beta, b.map(|c| c.solver.beta))?,
            ..UromtConfig::default()
        };
        if let Some(s) = &self.solver {
            let d = solver;
            solver.max_outer_iters = s.max_outer_iters.unwrap_or(d.max_outer_iters);
            solver.grad_tol = s.grad_tol.unwrap_or(d.grad_tol);
            solver.cg_tol = s.cg_tol.unwrap_or(d.cg_tol);
            solver.cg_max_iters = s.cg_max_iters.unwrap_or(d.cg_max_iters);
            solver.ls_max_backtracks = s.ls_max_backtracks.unwrap_or(d.ls_max_backtracks);
            solver.armijo = s.armijo.unwrap_or(d.armijo);
            solver.reuse_last_interp = s.reuse_last_interp.unwrap_or(d.reuse_last_interp);
            solver.positivity_guard = s.positivity_guard.unwrap_or(d.positivity_guard);
            solver.deterministic = s.deterministic.unwrap_or(d.deterministic);
            solver.diffusion = match s.diffusion.as_deref() {
                None | Some("spectral") => {
                    if s.diffusion_cg_tol.is_some() || s.diffusion_cg_max_iters.is_some() {
                        return Err(Error::Config(
                            "`solver.diffusion_cg_tol`: only valid with diffusion = \"cg\"".into(),
                        ));
                    }
                    DiffusionBackend::Spectral
                }
                Some("cg") => {
                    let DiffusionBackend::ConjugateGradient { tol, max_iter } = DiffusionBackend::DEFAULT_CG else {
                        unreachable!()
                    };
                    DiffusionBackend::ConjugateGradient {
                        tol: s.diffusion_cg_tol.unwrap_or(tol),
                        max_iter: s.diffusion_cg_max_iters.unwrap_or(max_iter),
                    }
                }
                Some(other) => {
                    return Err(Error::Config(format!(
                        "`solver.diffusion`: unknown backend `{other}` (expected spectral or cg)"
                    )))
                }
            };
        }
        let mut post = PostConfig::default();
        if let Some(p) = &self.post {
            post.window = p.window;
            post.seed_threshold = p.seed_threshold.unwrap_or(post.seed_threshold);
            post.seed_stride = p.seed_stride.unwrap_or(post.seed_stride);
            post.substeps = p.substeps.unwrap_or(post.substeps);
        }
        let config = RunConfig {
            dims: [
                pick("n1", self.n1, b.map(|c| c.dims[0]))?,
                pick("n2", self.n2, b.map(|c| c.dims[1]))?,
                pick("n3", self.n3, b.map(|c| c.dims[2]))?,
            ],
            spacing: [
                pick("dx", self.dx, b.map(|c| c.spacing[0]))?,
                pick("dy", self.dy, b.map(|c| c.spacing[1]))?,
                pick("dz", self.dz, b.map(|c| c.spacing[2]))?,
            ],
            frames: pick("q", self.q, b.map(|c| c.frames))?,
            indicator: pick("indicator", self.indicator, b.map(|c| c.indicator))?,
            solver,
            post,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_config_str(text: &str, preset: Option<Preset>) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    raw.resolve(preset)
}

pub fn parse_config(path: &Path, preset: Option<Preset>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_config_str(&text, preset).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
