//! `uromt` command line. Usage errors exit with 2, runtime failures with 1.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, Preset, RunConfig};
use crate::error::Result;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::pipeline;
use crate::volume;

#[derive(Debug, Parser)]
#[command(name = "uromt", version, about = "Unbalanced regularized optimal mass transport on 3D volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic image series.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Solve every adjacent pair of an image series.
    Solve(SolveArgs),
    /// Eulerian maps, pathlines and flux vectors of a solved run.
    Post(RunArgs),
    /// NMSE, PCTM and total-intensity curves of a solved run.
    Metrics(RunArgs),
    /// Print volume headers or a run manifest summary.
    Info {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Translating, diffusing Gaussian spheres with a center-region mass change.
    Gaussian {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// gauss-test-1, gauss-test-2 or rat-brain.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// TOML configuration; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Voxels along the first axis, keeping the physical domain.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Series directory with image_II.hdr (and indicator_KK_JJ.hdr).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_outer_iters: Option<usize>,
    #[arg(long)]
    cg_max_iters: Option<usize>,
    #[arg(long)]
    cg_tol: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run directory written by `solve`.
    #[arg(long)]
    run: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let config = match (&self.config, self.preset) {
            (Some(path), preset) => parse_config(path, preset)?,
            (None, Some(preset)) => preset.config(),
            (None, None) => return Err(crate::Error::Config("give --preset or --config".into())),
        };
        match self.resolution {
            Some(n) => config.with_resolution(n),
            None => Ok(config),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(SynthCommand::Gaussian { config, out }) => {
            pipeline::synth_gaussian(&config.resolve()?, &out)?;
        }
        Command::Solve(args) => {
            let mut config = args.config.resolve()?;
            let s = &mut config.solver;
            s.alpha = args.alpha.unwrap_or(s.alpha);
            s.beta = args.beta.unwrap_or(s.beta);
            s.max_outer_iters = args.max_outer_iters.unwrap_or(s.max_outer_iters);
            s.cg_max_iters = args.cg_max_iters.unwrap_or(s.cg_max_iters);
            s.cg_tol = args.cg_tol.unwrap_or(s.cg_tol);
            config.validate()?;
            let manifest = pipeline::solve(&config, &args.input, &args.out, &mut |k, r| {
                log::info!(
                    "loop {} iter {:>3}: cost {:.6e} (Γ₁ {:.3e}, Γ₂ {:.3e}, Γ₃ {:.3e}) |g| {:.3e} cg {} step {}",
                    k + 1,
                    r.iteration,
                    r.cost.total,
                    r.cost.gamma1,
                    r.cost.gamma2,
                    r.cost.gamma3,
                    r.gradient_norm,
                    r.cg_iterations,
                    r.step_length.map_or("-".into(), |l| format!("{l}")),
                )
            })?;
            for l in &manifest.loops {
                log::info!("loop {}: {} after {} iterations", l.index, l.termination, l.iterations);
            }
        }
        Command::Post(args) => {
            let stage = pipeline::post(&args.run)?;
            log::info!("post: {} files in {:.1}s", stage.files.len(), stage.seconds);
        }
        Command::Metrics(args) => {
            let (report, _) = pipeline::metrics(&args.run)?;
            for (k, (n, p)) in report.nmse.iter().zip(&report.pctm).enumerate() {
                println!("loop {}: NMSE {n:.6}%  PCTM {p:.6}%", k + 1);
            }
        }
        Command::Info { files } => {
            for f in files {
                info(&f)?;
            }
        }
    }
    Ok(())
}

fn info(path: &Path) -> Result<()> {
    if path.is_dir() || path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
        let run = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
        let m = RunManifest::read(run)?;
        println!("{}: {}", run.display(), m.software);
        println!("  inputs: {}", m.inputs.len());
        for l in &m.loops {
            println!(
                "  loop {}: {} after {} iterations, cost {:.6e}, {} files",
                l.index,
                l.termination,
                l.iterations,
                l.final_cost.total,
                l.files.len()
            );
        }
        if let Some(f) = &m.failure {
            println!("  failure: {f}");
        }
        for s in &m.stages {
            println!("  {}: {} files in {:.1}s", s.name, s.files.len(), s.seconds);
        }
        return Ok(());
    }
    let vol = volume::read_volume(path)?;
    let h = &vol.header;
    let (min, max, sum) = vol
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &x| (lo.min(x), hi.max(x), s + x));
    println!("{}:", path.display());
    println!("  dims {:?}  spacing {:?}", h.dims, h.spacing);
    println!("  dtype {:?}  components {}  endianness {:?}", h.dtype, h.components, h.endianness);
    println!("  min {min:.6e}  max {max:.6e}  sum {sum:.6e}");
    Ok(())
}
