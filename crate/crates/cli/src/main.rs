//! `krs`: kernel-regularized restoration from the command line.

/// `print!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

mod compare;
mod manifest;
mod problem;
mod restore;
mod settings;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use krs_core::config::ConfigMap;
use krs_core::pipeline::Application;

use manifest::RunManifest;
use settings::{absolute, CompareSettings, RestoreSettings, VerifySettings};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    InputError = 1,
    NotConverged = 2,
    Violation = 3,
}

#[derive(Parser, Debug)]
#[command(
    name = "krs",
    version,
    about = "Image restoration with kernel-denoiser regularization and Krylov solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Remove blur and noise.
    Deblur(DeblurArgs),
    /// Recover a high-resolution image from a blurred, decimated one.
    Superres(SuperresArgs),
    /// Fill in missing pixels.
    Inpaint(InpaintArgs),
    /// Run several solvers and PnP baselines on one problem and compare.
    CompareSolvers(CompareArgs),
    /// Check the regularizer and solver properties on random small instances.
    Verify(VerifyArgs),
    /// Rerun a saved manifest.
    Replay(ReplayArgs),
}

/// Options shared by the restoration commands.
#[derive(Args, Debug, Default)]
struct RestoreFlags {
    /// Clean image to degrade (or the measurement with --measured).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Treat --input as the measurement instead of simulating it.
    #[arg(long)]
    measured: bool,
    /// Ground truth for PSNR/SSIM (defaults to --input when simulating).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Noise standard deviation on the [0, 1] intensity scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Regularization weight.
    #[arg(long)]
    rho: Option<f64>,
    /// PnP iterations used to build the guide image.
    #[arg(long = "guide-iters")]
    guide_iters: Option<usize>,
    /// Guide-stage algorithm: ista or admm.
    #[arg(long)]
    guide_algorithm: Option<String>,
    /// Guide-stage penalty (default: automatic).
    #[arg(long)]
    guide_rho: Option<f64>,
    /// Denoiser variant: nlm-gaussian, nlm-laplacian, bilateral, yaroslavsky.
    #[arg(long)]
    denoiser: Option<String>,
    /// Denoiser intensity bandwidth (default scales with --sigma).
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    patch_radius: Option<usize>,
    #[arg(long)]
    search_radius: Option<usize>,
    /// Linear solver: gmres-restarted, gmres-augmented, broyden, cg.
    #[arg(long)]
    solver: Option<String>,
    /// Relative residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// GMRES restart length.
    #[arg(long)]
    restart: Option<usize>,
    /// Cap on operator applications in the solve.
    #[arg(long)]
    budget: Option<usize>,
    /// System form: a (symmetric) or c.
    #[arg(long)]
    form: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restored image file name, inside --output-dir.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Record the objective at every iteration.
    #[arg(long)]
    telemetry: bool,
    /// Key-value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BlurFlags {
    /// Blur kernel: gaussian:SIZE:STD, box:SIZE, or a kernel file.
    #[arg(long)]
    kernel: Option<String>,
    /// Boundary handling: circular or symmetric.
    #[arg(long)]
    boundary: Option<String>,
}

#[derive(Args, Debug)]
struct DeblurArgs {
    #[command(flatten)]
    blur: BlurFlags,
    #[command(flatten)]
    common: RestoreFlags,
}

#[derive(Args, Debug)]
struct SuperresArgs {
    #[command(flatten)]
    blur: BlurFlags,
    /// Decimation factor.
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    phase: Option<usize>,
    #[command(flatten)]
    common: RestoreFlags,
}

#[derive(Args, Debug)]
struct MaskFlags {
    /// Observation mask image (nonzero = observed); random when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Fraction of observed pixels for a random mask.
    #[arg(long)]
    mask_density: Option<f64>,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[command(flatten)]
    mask: MaskFlags,
    #[command(flatten)]
    common: RestoreFlags,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Problem preset: deblur (25x25 Gaussian, sigma 10/255), inpaint (20% of pixels kept), superres (2x).
    #[arg(long)]
    preset: Option<String>,
    /// Application when no preset is given: deblur, superres, inpaint.
    #[arg(long)]
    application: Option<String>,
    /// Comma-separated methods, e.g. gmres-restarted,broyden,pnp-admm.
    #[arg(long)]
    solvers: Option<String>,
    /// Iterations for the PnP baselines.
    #[arg(long)]
    pnp_iters: Option<usize>,
    /// Side of the synthetic image used when --input is absent.
    #[arg(long)]
    size: Option<usize>,
    #[command(flatten)]
    blur: BlurFlags,
    #[arg(long)]
    factor: Option<usize>,
    #[command(flatten)]
    mask: MaskFlags,
    #[command(flatten)]
    common: RestoreFlags,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Random instances per suite.
    #[arg(long)]
    trials: Option<usize>,
    /// Largest number of pixels in an instance.
    #[arg(long = "max-n")]
    max_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Deliberate defect for checking the suites themselves.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn set<T: std::fmt::Display>(map: &mut ConfigMap, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        map.set(key, v);
    }
}

fn set_path(map: &mut ConfigMap, key: &str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        map.set(key, absolute(p).display());
    }
}

impl RestoreFlags {
    fn write(&self, map: &mut ConfigMap) {
        set_path(map, "input", &self.input);
        if self.measured {
            map.set("measured", true);
        }
        set_path(map, "reference", &self.reference);
        set(map, "sigma", &self.sigma);
        set(map, "rho", &self.rho);
        set(map, "guide.iterations", &self.guide_iters);
        set(map, "guide.algorithm", &self.guide_algorithm);
        set(map, "guide.rho", &self.guide_rho);
        set(map, "denoiser.variant", &self.denoiser);
        set(map, "denoiser.bandwidth", &self.bandwidth);
        set(map, "denoiser.patch_radius", &self.patch_radius);
        set(map, "denoiser.search_radius", &self.search_radius);
        set(map, "solver.method", &self.solver);
        set(map, "solver.tolerance", &self.tol);
        set(map, "solver.max_iterations", &self.max_iters);
        set(map, "solver.restart", &self.restart);
        set(map, "solver.budget", &self.budget);
        set(map, "form", &self.form);
        set(map, "seed", &self.seed);
        set(map, "output", &self.output.as_ref().map(|p| p.display().to_string()));
        set(
            map,
            "output_dir",
            &self.output_dir.as_ref().map(|p| p.display().to_string()),
        );
        if self.telemetry {
            map.set("telemetry", true);
        }
    }
}

impl BlurFlags {
    fn write(&self, map: &mut ConfigMap) {
        match &self.kernel {
            // Kernel files are stored by absolute path; specs verbatim.
            Some(k) if std::path::Path::new(k).is_file() => {
                map.set("blur_kernel", absolute(std::path::Path::new(k)).display())
            }
            k => set(map, "blur_kernel", k),
        }
        set(map, "boundary", &self.boundary);
    }
}

impl MaskFlags {
    fn write(&self, map: &mut ConfigMap) {
        set_path(map, "mask", &self.mask);
        set(map, "mask_density", &self.mask_density);
    }
}

/// Base layer for a comparison preset.
fn preset(name: &str) -> Result<ConfigMap> {
    let text = match name {
        "deblur" => "application = deblur\nblur_kernel = gaussian:25:1.6\nsigma = 0.0392156862745098\nrho = 0.05\n",
        "inpaint" => "application = inpaint\nmask_density = 0.2\nsigma = 0.04\nrho = 0.05\n",
        "superres" => {
            "application = superres\nblur_kernel = gaussian:9:1\nfactor = 2\nsigma = 0.0196078431372549\nrho = 2\n"
        }
        other => bail!("unknown preset `{other}` (expected deblur, inpaint or superres)"),
    };
    Ok(ConfigMap::parse(text)?)
}

/// File layer (if any) overridden by the flag layer.
fn layered(base: ConfigMap, file: &Option<PathBuf>, flags: ConfigMap) -> Result<ConfigMap> {
    let mut map = base;
    if let Some(path) = file {
        map.merge(&ConfigMap::load(path).with_context(|| format!("reading config {}", path.display()))?);
    }
    map.merge(&flags);
    Ok(map)
}

fn check_keys(map: &ConfigMap, known: &[String]) -> Result<()> {
    let known: Vec<&str> = known.iter().map(String::as_str).collect();
    map.reject_unknown(&known)?;
    Ok(())
}

fn run_restore(command: &str, app: Application, map: &ConfigMap) -> Result<Status> {
    check_keys(map, &RestoreSettings::known_keys())?;
    let s = RestoreSettings::from_map(map, app)?;
    if s.problem.input.is_none() {
        bail!("--input is required");
    }
    restore::run(command, &s)
}

fn run_compare(map: &ConfigMap) -> Result<Status> {
    check_keys(map, &CompareSettings::known_keys())?;
    compare::run(&CompareSettings::from_map(map)?)
}

fn run_verify(map: &ConfigMap) -> Result<Status> {
    check_keys(map, &VerifySettings::known_keys())?;
    verify::run(&VerifySettings::from_map(map)?)
}

/// Runs a resolved configuration for the named command.
fn dispatch(command: &str, map: &ConfigMap) -> Result<Status> {
    match command {
        "deblur" | "superres" | "inpaint" => run_restore(command, command.parse()?, map),
        "compare-solvers" => run_compare(map),
        "verify" => run_verify(map),
        other => bail!("unknown command `{other}` in manifest"),
    }
}

fn execute(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Deblur(a) => {
            let mut flags = ConfigMap::new();
            a.blur.write(&mut flags);
            a.common.write(&mut flags);
            dispatch("deblur", &layered(ConfigMap::new(), &a.common.config, flags)?)
        }
        Command::Superres(a) => {
            let mut flags = ConfigMap::new();
            a.blur.write(&mut flags);
            set(&mut flags, "factor", &a.factor);
            set(&mut flags, "phase", &a.phase);
            a.common.write(&mut flags);
            dispatch("superres", &layered(ConfigMap::new(), &a.common.config, flags)?)
        }
        Command::Inpaint(a) => {
            let mut flags = ConfigMap::new();
            a.mask.write(&mut flags);
            a.common.write(&mut flags);
            dispatch("inpaint", &layered(ConfigMap::new(), &a.common.config, flags)?)
        }
        Command::CompareSolvers(a) => {
            let base = match &a.preset {
                Some(p) => preset(p)?,
                None => ConfigMap::new(),
            };
            let mut flags = ConfigMap::new();
            set(&mut flags, "application", &a.application);
            set(&mut flags, "methods", &a.solvers);
            set(&mut flags, "pnp_iterations", &a.pnp_iters);
            set(&mut flags, "size", &a.size);
            set(&mut flags, "factor", &a.factor);
            a.blur.write(&mut flags);
            a.mask.write(&mut flags);
            a.common.write(&mut flags);
            dispatch("compare-solvers", &layered(base, &a.common.config, flags)?)
        }
        Command::Verify(a) => {
            let mut flags = ConfigMap::new();
            set(&mut flags, "trials", &a.trials);
            set(&mut flags, "max_n", &a.max_n);
            set(&mut flags, "seed", &a.seed);
            set(&mut flags, "fault", &a.inject_fault);
            set(
                &mut flags,
                "output_dir",
                &a.output_dir.as_ref().map(|p| p.display().to_string()),
            );
            dispatch("verify", &layered(ConfigMap::new(), &a.config, flags)?)
        }
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.version != manifest::VERSION {
                log::warn!(
                    "manifest written by version {}, running {}",
                    m.version,
                    manifest::VERSION
                );
            }
            let mut config = m.config;
            if let Some(dir) = &a.output_dir {
                config.set("output_dir", dir.display());
            }
            dispatch(&m.command, &config)
        }
    }
}

/// Caps the global rayon pool at `KRS_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("KRS_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("KRS_THREADS must be a positive integer, got `{value}`"))?;
    if n == 0 {
        bail!("KRS_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Status::InputError as u8),
            };
        }
    };
    let status = configure_threads().and_then(|()| execute(cli)).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        Status::InputError
    });
    ExitCode::from(status as u8)
}
