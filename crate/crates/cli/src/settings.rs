//! Resolved run settings and their flat key-value form.
//!
//! Every command reads its settings from a single [`ConfigMap`] (config file
//! merged with command-line overrides) and writes them back fully expanded,
//! which is what the run manifest stores.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use krs_core::config::{
    kernel_keys, read_kernel_config, read_solver_config, solver_keys, write_kernel_config, write_solver_config,
    ConfigMap,
};
use krs_core::forward::{box_kernel, gaussian_kernel};
use krs_core::harness::Fault;
use krs_core::io::load_kernel;
use krs_core::pipeline::{default_guide_denoiser, Application, GuideRefresh};
use krs_core::pnp::PnpAlgorithm;
use krs_core::{Boundary, Image, KernelConfig, SolverConfig, SolverMethod, SystemForm};

fn opt_path(map: &ConfigMap, key: &str) -> Option<PathBuf> {
    match map.get(key) {
        None | Some("none") | Some("") => None,
        Some(p) => Some(PathBuf::from(p)),
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".to_string(), |p| p.display().to_string())
}

/// Absolute form of a user path so that manifests replay from any directory.
pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Blur kernel given as `gaussian:SIZE:STD`, `box:SIZE`, or a kernel file.
pub fn parse_blur_kernel(spec: &str) -> Result<Image> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["gaussian", size, std] => {
            let size: usize = size.parse().with_context(|| format!("kernel size in `{spec}`"))?;
            let std: f64 = std.parse().with_context(|| format!("kernel std in `{spec}`"))?;
            if size.is_multiple_of(2) || std.is_nan() || std <= 0.0 {
                bail!("gaussian kernel needs an odd positive size and positive std, got `{spec}`");
            }
            Ok(gaussian_kernel(size, std))
        }
        ["box", size] => {
            let size: usize = size.parse().with_context(|| format!("kernel size in `{spec}`"))?;
            if size.is_multiple_of(2) {
                bail!("box kernel needs an odd positive size, got `{spec}`");
            }
            Ok(box_kernel(size))
        }
        _ => Ok(load_kernel(spec)?),
    }
}

fn default_blur(app: Application) -> &'static str {
    match app {
        Application::Superres => "gaussian:9:1",
        _ => "gaussian:25:1.6",
    }
}

/// How the measurements are obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSettings {
    pub application: Application,
    /// Clean image to degrade, or the measurement itself when `measured`.
    /// `None` selects a synthetic image (solver comparisons only).
    pub input: Option<PathBuf>,
    pub size: usize,
    pub measured: bool,
    pub reference: Option<PathBuf>,
    pub blur: String,
    pub boundary: Boundary,
    pub factor: usize,
    pub phase: usize,
    /// Mask file; `None` draws a random mask of `mask_density`.
    pub mask: Option<PathBuf>,
    pub mask_density: f64,
    pub sigma: f64,
    pub seed: u64,
}

const PROBLEM_KEYS: [&str; 13] = [
    "application",
    "input",
    "size",
    "measured",
    "reference",
    "blur_kernel",
    "boundary",
    "factor",
    "phase",
    "mask",
    "mask_density",
    "sigma",
    "seed",
];

impl ProblemSettings {
    pub fn from_map(map: &ConfigMap, application: Application) -> Result<Self> {
        let s = Self {
            application,
            input: opt_path(map, "input"),
            size: map.get_or("size", 64)?,
            measured: map.get_or("measured", false)?,
            reference: opt_path(map, "reference"),
            blur: map.get_or("blur_kernel", default_blur(application).to_string())?,
            boundary: map.get_or("boundary", Boundary::Circular)?,
            factor: map.get_or("factor", 2)?,
            phase: map.get_or("phase", 0)?,
            mask: opt_path(map, "mask"),
            mask_density: map.get_or("mask_density", 0.2)?,
            sigma: map.get_or("sigma", 0.0)?,
            seed: map.get_or("seed", 0)?,
        };
        if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
            bail!("sigma must be nonnegative, got {}", s.sigma);
        }
        if !(0.0..=1.0).contains(&s.mask_density) {
            bail!("mask_density must lie in [0, 1], got {}", s.mask_density);
        }
        if s.size == 0 {
            bail!("size must be positive");
        }
        Ok(s)
    }

    pub fn write(&self, map: &mut ConfigMap) {
        map.set("application", self.application.name());
        map.set("input", path_text(&self.input));
        map.set("size", self.size);
        map.set("measured", self.measured);
        map.set("reference", path_text(&self.reference));
        map.set("blur_kernel", &self.blur);
        map.set("boundary", self.boundary.name());
        map.set("factor", self.factor);
        map.set("phase", self.phase);
        map.set("mask", path_text(&self.mask));
        map.set("mask_density", self.mask_density);
        map.set("sigma", self.sigma);
        map.set("seed", self.seed);
    }
}

/// Everything a restoration run needs besides the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct RestoreSettings {
    pub problem: ProblemSettings,
    pub rho: f64,
    pub guide_iterations: usize,
    pub guide_algorithm: PnpAlgorithm,
    pub guide_refresh: GuideRefresh,
    pub guide_rho: Option<f64>,
    pub denoiser: KernelConfig,
    pub guide_denoiser: KernelConfig,
    pub solver: SolverConfig,
    pub form: SystemForm,
    pub telemetry: bool,
    pub output: PathBuf,
    pub output_dir: PathBuf,
}

const RESTORE_KEYS: [&str; 9] = [
    "rho",
    "guide.iterations",
    "guide.algorithm",
    "guide.refresh",
    "guide.rho",
    "form",
    "telemetry",
    "output",
    "output_dir",
];

impl RestoreSettings {
    pub fn from_map(map: &ConfigMap, application: Application) -> Result<Self> {
        let problem = ProblemSettings::from_map(map, application)?;
        let guide_rho = match map.get("guide.rho") {
            None | Some("auto") => None,
            Some(_) => map.get_parsed("guide.rho")?,
        };
        let denoiser = read_kernel_config(map, "denoiser", KernelConfig::default().for_noise(problem.sigma))?;
        Ok(Self {
            rho: map.get_or("rho", application.default_rho())?,
            guide_iterations: map.get_or("guide.iterations", 5)?,
            guide_algorithm: map.get_or("guide.algorithm", PnpAlgorithm::Ista)?,
            guide_refresh: map.get_or("guide.refresh", GuideRefresh::Refresh)?,
            guide_rho,
            denoiser,
            guide_denoiser: read_kernel_config(map, "guide.denoiser", default_guide_denoiser())?,
            solver: read_solver_config(map, "solver", SolverConfig::default())?,
            form: map.get_or("form", SystemForm::CForm)?,
            telemetry: map.get_or("telemetry", false)?,
            output: map.get_or("output", PathBuf::from("restored.png"))?,
            output_dir: map.get_or("output_dir", PathBuf::from("krs-output"))?,
            problem,
        })
    }

    pub fn write(&self, map: &mut ConfigMap) {
        self.problem.write(map);
        map.set("rho", self.rho);
        map.set("guide.iterations", self.guide_iterations);
        map.set("guide.algorithm", self.guide_algorithm.name());
        map.set("guide.refresh", self.guide_refresh.name());
        map.set(
            "guide.rho",
            self.guide_rho.map_or("auto".to_string(), |r| r.to_string()),
        );
        write_kernel_config(map, "denoiser", &self.denoiser);
        write_kernel_config(map, "guide.denoiser", &self.guide_denoiser);
        write_solver_config(map, "solver", &self.solver);
        map.set("form", self.form.name());
        map.set("telemetry", self.telemetry);
        map.set("output", self.output.display());
        map.set("output_dir", self.output_dir.display());
    }

    pub fn known_keys() -> Vec<String> {
        let mut keys: Vec<String> = PROBLEM_KEYS
            .iter()
            .chain(&RESTORE_KEYS)
            .map(|k| k.to_string())
            .collect();
        keys.extend(kernel_keys("denoiser"));
        keys.extend(kernel_keys("guide.denoiser"));
        keys.extend(solver_keys("solver"));
        keys
    }
}

/// A method entry of a solver comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Linear(SolverMethod),
    Pnp(PnpAlgorithm),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Linear(m) => m.name(),
            Method::Pnp(a) => a.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.starts_with("pnp-") {
            Ok(Method::Pnp(s.parse()?))
        } else {
            Ok(Method::Linear(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSettings {
    pub restore: RestoreSettings,
    pub methods: Vec<Method>,
    pub pnp_iterations: usize,
}

pub const DEFAULT_METHODS: &str = "gmres-restarted,gmres-augmented,broyden,pnp-ista,pnp-fista,pnp-admm";

impl CompareSettings {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let application: Application = map.get_or("application", Application::Deblur)?;
        let mut restore = RestoreSettings::from_map(map, application)?;
        if !map.contains("output_dir") {
            restore.output_dir = PathBuf::from("krs-compare");
        }
        let list = map.get("methods").unwrap_or(DEFAULT_METHODS);
        let methods = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Method::parse)
            .collect::<Result<Vec<_>>>()?;
        if methods.is_empty() {
            bail!("no solvers selected");
        }
        let pnp_iterations = map.get_or("pnp_iterations", 200)?;
        if pnp_iterations == 0 {
            bail!("pnp_iterations must be at least 1");
        }
        Ok(Self {
            restore,
            methods,
            pnp_iterations,
        })
    }

    pub fn write(&self, map: &mut ConfigMap) {
        self.restore.write(map);
        let names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        map.set("methods", names.join(","));
        map.set("pnp_iterations", self.pnp_iterations);
    }

    pub fn known_keys() -> Vec<String> {
        let mut keys = RestoreSettings::known_keys();
        keys.push("methods".into());
        keys.push("pnp_iterations".into());
        keys
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub trials: usize,
    pub max_n: usize,
    pub seed: u64,
    pub fault: Fault,
    pub output_dir: PathBuf,
}

impl VerifySettings {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let fault = match map.get("fault") {
            None => Fault::None,
            Some(f) => f.parse()?,
        };
        let s = Self {
            trials: map.get_or("trials", 25)?,
            max_n: map.get_or("max_n", 64)?,
            seed: map.get_or("seed", 0)?,
            fault,
            output_dir: map.get_or("output_dir", PathBuf::from("krs-verify"))?,
        };
        if s.max_n < 4 {
            bail!("max_n must be at least 4 (a 2x2 image), got {}", s.max_n);
        }
        Ok(s)
    }

    pub fn write(&self, map: &mut ConfigMap) {
        map.set("trials", self.trials);
        map.set("max_n", self.max_n);
        map.set("seed", self.seed);
        map.set("fault", self.fault.name());
        map.set("output_dir", self.output_dir.display());
    }

    pub fn known_keys() -> Vec<String> {
        ["trials", "max_n", "seed", "fault", "output_dir"]
            .iter()
            .map(|k| k.to_string())
            .collect()
    }
}
