//! End-to-end restoration: guide construction, denoiser construction,
//! system assembly, solve, and output `W z`.

use std::time::Instant;

use crate::denoiser::{KernelConfig, KernelDenoiser, KernelVariant, SpatialProfile};
use crate::error::{check_len, Error, Result};
use crate::forward::{Boundary, ForwardModel};
use crate::image::Image;
use crate::operator::{WorkCount, WorkCounter};
use crate::pnp::{pnp_admm_step, pnp_ista_step, AdmmState, PnpAlgorithm, PnpConfig, PnpProblem};
use crate::solvers::{solve, SolveReport, SolverConfig};
use crate::system::{Objective, SystemForm, SystemMonitor, SystemOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Application {
    Deblur,
    Superres,
    Inpaint,
}

impl Application {
    pub fn name(self) -> &'static str {
        match self {
            Application::Deblur => "deblur",
            Application::Superres => "superres",
            Application::Inpaint => "inpaint",
        }
    }

    pub fn all() -> [Application; 3] {
        [Application::Deblur, Application::Superres, Application::Inpaint]
    }

    /// Default penalty per application.
    pub fn default_rho(self) -> f64 {
        match self {
            Application::Deblur | Application::Inpaint => 0.05,
            Application::Superres => 2.0,
        }
    }
}

impl std::str::FromStr for Application {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deblur" => Ok(Application::Deblur),
            "superres" => Ok(Application::Superres),
            "inpaint" => Ok(Application::Inpaint),
            _ => Err(Error::Config(format!("unknown application `{s}`"))),
        }
    }
}

/// Forward model description independent of the image size.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardSpec {
    Blur {
        kernel: Image,
        boundary: Boundary,
    },
    Superres {
        kernel: Image,
        boundary: Boundary,
        factor: usize,
        phase: usize,
    },
    /// Observation mask in row-major order over the full image.
    Inpaint {
        mask: Vec<bool>,
    },
}

impl ForwardSpec {
    pub fn application(&self) -> Application {
        match self {
            ForwardSpec::Blur { .. } => Application::Deblur,
            ForwardSpec::Superres { .. } => Application::Superres,
            ForwardSpec::Inpaint { .. } => Application::Inpaint,
        }
    }

    pub fn build(&self, height: usize, width: usize) -> Result<ForwardModel> {
        match self {
            ForwardSpec::Blur { kernel, boundary } => ForwardModel::blur(height, width, kernel.clone(), *boundary),
            ForwardSpec::Superres {
                kernel,
                boundary,
                factor,
                phase,
            } => ForwardModel::superres(height, width, kernel.clone(), *boundary, *factor, *phase),
            ForwardSpec::Inpaint { mask } => ForwardModel::inpaint(height, width, mask.clone()),
        }
    }
}

/// Whether the guide-stage denoiser is rebuilt from each iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuideRefresh {
    #[default]
    Refresh,
    /// Keep the back-projection as the guide throughout (ablation).
    Fixed,
}

impl GuideRefresh {
    pub fn name(self) -> &'static str {
        match self {
            GuideRefresh::Refresh => "refresh",
            GuideRefresh::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for GuideRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refresh" => Ok(GuideRefresh::Refresh),
            "fixed" => Ok(GuideRefresh::Fixed),
            _ => Err(Error::Config(format!("unknown guide refresh mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub forward: ForwardSpec,
    /// Denoiser for the final linear solve.
    pub kernel: KernelConfig,
    pub rho: f64,
    pub guide_iterations: usize,
    pub guide_algorithm: PnpAlgorithm,
    /// Denoiser used while building the guide.
    pub guide_denoiser: KernelConfig,
    /// Penalty for the guide iterations; when absent, `‖F‖² / min D` of each
    /// guide-stage denoiser, which keeps ISTA inside its stability range.
    pub guide_rho: Option<f64>,
    pub guide_refresh: GuideRefresh,
    pub solver: SolverConfig,
    pub form: SystemForm,
    pub seed: u64,
}

/// Guide-stage denoiser defaults: a smoothing Yaroslavsky filter, which
/// tolerates the holes and ringing of a back-projection better than patches.
pub fn default_guide_denoiser() -> KernelConfig {
    KernelConfig {
        variant: KernelVariant::Yaroslavsky,
        patch_radius: 0,
        search_radius: 5,
        intensity_bandwidth: 0.5,
        spatial_profile: SpatialProfile::Hat,
        spatial_bandwidth: 3.0,
    }
}

impl PipelineConfig {
    pub fn new(forward: ForwardSpec) -> Self {
        let rho = forward.application().default_rho();
        Self {
            forward,
            kernel: KernelConfig::default(),
            rho,
            guide_iterations: 5,
            guide_algorithm: PnpAlgorithm::Ista,
            guide_denoiser: default_guide_denoiser(),
            guide_rho: None,
            guide_refresh: GuideRefresh::Refresh,
            solver: SolverConfig::default(),
            form: SystemForm::CForm,
            seed: 0,
        }
    }

    pub fn application(&self) -> Application {
        self.forward.application()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if let Some(r) = self.guide_rho {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("guide rho must be positive, got {r}")));
            }
        }
        if self.guide_algorithm == PnpAlgorithm::Fista {
            return Err(Error::Config("guide algorithm must be ista or admm".into()));
        }
        self.kernel.validate()?;
        self.guide_denoiser.validate()?;
        self.solver.validate()?;
        if self.form == SystemForm::CForm && self.solver.method == crate::solvers::SolverMethod::Cg {
            return Err(Error::Config("cg requires the A-form system".into()));
        }
        Ok(())
    }
}

/// Back-projection `Fᵀy / FᵀF e`, zero where `FᵀF e` vanishes.
pub fn back_projection(forward: &ForwardModel, y: &[f64]) -> Result<Image> {
    back_projection_counted(forward, y, &WorkCounter::new())
}

fn back_projection_counted(forward: &ForwardModel, y: &[f64], work: &WorkCounter) -> Result<Image> {
    check_len(forward.output_len(), y.len())?;
    let num = forward.adjoint_slice(y);
    work.forward_adjoint();
    let ones = vec![1.0; forward.input_len()];
    let den = forward.adjoint_slice(&forward.forward_slice(&ones));
    work.forward();
    work.forward_adjoint();
    let peak = den.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data = num
        .iter()
        .zip(&den)
        .map(|(n, d)| if d.abs() > 1e-12 * peak { n / d } else { 0.0 })
        .collect();
    let (h, w) = forward.input_shape();
    Image::new(h, w, data)
}

fn guide_rho(config: &PipelineConfig, forward: &ForwardModel, denoiser: &KernelDenoiser) -> f64 {
    config
        .guide_rho
        .unwrap_or_else(|| forward.norm_squared_bound() / denoiser.min_row_sum())
}

/// Guide image and the work spent building it.
#[derive(Debug, Clone)]
pub struct Guide {
    pub image: Image,
    pub work: WorkCount,
}

/// Back-projection followed by `guide_iterations` PnP steps whose denoiser is
/// rebuilt from the current iterate (or kept on the back-projection in fixed
/// mode).
pub fn build_guide(y: &[f64], forward: &ForwardModel, config: &PipelineConfig) -> Result<Guide> {
    let bp_work = WorkCounter::new();
    let init = back_projection_counted(forward, y, &bp_work)?;
    let mut work = bp_work.snapshot();
    if config.guide_iterations == 0 {
        return Ok(Guide { image: init, work });
    }
    let mut x = init.data().to_vec();
    let mut admm: Option<(AdmmState, Vec<f64>)> = None;
    let inner = PnpConfig::new(PnpAlgorithm::Admm, 1.0, 1).inner;
    for k in 1..=config.guide_iterations {
        let guide_img = match config.guide_refresh {
            GuideRefresh::Refresh => Image::from_vec_like(&init, x.clone())?,
            GuideRefresh::Fixed => init.clone(),
        };
        let den = KernelDenoiser::build(&guide_img, config.guide_denoiser)?;
        let rho = guide_rho(config, forward, &den);
        let problem = PnpProblem::new(forward, &den, y)?;
        match config.guide_algorithm {
            PnpAlgorithm::Ista | PnpAlgorithm::Fista => {
                x = pnp_ista_step(&problem, &x, rho)?.x;
            }
            PnpAlgorithm::Admm => {
                let (state, fty) = admm.get_or_insert_with(|| {
                    work.forward_adjoint += 1;
                    (AdmmState::new(x.clone()), forward.adjoint_slice(y))
                });
                *state = pnp_admm_step(&problem, state, fty, rho, &inner, k)?;
                x = state.v.clone();
            }
        }
        work = work + problem.work();
    }
    Ok(Guide {
        image: Image::from_vec_like(&init, x)?,
        work,
    })
}

/// Operator applications per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageWork {
    pub guide: WorkCount,
    pub solve: WorkCount,
}

impl StageWork {
    pub fn total(&self) -> usize {
        self.guide.total() + self.solve.total()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub guide: f64,
    pub denoiser: f64,
    pub solve: f64,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub image: Image,
    /// Solution of the linear system; `image = W z`.
    pub z: Vec<f64>,
    pub guide: Image,
    pub denoiser: KernelDenoiser,
    pub report: SolveReport,
    pub work: StageWork,
    pub timings: StageTimings,
}

/// Optional extras for a restoration run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RestoreOptions<'a> {
    /// Ground truth for the PSNR column of the telemetry.
    pub truth: Option<&'a Image>,
    /// Record the objective at every iteration (costs extra applications
    /// that are not counted as work).
    pub telemetry: bool,
}

/// Full pipeline on measurements `y` of an image of the given shape.
pub fn restore(y: &[f64], config: &PipelineConfig, shape: (usize, usize)) -> Result<Restoration> {
    let forward = config
        .forward
        .build(shape.0, shape.1)
        .map_err(|e| e.in_stage("forward model"))?;
    restore_with(&forward, y, config, RestoreOptions::default())
}

pub fn restore_with(
    forward: &ForwardModel,
    y: &[f64],
    config: &PipelineConfig,
    options: RestoreOptions<'_>,
) -> Result<Restoration> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    check_len(forward.output_len(), y.len()).map_err(|e| e.in_stage("measurement"))?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite measurement at index {i}")).in_stage("measurement"));
    }

    let t0 = Instant::now();
    let guide = build_guide(y, forward, config).map_err(|e| e.in_stage("guide"))?;
    let t1 = Instant::now();
    let denoiser = KernelDenoiser::build(&guide.image, config.kernel).map_err(|e| e.in_stage("denoiser"))?;
    let t2 = Instant::now();

    let op = SystemOperator::new(config.form, forward, &denoiser, config.rho).map_err(|e| e.in_stage("system"))?;
    let rhs = op.rhs(y).map_err(|e| e.in_stage("system"))?;
    let monitor = SystemMonitor {
        objective: Objective {
            forward,
            denoiser: &denoiser,
            rho: config.rho,
            y,
        },
        truth: options.truth,
    };
    let monitor_ref: Option<&dyn crate::system::Monitor> = if options.telemetry || options.truth.is_some() {
        Some(&monitor)
    } else {
        None
    };
    let solution = solve(&op, &rhs, &config.solver, monitor_ref).map_err(|e| e.in_stage("solve"))?;
    let x = op.restored(&solution.x);
    let t3 = Instant::now();
    let image = Image::from_vec_like(&guide.image, x).map_err(|e| e.in_stage("output"))?;

    Ok(Restoration {
        image,
        z: solution.x,
        guide: guide.image,
        work: StageWork {
            guide: guide.work,
            solve: op.work_counter().snapshot(),
        },
        timings: StageTimings {
            guide: (t1 - t0).as_secs_f64(),
            denoiser: (t2 - t1).as_secs_f64(),
            solve: (t3 - t2).as_secs_f64(),
        },
        report: solution.report,
        denoiser,
    })
}
