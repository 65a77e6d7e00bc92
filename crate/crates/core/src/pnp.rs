//! Scaled plug-and-play baselines (ISTA, FISTA, ADMM) built on the kernel
//! denoiser. They minimize the same objective as the linear systems and are
//! used for convergence comparison and to build guide images.

use std::time::Instant;

use crate::denoiser::KernelDenoiser;
use crate::error::{check_len, Error, Result};
use crate::forward::ForwardModel;
use crate::image::Image;
use crate::operator::{LinearOperator, WorkCount, WorkCounter};
use crate::solvers::{solve, InitialGuess, IterationRecord, SolveReport, SolverConfig, SolverMethod, StopReason};
use crate::system::{Monitor, Objective};
use crate::vecops::{all_finite, norm, sub};

/// Objective growth factor that marks a run as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpAlgorithm {
    Ista,
    Fista,
    Admm,
}

impl PnpAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            PnpAlgorithm::Ista => "pnp-ista",
            PnpAlgorithm::Fista => "pnp-fista",
            PnpAlgorithm::Admm => "pnp-admm",
        }
    }
}

impl std::str::FromStr for PnpAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ista" | "pnp-ista" => Ok(PnpAlgorithm::Ista),
            "fista" | "pnp-fista" => Ok(PnpAlgorithm::Fista),
            "admm" | "pnp-admm" => Ok(PnpAlgorithm::Admm),
            _ => Err(Error::Config(format!("unknown PnP algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpConfig {
    pub algorithm: PnpAlgorithm,
    pub rho: f64,
    pub iterations: usize,
    /// Solver for the ADMM x-update.
    pub inner: SolverConfig,
    /// Starting image, zero when absent.
    pub initialization: Option<Vec<f64>>,
    /// FISTA only; `false` forces zero momentum.
    pub momentum: bool,
    /// Stop early once the relative change of the iterate drops below this.
    pub tolerance: Option<f64>,
}

impl PnpConfig {
    pub fn new(algorithm: PnpAlgorithm, rho: f64, iterations: usize) -> Self {
        Self {
            algorithm,
            rho,
            iterations,
            inner: SolverConfig {
                method: SolverMethod::Cg,
                tolerance: 1e-8,
                max_iterations: 100,
                ..SolverConfig::default()
            },
            initialization: None,
            momentum: true,
            tolerance: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        self.inner.validate()
    }
}

/// Measurements, forward model and denoiser shared by the PnP iterations,
/// with a counter for every primitive operator application.
pub struct PnpProblem<'a> {
    pub forward: &'a ForwardModel,
    pub denoiser: &'a KernelDenoiser,
    pub y: &'a [f64],
    work: WorkCounter,
}

impl<'a> PnpProblem<'a> {
    pub fn new(forward: &'a ForwardModel, denoiser: &'a KernelDenoiser, y: &'a [f64]) -> Result<Self> {
        check_len(forward.output_len(), y.len())?;
        if forward.input_shape() != denoiser.shape() {
            return Err(Error::shape(
                format!("{:?}", forward.input_shape()),
                format!("{:?}", denoiser.shape()),
            ));
        }
        Ok(Self {
            forward,
            denoiser,
            y,
            work: WorkCounter::new(),
        })
    }

    pub fn work(&self) -> WorkCount {
        self.work.snapshot()
    }

    fn apply_w(&self, v: &[f64]) -> Vec<f64> {
        self.work.denoiser();
        self.denoiser.apply_slice(v)
    }

    /// `∇f(x) = Fᵀ(Fx − y)`.
    fn data_gradient(&self, x: &[f64]) -> Vec<f64> {
        let fx = self.forward.forward_slice(x);
        self.work.forward();
        let r = sub(&fx, self.y);
        self.work.forward_adjoint();
        self.forward.adjoint_slice(&r)
    }
}

/// An iterate `x = W z` together with its preimage `z`, which is what the
/// objective is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpIterate {
    pub x: Vec<f64>,
    pub preimage: Vec<f64>,
}

/// `x⁺ = W(x − ρ⁻¹ D⁻¹ Fᵀ(Fx − y))`.
pub fn pnp_ista_step(problem: &PnpProblem<'_>, x: &[f64], rho: f64) -> Result<PnpIterate> {
    check_len(problem.denoiser.len(), x.len())?;
    let g = problem.data_gradient(x);
    let d = problem.denoiser.row_sums();
    let v: Vec<f64> = (0..x.len()).map(|i| x[i] - g[i] / (rho * d[i])).collect();
    Ok(PnpIterate {
        x: problem.apply_w(&v),
        preimage: v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaState {
    pub x: Vec<f64>,
    pub previous: Vec<f64>,
    /// Momentum sequence value; starts at 1 so the first step is plain ISTA.
    pub t: f64,
    pub preimage: Vec<f64>,
}

impl FistaState {
    pub fn new(x: Vec<f64>) -> Self {
        Self {
            previous: x.clone(),
            preimage: x.clone(),
            x,
            t: 1.0,
        }
    }
}

/// ISTA step from the extrapolated point, `t⁺ = (1 + √(1 + 4t²))/2`.
pub fn pnp_fista_step(problem: &PnpProblem<'_>, state: &FistaState, rho: f64, momentum: bool) -> Result<FistaState> {
    let t_next = (1.0 + (1.0 + 4.0 * state.t * state.t).sqrt()) / 2.0;
    let beta = if momentum { (state.t - 1.0) / t_next } else { 0.0 };
    let point: Vec<f64> = state
        .x
        .iter()
        .zip(&state.previous)
        .map(|(a, b)| a + beta * (a - b))
        .collect();
    let step = pnp_ista_step(problem, &point, rho)?;
    Ok(FistaState {
        previous: state.x.clone(),
        x: step.x,
        t: t_next,
        preimage: step.preimage,
    })
}

/// `(FᵀF + ρD) x`, the ADMM x-update operator.
struct XUpdate<'p, 'a> {
    problem: &'p PnpProblem<'a>,
    rho: f64,
}

impl LinearOperator for XUpdate<'_, '_> {
    fn input_len(&self) -> usize {
        self.problem.denoiser.len()
    }

    fn output_len(&self) -> usize {
        self.problem.denoiser.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let p = self.problem;
        let fx = p.forward.forward_slice(x);
        p.work.forward();
        p.forward.apply_adjoint_into(&fx, out);
        p.work.forward_adjoint();
        for ((o, xi), d) in out.iter_mut().zip(x).zip(p.denoiser.row_sums()) {
            *o += self.rho * d * xi;
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn work(&self) -> Option<WorkCount> {
        Some(self.problem.work.snapshot())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    /// Denoised variable, always in the range of `W`.
    pub v: Vec<f64>,
    /// Scaled dual variable.
    pub u: Vec<f64>,
    pub preimage: Vec<f64>,
}

impl AdmmState {
    pub fn new(v: Vec<f64>) -> Self {
        let n = v.len();
        Self {
            x: v.clone(),
            preimage: v.clone(),
            v,
            u: vec![0.0; n],
        }
    }
}

/// One ADMM iteration in the `D`-weighted norm:
/// `(FᵀF + ρD)x = Fᵀy + ρD(v − u)`, `v = W(x + u)`, `u += x − v`.
/// `fty` is `Fᵀy`, computed once by the caller.
pub fn pnp_admm_step(
    problem: &PnpProblem<'_>,
    state: &AdmmState,
    fty: &[f64],
    rho: f64,
    inner: &SolverConfig,
    outer_iteration: usize,
) -> Result<AdmmState> {
    let d = problem.denoiser.row_sums();
    let rhs: Vec<f64> = (0..fty.len())
        .map(|i| fty[i] + rho * d[i] * (state.v[i] - state.u[i]))
        .collect();
    let op = XUpdate { problem, rho };
    let cfg = SolverConfig {
        initial_guess: InitialGuess::Provided(state.x.clone()),
        ..inner.clone()
    };
    let x = solve(&op, &rhs, &cfg, None)
        .map_err(|e| e.in_stage(format!("admm x-update (outer iteration {outer_iteration})")))?
        .x;
    let pre: Vec<f64> = x.iter().zip(&state.u).map(|(a, b)| a + b).collect();
    let v = problem.apply_w(&pre);
    let u: Vec<f64> = (0..x.len()).map(|i| state.u[i] + x[i] - v[i]).collect();
    Ok(AdmmState { x, v, u, preimage: pre })
}

#[derive(Debug, Clone)]
pub struct PnpOutcome {
    pub x: Vec<f64>,
    pub report: SolveReport,
    pub diverged: bool,
}

impl PnpOutcome {
    pub fn image_like(&self, like: &Image) -> Result<Image> {
        Image::from_vec_like(like, self.x.clone())
    }
}

/// Runs a PnP method for `config.iterations` outer iterations, recording
/// the objective at the preimage of every iterate. The run stops with
/// `diverged = true` once the objective exceeds `DIVERGENCE_FACTOR` times
/// its first value or becomes non-finite.
pub fn pnp_run(problem: &PnpProblem<'_>, config: &PnpConfig, monitor: Option<&dyn Monitor>) -> Result<PnpOutcome> {
    config.validate()?;
    let n = problem.denoiser.len();
    let x0 = match &config.initialization {
        Some(v) => {
            check_len(n, v.len())?;
            v.clone()
        }
        None => vec![0.0; n],
    };
    let objective = Objective {
        forward: problem.forward,
        denoiser: problem.denoiser,
        rho: config.rho,
        y: problem.y,
    };
    let start = Instant::now();
    let start_work = problem.work();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut reference: Option<f64> = None;
    let mut diverged = false;
    let mut last_change = f64::INFINITY;

    enum State {
        Ista(Vec<f64>),
        Fista(FistaState),
        Admm(AdmmState, Vec<f64>),
    }
    let mut state = match config.algorithm {
        PnpAlgorithm::Ista => State::Ista(x0),
        PnpAlgorithm::Fista => State::Fista(FistaState::new(x0)),
        PnpAlgorithm::Admm => {
            problem.work.forward_adjoint();
            let fty = problem.forward.adjoint_slice(problem.y);
            State::Admm(AdmmState::new(x0), fty)
        }
    };
    let mut iterations = 0;

    for k in 1..=config.iterations {
        let (prev, next, pre) = match &mut state {
            State::Ista(x) => {
                let step = pnp_ista_step(problem, x, config.rho)?;
                let prev = std::mem::replace(x, step.x.clone());
                (prev, step.x, step.preimage)
            }
            State::Fista(s) => {
                let next = pnp_fista_step(problem, s, config.rho, config.momentum)?;
                let prev = s.x.clone();
                *s = next;
                (prev, s.x.clone(), s.preimage.clone())
            }
            State::Admm(s, fty) => {
                let next = pnp_admm_step(problem, s, fty, config.rho, &config.inner, k)?;
                let prev = s.v.clone();
                *s = next;
                (prev, s.v.clone(), s.preimage.clone())
            }
        };
        iterations = k;
        let change = norm(&sub(&next, &prev)) / norm(&next).max(f64::MIN_POSITIVE);
        last_change = change;
        let metrics = match monitor {
            Some(m) if all_finite(&pre) => m.observe(&pre),
            _ => Default::default(),
        };
        let value = match metrics.objective {
            Some(v) => v,
            None if all_finite(&pre) => objective.value_at(&pre, &next),
            None => f64::NAN,
        };
        let blown = !value.is_finite()
            || reference.is_some_and(|r: f64| value > DIVERGENCE_FACTOR * r.abs().max(f64::MIN_POSITIVE));
        records.push(IterationRecord {
            iteration: k,
            residual: change,
            objective: value.is_finite().then_some(value),
            psnr: metrics.psnr,
            seconds: start.elapsed().as_secs_f64(),
            operator_applications: (problem.work() - start_work).total(),
        });
        if reference.is_none() && value.is_finite() {
            reference = Some(value);
        }
        if blown {
            diverged = true;
            break;
        }
        if config.tolerance.is_some_and(|t| change <= t) {
            break;
        }
    }

    let x = match state {
        State::Ista(x) => x,
        State::Fista(s) => s.x,
        State::Admm(s, _) => s.v,
    };
    let converged = !diverged && config.tolerance.is_none_or(|t| last_change <= t);
    let report = SolveReport {
        method: config.algorithm.name().to_string(),
        records,
        iterations,
        converged,
        stop_reason: if diverged {
            StopReason::Stagnated
        } else if converged {
            StopReason::Converged
        } else {
            StopReason::MaxIterations
        },
        final_relative_residual: last_change,
        matvecs: iterations,
        operator_applications: (problem.work() - start_work).total(),
        work: Some(problem.work() - start_work),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(PnpOutcome { x, report, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::KernelConfig;
    use crate::forward::{gaussian_kernel, Boundary};
    use crate::system::{SystemForm, SystemOperator};
    use crate::vecops::max_abs_diff;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn denoiser(n: usize, seed: u64) -> KernelDenoiser {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let guide = Image::from_fn(n, n, |_, _| rng.random::<f64>());
        let cfg = KernelConfig {
            patch_radius: 1,
            search_radius: 2,
            intensity_bandwidth: 0.3,
            ..KernelConfig::default()
        };
        KernelDenoiser::build(&guide, cfg).unwrap()
    }

    /// A denoiser with `W = I`: every pair of guide values is far apart
    /// relative to the bandwidth, so off-diagonal weights underflow to zero.
    fn identity_denoiser(n: usize) -> KernelDenoiser {
        let guide = Image::from_fn(n, n, |r, c| (r * n + c) as f64);
        let cfg = KernelConfig {
            intensity_bandwidth: 0.01,
            search_radius: 1,
            ..KernelConfig::for_variant(crate::denoiser::KernelVariant::Yaroslavsky)
        };
        KernelDenoiser::build(&guide, cfg).unwrap()
    }

    fn oracle_solution(fwd: &ForwardModel, den: &KernelDenoiser, y: &[f64], rho: f64) -> Vec<f64> {
        let op = SystemOperator::new(SystemForm::CForm, fwd, den, rho).unwrap();
        let c = crate::operator::materialize(&op, 4096).unwrap();
        let d = op.rhs(y).unwrap();
        let z = c.lu().solve(&DVector::from_column_slice(&d)).unwrap();
        den.apply_slice(z.as_slice())
    }

    #[test]
    fn fixed_point_is_stationary() {
        let den = denoiser(8, 1);
        let fwd = ForwardModel::blur(8, 8, gaussian_kernel(3, 0.8), Boundary::Circular).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let rho = 2.0;
        let x_star = oracle_solution(&fwd, &den, &y, rho);
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let next = pnp_ista_step(&p, &x_star, rho).unwrap();
        assert!(max_abs_diff(&next.x, &x_star) < 1e-9);
        assert_eq!(p.work().total(), 3);
    }

    #[test]
    fn consistent_constant_is_unchanged() {
        let den = denoiser(6, 3);
        let fwd = ForwardModel::inpaint(6, 6, vec![true; 36]).unwrap();
        let x = vec![0.4; 36];
        let y = x.clone();
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let next = pnp_ista_step(&p, &x, 0.5).unwrap();
        assert!(max_abs_diff(&next.x, &x) < 1e-14);
    }

    #[test]
    fn fista_first_step_and_zero_momentum_match_ista() {
        let den = denoiser(6, 4);
        let fwd = ForwardModel::blur(6, 6, gaussian_kernel(3, 1.0), Boundary::Symmetric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..36).map(|_| rng.random::<f64>()).collect();
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let x0 = vec![0.0; 36];
        let s = FistaState::new(x0.clone());
        assert_eq!(s.t, 1.0);
        let f1 = pnp_fista_step(&p, &s, 1.0, true).unwrap();
        let i1 = pnp_ista_step(&p, &x0, 1.0).unwrap();
        assert_eq!(f1.x, i1.x);

        let ista = pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Ista, 1.0, 10), None)
            .unwrap()
            .x;
        let cfg = PnpConfig {
            momentum: false,
            ..PnpConfig::new(PnpAlgorithm::Fista, 1.0, 10)
        };
        let fista = pnp_run(&p, &cfg, None).unwrap().x;
        assert_eq!(ista, fista);
    }

    #[test]
    fn admm_with_identity_denoiser_reaches_least_squares() {
        let n = 6;
        let den = identity_denoiser(n);
        let fwd = ForwardModel::blur(n, n, gaussian_kernel(3, 0.5), Boundary::Circular).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let f = fwd.materialize(4096).unwrap();
        let ls = (f.transpose() * &f)
            .lu()
            .solve(&(f.transpose() * DVector::from_column_slice(&y)))
            .unwrap();
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let out = pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Admm, 0.05, 300), None).unwrap();
        let err = (DVector::from_column_slice(&out.x) - &ls).norm() / ls.norm();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn admm_full_mask_identity_denoiser_returns_y() {
        let den = identity_denoiser(5);
        let fwd = ForwardModel::inpaint(5, 5, vec![true; 25]).unwrap();
        let y: Vec<f64> = (0..25).map(|i| i as f64 / 25.0).collect();
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let out = pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Admm, 0.7, 60), None).unwrap();
        assert!(max_abs_diff(&out.x, &y) < 1e-8);
    }

    #[test]
    fn admm_started_at_oracle_stays_there() {
        let den = denoiser(8, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mask: Vec<bool> = (0..64).map(|_| rng.random::<f64>() < 0.6).collect();
        let fwd = ForwardModel::inpaint(8, 8, mask).unwrap();
        let y: Vec<f64> = (0..fwd.output_len()).map(|_| rng.random::<f64>()).collect();
        let rho = 0.2;
        let x_star = oracle_solution(&fwd, &den, &y, rho);
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        // At the fixed point the scaled dual is u = ρ⁻¹D⁻¹Fᵀ(y − Fx).
        let g = p.data_gradient(&x_star);
        let d = den.row_sums();
        let u: Vec<f64> = (0..64).map(|i| -g[i] / (rho * d[i])).collect();
        let mut state = AdmmState {
            x: x_star.clone(),
            v: x_star.clone(),
            u,
            preimage: x_star.clone(),
        };
        let fty = fwd.adjoint_slice(&y);
        for k in 1..=10 {
            state = pnp_admm_step(
                &p,
                &state,
                &fty,
                rho,
                &PnpConfig::new(PnpAlgorithm::Admm, rho, 1).inner,
                k,
            )
            .unwrap();
            assert!(max_abs_diff(&state.x, &x_star) <= 1e-6, "{k}");
        }
    }

    #[test]
    fn methods_share_the_limit() {
        let den = denoiser(8, 9);
        let fwd = ForwardModel::blur(8, 8, gaussian_kernel(3, 1.0), Boundary::Circular).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        // Above the ISTA step bound ‖F‖²/(2 min D).
        let rho = fwd.norm_squared_bound() / den.min_row_sum();
        let x_star = oracle_solution(&fwd, &den, &y, rho);
        for alg in [PnpAlgorithm::Ista, PnpAlgorithm::Fista, PnpAlgorithm::Admm] {
            let p = PnpProblem::new(&fwd, &den, &y).unwrap();
            let out = pnp_run(&p, &PnpConfig::new(alg, rho, 2000), None).unwrap();
            assert!(!out.diverged);
            assert!(max_abs_diff(&out.x, &x_star) < 1e-6, "{alg:?}");
        }
    }

    #[test]
    fn small_rho_ista_diverges_with_flag() {
        let den = denoiser(8, 11);
        let fwd = ForwardModel::blur(8, 8, gaussian_kernel(3, 0.5), Boundary::Circular).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        let out = pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Ista, 1e-3, 500), None).unwrap();
        assert!(out.diverged);
        assert!(out.report.iterations < 500);
    }

    #[test]
    fn validation() {
        let den = denoiser(4, 13);
        let fwd = ForwardModel::inpaint(4, 4, vec![true; 16]).unwrap();
        let y = vec![0.0; 16];
        let p = PnpProblem::new(&fwd, &den, &y).unwrap();
        assert!(pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Ista, 0.0, 5), None).is_err());
        assert!(pnp_run(&p, &PnpConfig::new(PnpAlgorithm::Ista, 1.0, 0), None).is_err());
        assert!(PnpProblem::new(&fwd, &den, &[0.0; 3]).is_err());
        assert!(pnp_ista_step(&p, &[0.0; 3], 1.0).is_err());
    }
}
