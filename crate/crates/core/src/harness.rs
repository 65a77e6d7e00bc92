//! Dense reference machinery for desk-scale instances (at most 4096
//! pixels): random instance generation, dense assembly of the systems
//! straight from materialized `F`, `W` and `D`, direct solves, and the
//! property suites run by `krs verify` and the acceptance tests.
//!
//! None of this is on the production path.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{KernelConfig, KernelDenoiser, KernelVariant, SpatialProfile};
use crate::error::{Error, Result};
use crate::forward::{add_noise, gaussian_kernel, Boundary, ForwardModel};
use crate::image::Image;
use crate::operator::DENSE_CAP;
use crate::oracle::{
    dense_svd, verify_subspace_facts, DenseSpectralForm, PropertyResult, VerifyReport, RANK_TOLERANCE,
};
use crate::pipeline::Application;
use crate::vecops::{dot, norm};

/// Largest side length of a generated instance.
pub const MAX_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOptions {
    /// Fraction of observed pixels for inpainting.
    pub mask_density: f64,
    pub sigma: f64,
    pub rho: f64,
    pub kernel: KernelConfig,
    pub superres_factor: usize,
    pub blur_size: usize,
    pub blur_std: f64,
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            mask_density: 0.2,
            sigma: 0.02,
            rho: 0.05,
            kernel: KernelConfig {
                patch_radius: 1,
                search_radius: 2,
                intensity_bandwidth: 0.2,
                ..KernelConfig::default()
            },
            superres_factor: 2,
            blur_size: 5,
            blur_std: 1.0,
        }
    }
}

/// A small, fully materializable restoration problem.
#[derive(Debug, Clone)]
pub struct DeskInstance {
    pub kind: Application,
    pub truth: Image,
    pub forward: ForwardModel,
    pub kernel: KernelConfig,
    /// Guide for the denoiser: the ground truth plus mild noise.
    pub guide: Image,
    pub sigma: f64,
    pub rho: f64,
    pub seed: u64,
    pub y: Vec<f64>,
}

impl DeskInstance {
    pub fn denoiser(&self) -> Result<KernelDenoiser> {
        KernelDenoiser::build(&self.guide, self.kernel)
    }
}

/// Uniform noise smoothed by three 3×3 box passes and rescaled to
/// `[0.1, 0.9]`, so it has a decaying spectrum like natural images.
pub fn smoothed_noise(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::from_fn(height, width, |_, _| rng.random::<f64>());
    for _ in 0..3 {
        img = Image::from_fn(height, width, |r, c| {
            let mut acc = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let rr = crate::denoiser::reflect(r as isize + dr, height);
                    let cc = crate::denoiser::reflect(c as isize + dc, width);
                    acc += img.get(rr, cc);
                }
            }
            acc / 9.0
        });
    }
    let (lo, hi) = (img.min(), img.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::from_fn(height, width, |r, c| 0.1 + 0.8 * (img.get(r, c) - lo) / span)
}

pub fn generate_instance(kind: Application, size: usize, seed: u64) -> Result<DeskInstance> {
    generate_instance_with(kind, size, seed, &InstanceOptions::default())
}

pub fn generate_instance_with(
    kind: Application,
    size: usize,
    seed: u64,
    opts: &InstanceOptions,
) -> Result<DeskInstance> {
    if size > MAX_SIDE {
        return Err(Error::TooLarge {
            n: size * size,
            cap: MAX_SIDE * MAX_SIDE,
        });
    }
    if size == 0 {
        return Err(Error::Input("instance size must be positive".into()));
    }
    let truth = smoothed_noise(size, size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let forward = match kind {
        Application::Deblur => ForwardModel::blur(
            size,
            size,
            gaussian_kernel(opts.blur_size, opts.blur_std),
            Boundary::Circular,
        )?,
        Application::Superres => ForwardModel::superres(
            size,
            size,
            gaussian_kernel(opts.blur_size, opts.blur_std),
            Boundary::Circular,
            opts.superres_factor,
            0,
        )?,
        Application::Inpaint => {
            let mut mask: Vec<bool> = (0..size * size)
                .map(|_| rng.random::<f64>() < opts.mask_density)
                .collect();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            ForwardModel::inpaint(size, size, mask)?
        }
    };
    let clean = forward.apply_forward(&truth)?;
    let y = add_noise(&clean, opts.sigma, seed.wrapping_add(1))?;
    let guide_data = add_noise(truth.data(), 0.03, seed.wrapping_add(2))?;
    let guide = Image::new(size, size, guide_data)?;
    Ok(DeskInstance {
        kind,
        truth,
        forward,
        kernel: opts.kernel,
        guide,
        sigma: opts.sigma,
        rho: opts.rho,
        seed,
        y,
    })
}

/// A denoiser of exact rank `levels`: the guide takes `levels` well
/// separated values and the box window covers the whole image, so `K` is a
/// Gaussian Gram matrix over `levels` distinct features.
pub fn rank_deficient_denoiser(side: usize, levels: usize, seed: u64) -> Result<KernelDenoiser> {
    let levels = levels.clamp(1, side * side);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..levels)
        .map(|k| 0.1 + 0.8 * k as f64 / (levels.max(2) - 1) as f64)
        .collect();
    let mut labels: Vec<usize> = (0..side * side).map(|i| i % levels).collect();
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let guide = Image::new(side, side, labels.iter().map(|&l| values[l]).collect())?;
    KernelDenoiser::build(
        &guide,
        KernelConfig {
            variant: KernelVariant::Yaroslavsky,
            patch_radius: 0,
            search_radius: side,
            intensity_bandwidth: 0.15,
            spatial_profile: SpatialProfile::Box,
            spatial_bandwidth: 1.0,
        },
    )
}

/// A random full-rank configuration for the given variant.
pub fn random_kernel_config(variant: KernelVariant, rng: &mut ChaCha8Rng) -> KernelConfig {
    let base = KernelConfig::for_variant(variant);
    KernelConfig {
        patch_radius: if variant.uses_patches() { 1 } else { base.patch_radius },
        search_radius: rng.random_range(2..=3),
        intensity_bandwidth: rng.random_range(0.1..0.5),
        spatial_bandwidth: rng.random_range(1.5..3.0),
        ..base
    }
}

/// Dense `A`, `b`, `C`, `d` assembled from materialized `F`, `W`, `D`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub f: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub rhs_c: DVector<f64>,
}

pub fn dense_system_from(f: DMatrix<f64>, w: DMatrix<f64>, d: DVector<f64>, rho: f64, y: &[f64]) -> DenseSystem {
    let n = w.nrows();
    let yv = DVector::from_column_slice(y);
    let ftf = f.transpose() * &f;
    let mut reg = DMatrix::<f64>::identity(n, n) - &w;
    for i in 0..n {
        reg.row_mut(i).scale_mut(d[i]);
    }
    let c = &ftf * &w + reg * rho;
    let a = w.transpose() * &c;
    let rhs_c = f.transpose() * yv;
    let b = w.transpose() * &rhs_c;
    DenseSystem {
        f,
        w,
        d,
        a,
        b,
        c,
        rhs_c,
    }
}

pub fn dense_system(forward: &ForwardModel, denoiser: &KernelDenoiser, rho: f64, y: &[f64]) -> Result<DenseSystem> {
    let f = forward.materialize(DENSE_CAP)?;
    let dd = denoiser.materialize(DENSE_CAP)?;
    Ok(dense_system_from(f, dd.w, dd.d, rho, y))
}

/// `A⁺ b` by SVD, discarding singular values at or below
/// `RANK_TOLERANCE × σ_max`.
pub fn pseudo_inverse_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = dense_svd(a)?;
    let smax = svd.singular_values.max();
    svd.solve(b, RANK_TOLERANCE * smax)
        .map_err(|e| Error::Numerical(format!("pseudoinverse solve failed: {e}")))
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub z: Vec<f64>,
    /// `x* = W z`.
    pub x: Vec<f64>,
    /// `‖A z − b‖ / ‖b‖`.
    pub stationarity: f64,
}

/// Solves the dense A-form system. Up to 1024 unknowns the pseudoinverse is
/// used; larger systems go through Cholesky (valid whenever `A` is
/// nonsingular) and fall back to the pseudoinverse.
pub fn dense_solve_system(system: &DenseSystem) -> Result<DenseSolution> {
    let n = system.a.nrows();
    let z = if n <= 1024 {
        pseudo_inverse_solve(&system.a, &system.b)?
    } else {
        let sym = (&system.a + system.a.transpose()) * 0.5;
        match sym.cholesky() {
            Some(ch) => ch.solve(&system.b),
            None => pseudo_inverse_solve(&system.a, &system.b)?,
        }
    };
    let bn = system.b.norm();
    let stationarity = (&system.a * &z - &system.b).norm() / if bn > 0.0 { bn } else { 1.0 };
    let x = &system.w * &z;
    Ok(DenseSolution {
        z: z.as_slice().to_vec(),
        x: x.as_slice().to_vec(),
        stationarity,
    })
}

pub fn dense_solve(instance: &DeskInstance) -> Result<DenseSolution> {
    let den = instance.denoiser()?;
    let system = dense_system(&instance.forward, &den, instance.rho, &instance.y)?;
    dense_solve_system(&system)
}

/// Deliberate defects used to check that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Use `K` in place of `W = D⁻¹K`.
    UnnormalizedW,
}

impl Fault {
    pub fn name(self) -> &'static str {
        match self {
            Fault::None => "none",
            Fault::UnnormalizedW => "unnormalized-w",
        }
    }
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fault::None),
            "unnormalized-w" => Ok(Fault::UnnormalizedW),
            _ => Err(Error::Config(format!("unknown fault `{s}`"))),
        }
    }
}

/// The denoiser as seen by the suites, possibly with a fault injected.
struct Subject<'a> {
    den: &'a KernelDenoiser,
    fault: Fault,
}

impl Subject<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        match self.fault {
            Fault::None => self.den.apply_into(x, &mut out),
            Fault::UnnormalizedW => self.den.apply_kernel_into(x, &mut out),
        }
        out
    }

    fn apply_adjoint(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        match self.fault {
            Fault::None => self.den.apply_adjoint_into(x, &mut out),
            Fault::UnnormalizedW => self.den.apply_kernel_into(x, &mut out),
        }
        out
    }

    fn spectral(&self) -> Result<DenseSpectralForm> {
        let dense = self.den.materialize(DENSE_CAP)?;
        let w = match self.fault {
            Fault::None => dense.w,
            Fault::UnnormalizedW => dense.k,
        };
        crate::oracle::spectral_decompose(&w, &dense.d)
    }
}

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn guide_for(side: usize, seed: u64) -> Image {
    let base = smoothed_noise(side, side, seed);
    let noisy = add_noise(base.data(), 0.05, seed.wrapping_add(7)).expect("valid sigma");
    Image::new(side, side, noisy).expect("finite guide")
}

/// The scaled prox of `Φ_W`, computed by brute force, equals `W x`.
pub fn prox_suite(instances: usize, points: usize, side: usize, seed: u64, fault: Fault) -> PropertyResult {
    let mut result = PropertyResult::new("prox-equals-denoiser", 1e-8);
    for i in 0..instances {
        let iseed = seed.wrapping_add(1000 * i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iseed);
        let variant = KernelVariant::all()[i % 4];
        let cfg = random_kernel_config(variant, &mut rng);
        let tag = |extra: String| format!("instance={i} seed={iseed} variant={} {extra}", variant.name());
        let den = match KernelDenoiser::build(&guide_for(side, iseed), cfg) {
            Ok(d) => d,
            Err(e) => {
                result.record(f64::INFINITY, || tag(format!("build failed: {e}")));
                continue;
            }
        };
        let subject = Subject { den: &den, fault };
        let form = match subject.spectral() {
            Ok(f) => f,
            Err(e) => {
                result.record(f64::INFINITY, || tag(format!("spectral form failed: {e}")));
                continue;
            }
        };
        for p in 0..points {
            let x = uniform(side * side, &mut rng);
            let violation = match form.scaled_prox(&x) {
                Ok(prox) => {
                    let wx = subject.apply(&x);
                    prox.iter().zip(&wx).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                }
                Err(_) => f64::INFINITY,
            };
            result.record(violation, || tag(format!("point={p}")));
        }
    }
    result
}

/// Nonnegativity and midpoint convexity of `Φ_W` on `range(W)`, and `+∞`
/// off the range.
pub fn regularizer_suite(points: usize, side: usize, seed: u64, fault: Fault) -> Vec<PropertyResult> {
    let mut nonneg = PropertyResult::new("regularizer-nonnegative", 1e-10);
    let mut convex = PropertyResult::new("regularizer-midpoint-convex", 1e-10);
    let mut off = PropertyResult::new("regularizer-infinite-off-range", 0.5);
    if points == 0 {
        return vec![nonneg, convex, off];
    }
    let instances = 10usize.min(points);
    let per = points.div_ceil(instances);
    let n = side * side;
    for i in 0..instances {
        let iseed = seed.wrapping_add(77 * i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iseed);
        let den = if i % 2 == 0 {
            let cfg = random_kernel_config(KernelVariant::all()[(i / 2) % 4], &mut rng);
            KernelDenoiser::build(&guide_for(side, iseed), cfg)
        } else {
            rank_deficient_denoiser(side, 2 + i % 3, iseed)
        };
        let Ok(den) = den else {
            nonneg.record(f64::INFINITY, || format!("instance={i} build failed"));
            continue;
        };
        let subject = Subject { den: &den, fault };
        let form = match subject.spectral() {
            Ok(f) => f,
            Err(e) => {
                let msg = format!("instance={i} seed={iseed} spectral form failed: {e}");
                nonneg.record(f64::INFINITY, || msg.clone());
                convex.record(f64::INFINITY, || msg.clone());
                off.record(f64::INFINITY, || msg);
                continue;
            }
        };
        // Complement of range(W): the trailing columns of M.
        let complement = form.m.columns(form.rank, n - form.rank).into_owned();
        for p in 0..per {
            let tag = || format!("instance={i} seed={iseed} point={p}");
            let a = subject.apply(&uniform(n, &mut rng));
            let b = subject.apply(&uniform(n, &mut rng));
            let (pa, pb) = (form.phi(&a), form.phi(&b));
            nonneg.record((-pa).max(0.0), tag);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
            let avg = 0.5 * (pa + pb);
            convex.record((form.phi(&mid) - avg).max(0.0) / avg.abs().max(1.0), tag);

            // Off-range points need a proper complement; full-rank
            // instances contribute the rank-deficient ones' share.
            if complement.ncols() > 0 {
                let t = DVector::from_fn(complement.ncols(), |_, _| rng.random::<f64>() + 0.5);
                let mut x = DVector::from_column_slice(&a) + &complement * t;
                if x.norm() == 0.0 {
                    x[0] = 1.0;
                }
                let v = if form.phi(x.as_slice()).is_infinite() { 0.0 } else { 1.0 };
                off.record(v, tag);
            }
        }
    }
    vec![nonneg, convex, off]
}

/// First-order optimality residual of `½‖y − Fx‖² + ρΦ_W(x)` restricted to
/// `range(W)`, relative to the data term's gradient at zero.
fn stationarity_on_range(form: &DenseSpectralForm, f: &DMatrix<f64>, y: &[f64], rho: f64, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let p = form.regularizer_matrix();
    let sym = (p + p.transpose()) * 0.5;
    let grad = f.transpose() * (f * &xv - &yv) + sym * &xv * rho;
    let u = form.u();
    let scale = (u.transpose() * (f.transpose() * &yv)).norm().max(f64::MIN_POSITIVE);
    (u.transpose() * grad).norm() / scale
}

/// `b` lies in `range(A)` and `x* = W A⁺b` is stationary for the objective,
/// including on instances whose `W` is rank deficient.
pub fn consistency_suite(instances: usize, side: usize, seed: u64) -> Vec<PropertyResult> {
    let mut consistent = PropertyResult::new("rhs-in-range-of-a", 1e-8);
    let mut stationary = PropertyResult::new("solution-stationary", 1e-7);
    for i in 0..instances {
        let iseed = seed.wrapping_add(31 * i as u64);
        let kind = Application::all()[i % 3];
        let tag = |what: &str| format!("{what} instance={i} seed={iseed} kind={}", kind.name());
        let run = || -> Result<(f64, f64)> {
            let inst = generate_instance(kind, side, iseed)?;
            let den = if i % 2 == 1 {
                rank_deficient_denoiser(side, 2 + i % 4, iseed)?
            } else {
                inst.denoiser()?
            };
            let form = DenseSpectralForm::from_denoiser(&den, DENSE_CAP)?;
            let sys = dense_system(&inst.forward, &den, inst.rho, &inst.y)?;
            let z = pseudo_inverse_solve(&sys.a, &sys.b)?;
            let proj = &sys.a * &z;
            let consistency = (&sys.b - proj).norm() / sys.b.norm().max(f64::MIN_POSITIVE);
            let x = &sys.w * &z;
            let st = stationarity_on_range(&form, &sys.f, &inst.y, inst.rho, x.as_slice());
            Ok((consistency, st))
        };
        match run() {
            Ok((c, s)) => {
                consistent.record(c, || tag("b outside range(A)"));
                stationary.record(s, || tag("not stationary"));
            }
            Err(e) => {
                consistent.record(f64::INFINITY, || tag(&format!("failed: {e}")));
                stationary.record(f64::INFINITY, || tag(&format!("failed: {e}")));
            }
        }
    }
    vec![consistent, stationary]
}

/// With a hat profile and `F e ≠ 0`, `A` is nonsingular (reported as
/// `1e-10 / σ_min`, passing below 1); with `F = 0` it is singular
/// (reported as `σ_min / σ_max`).
pub fn nonsingularity_suite(instances: usize, side: usize, seed: u64) -> Vec<PropertyResult> {
    let mut nonsingular = PropertyResult::new("a-nonsingular-when-fe-nonzero", 1.0);
    let mut singular = PropertyResult::new("a-singular-when-f-zero", 1e-10);
    for i in 0..instances {
        let iseed = seed.wrapping_add(53 * i as u64);
        let kind = Application::all()[i % 3];
        let run = || -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(iseed);
            let kernel = random_kernel_config(KernelVariant::all()[i % 4], &mut rng);
            let opts = InstanceOptions {
                kernel: KernelConfig { spatial_profile: SpatialProfile::Hat, ..kernel },
                ..Default::default()
            };
            let inst = generate_instance_with(kind, side, iseed, &opts)?;
            let den = inst.denoiser()?;
            let sys = dense_system(&inst.forward, &den, inst.rho, &inst.y)?;
            let sv = dense_svd(&sys.a)?.singular_values;
            let smin = sv.min();
            let zero_f = DMatrix::zeros(sys.f.nrows(), sys.f.ncols());
            let bad = dense_system_from(zero_f, sys.w.clone(), sys.d.clone(), inst.rho, &inst.y);
            let bsv = dense_svd(&bad.a)?.singular_values;
            Ok((smin, bsv.min() / bsv.max()))
        };
        let tag = |what: String| format!("{what} instance={i} seed={iseed} kind={}", kind.name());
        match run() {
            Ok((smin, ratio)) => {
                nonsingular.record(1e-10 / smin, || tag(format!("sigma_min={smin:.3e}")));
                singular.record(ratio, || tag(format!("F = 0 gave sigma_min/sigma_max={ratio:.3e}")));
            }
            Err(e) => {
                nonsingular.record(f64::INFINITY, || tag(format!("failed: {e}")));
                singular.record(f64::INFINITY, || tag(format!("failed: {e}")));
            }
        }
    }
    vec![nonsingular, singular]
}

/// `⟨Fx, y⟩ = ⟨x, Fᵀy⟩` for every forward model and `⟨Wa, b⟩ = ⟨a, Wᵀb⟩`,
/// relative to the product of norms.
pub fn adjointness_suite(pairs: usize, side: usize, seed: u64, fault: Fault) -> Vec<PropertyResult> {
    let mut fwd_result = PropertyResult::new("forward-adjoint", 1e-10);
    let mut den_result = PropertyResult::new("denoiser-adjoint", 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask: Vec<bool> = (0..side * side).map(|_| rng.random::<f64>() < 0.3).collect();
    let models = [
        ForwardModel::blur(side, side, gaussian_kernel(5, 1.2), Boundary::Circular),
        ForwardModel::blur(side, side, gaussian_kernel(3, 0.8), Boundary::Symmetric),
        ForwardModel::superres(side, side, gaussian_kernel(5, 1.0), Boundary::Circular, 2, 0),
        ForwardModel::superres(side, side, gaussian_kernel(3, 1.0), Boundary::Symmetric, 3, 1),
        ForwardModel::inpaint(side, side, mask),
    ];
    for (m, model) in models.into_iter().enumerate() {
        let Ok(model) = model else {
            fwd_result.record(f64::INFINITY, || format!("model={m} could not be built"));
            continue;
        };
        for p in 0..pairs {
            let x: Vec<f64> = (0..model.input_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..model.output_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let fx = model.forward_slice(&x);
            let fty = model.adjoint_slice(&y);
            let scale = (norm(&fx) * norm(&y)).max(norm(&x) * norm(&fty)).max(f64::MIN_POSITIVE);
            let v = (dot(&fx, &y) - dot(&x, &fty)).abs() / scale;
            fwd_result.record(v, || format!("model={} index={m} pair={p}", model.name()));
        }
    }
    for (k, variant) in KernelVariant::all().into_iter().enumerate() {
        let iseed = seed.wrapping_add(k as u64 + 1);
        let cfg = random_kernel_config(variant, &mut rng);
        let Ok(den) = KernelDenoiser::build(&guide_for(side, iseed), cfg) else {
            den_result.record(f64::INFINITY, || format!("variant={} build failed", variant.name()));
            continue;
        };
        let subject = Subject { den: &den, fault };
        for p in 0..pairs.div_ceil(4) {
            let a: Vec<f64> = (0..den.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let b: Vec<f64> = (0..den.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let wa = subject.apply(&a);
            let wtb = subject.apply_adjoint(&b);
            let scale = (norm(&wa) * norm(&b)).max(norm(&a) * norm(&wtb)).max(f64::MIN_POSITIVE);
            let v = (dot(&wa, &b) - dot(&a, &wtb)).abs() / scale;
            den_result.record(v, || format!("variant={} pair={p}", variant.name()));
        }
    }
    vec![fwd_result, den_result]
}

/// `W e = e` for every variant.
pub fn row_stochastic_suite(instances: usize, side: usize, seed: u64, fault: Fault) -> PropertyResult {
    let mut result = PropertyResult::new("denoiser-row-stochastic", 1e-10);
    for i in 0..instances {
        let iseed = seed.wrapping_add(13 * i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iseed);
        let variant = KernelVariant::all()[i % 4];
        let cfg = random_kernel_config(variant, &mut rng);
        let Ok(den) = KernelDenoiser::build(&guide_for(side, iseed), cfg) else {
            result.record(f64::INFINITY, || format!("instance={i} build failed"));
            continue;
        };
        let we = Subject { den: &den, fault }.apply(&vec![1.0; den.len()]);
        let v = we.iter().fold(0.0f64, |m, x| m.max((x - 1.0).abs()));
        result.record(v, || {
            format!("instance={i} seed={iseed} variant={} max|We-e|={v:.3e}", variant.name())
        });
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Randomized instances per suite; zero runs nothing.
    pub trials: usize,
    /// Largest number of pixels (and subspace-check matrix size) used.
    pub max_n: usize,
    pub seed: u64,
    pub fault: Fault,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 25,
            max_n: 64,
            seed: 0,
            fault: Fault::None,
        }
    }
}

/// Runs every property suite.
pub fn verify_all(opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    if opts.trials == 0 {
        return report;
    }
    let side = ((opts.max_n as f64).sqrt().floor() as usize).clamp(3, MAX_SIDE);
    let t = opts.trials;
    let s = opts.seed;
    report.results.push(row_stochastic_suite(t, side, s, opts.fault));
    report.results.extend(adjointness_suite(4 * t, side, s, opts.fault));
    report.results.push(prox_suite(t, 2 * t, side, s, opts.fault));
    report.results.extend(regularizer_suite(40 * t, side, s, opts.fault));
    report.results.extend(consistency_suite(t, side, s));
    report.results.extend(nonsingularity_suite(t, side, s));
    report.extend(verify_subspace_facts(8 * t, opts.max_n.clamp(3, 16), s));
    report
}
