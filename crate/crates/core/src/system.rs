//! Matrix-free assembly of the restoration systems
//!
//! * A-form: `A = WᵀFᵀF W + ρ WᵀD(I − W)`, `b = WᵀFᵀy` (symmetric PSD)
//! * C-form: `C = FᵀF W + ρ D(I − W)`, `d = Fᵀy` (no `Wᵀ`, not symmetric)
//!
//! Any solution `z` yields the restored image `x = W z`.

use crate::denoiser::KernelDenoiser;
use crate::error::{check_len, Error, Result};
use crate::forward::ForwardModel;
use crate::image::Image;
use crate::metrics::psnr;
use crate::operator::{LinearOperator, WorkCount, WorkCounter};
use crate::oracle::DenseSpectralForm;
use crate::vecops::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SystemForm {
    /// `A z = b`, symmetric.
    AForm,
    /// `C z = d`, one denoiser application per product.
    #[default]
    CForm,
}

impl SystemForm {
    pub fn name(self) -> &'static str {
        match self {
            SystemForm::AForm => "a-form",
            SystemForm::CForm => "c-form",
        }
    }
}

impl std::str::FromStr for SystemForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a-form" | "a" => Ok(SystemForm::AForm),
            "c-form" | "c" => Ok(SystemForm::CForm),
            _ => Err(Error::Config(format!("unknown system form `{s}`"))),
        }
    }
}

/// The system operator for a forward model, a denoiser and a penalty `ρ`.
pub struct SystemOperator<'a> {
    form: SystemForm,
    forward: &'a ForwardModel,
    denoiser: &'a KernelDenoiser,
    rho: f64,
    work: WorkCounter,
}

impl<'a> SystemOperator<'a> {
    pub fn new(form: SystemForm, forward: &'a ForwardModel, denoiser: &'a KernelDenoiser, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be nonnegative, got {rho}")));
        }
        if forward.input_shape() != denoiser.shape() {
            return Err(Error::shape(
                format!("{:?}", forward.input_shape()),
                format!("{:?}", denoiser.shape()),
            ));
        }
        Ok(Self {
            form,
            forward,
            denoiser,
            rho,
            work: WorkCounter::new(),
        })
    }

    pub fn form(&self) -> SystemForm {
        self.form
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn forward(&self) -> &ForwardModel {
        self.forward
    }

    pub fn denoiser(&self) -> &KernelDenoiser {
        self.denoiser
    }

    pub fn work_counter(&self) -> &WorkCounter {
        &self.work
    }

    /// Right-hand side: `d = Fᵀy` (C-form) or `b = WᵀFᵀy` (A-form).
    pub fn rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.forward.output_len(), y.len())?;
        let d = self.forward.adjoint_slice(y);
        self.work.forward_adjoint();
        Ok(match self.form {
            SystemForm::CForm => d,
            SystemForm::AForm => {
                self.work.denoiser_adjoint();
                self.denoiser.apply_adjoint_slice(&d)
            }
        })
    }

    pub fn apply_system(&self, z: &Image) -> Result<Image> {
        if z.shape() != self.forward.input_shape() {
            return Err(Error::shape(
                format!("{:?}", self.forward.input_shape()),
                format!("{:?}", z.shape()),
            ));
        }
        Image::from_vec_like(z, self.apply(z.data()))
    }

    /// Restored image `W z`.
    pub fn restored(&self, z: &[f64]) -> Vec<f64> {
        self.work.denoiser();
        self.denoiser.apply_slice(z)
    }
}

impl LinearOperator for SystemOperator<'_> {
    fn input_len(&self) -> usize {
        self.denoiser.len()
    }

    fn output_len(&self) -> usize {
        self.denoiser.len()
    }

    fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        let n = z.len();
        let mut wz = vec![0.0; n];
        self.denoiser.apply_into(z, &mut wz);
        self.work.denoiser();
        let fwz = self.forward.forward_slice(&wz);
        self.work.forward();
        let mut acc = vec![0.0; n];
        self.forward.apply_adjoint_into(&fwz, &mut acc);
        self.work.forward_adjoint();
        let d = self.denoiser.row_sums();
        for i in 0..n {
            acc[i] += self.rho * d[i] * (z[i] - wz[i]);
        }
        match self.form {
            SystemForm::CForm => out.copy_from_slice(&acc),
            SystemForm::AForm => {
                self.denoiser.apply_adjoint_into(&acc, out);
                self.work.denoiser_adjoint();
            }
        }
    }

    fn is_symmetric(&self) -> bool {
        self.form == SystemForm::AForm
    }

    fn work(&self) -> Option<WorkCount> {
        Some(self.work.snapshot())
    }
}

/// Objective of the restoration problem, evaluated matrix-free through the
/// `z`-parameterization
/// `θ(z) = ½‖y − F W z‖² + (ρ/2) zᵀ WᵀD(I − W) z`,
/// which equals the regularized objective at `x = W z` without needing `W†`.
pub struct Objective<'a> {
    pub forward: &'a ForwardModel,
    pub denoiser: &'a KernelDenoiser,
    pub rho: f64,
    pub y: &'a [f64],
}

impl Objective<'_> {
    /// Returns `(θ(z), W z)`. Applications made here are telemetry and are
    /// not counted as work.
    pub fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let x = self.denoiser.apply_slice(z);
        (self.value_at(z, &x), x)
    }

    /// `θ(z)` given a precomputed `x = W z`.
    pub fn value_at(&self, z: &[f64], x: &[f64]) -> f64 {
        let fx = self.forward.forward_slice(x);
        let data: f64 = fx.iter().zip(self.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5;
        let d = self.denoiser.row_sums();
        let reg: f64 = (0..x.len()).map(|i| x[i] * d[i] * (z[i] - x[i])).sum();
        data + 0.5 * self.rho * reg
    }

    /// `∇θ(z) = A z − b`.
    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let op = SystemOperator {
            form: SystemForm::AForm,
            forward: self.forward,
            denoiser: self.denoiser,
            rho: self.rho,
            work: WorkCounter::new(),
        };
        let az = op.apply(z);
        let b = op.rhs(self.y).expect("measurement length checked by caller");
        az.iter().zip(&b).map(|(a, b)| a - b).collect()
    }
}

/// Dense objective `½‖y − Fx‖² + (ρ/2) xᵀD(I − W)W†x` using an explicit
/// generalized inverse. Only for instances small enough to decompose.
pub fn objective_dense(forward: &ForwardModel, form: &DenseSpectralForm, rho: f64, y: &[f64], x: &[f64]) -> f64 {
    let fx = forward.forward_slice(x);
    let data: f64 = fx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5;
    let px = form.regularizer_matrix() * nalgebra::DVector::from_column_slice(x);
    data + 0.5 * rho * dot(x, px.as_slice())
}

/// Metrics reported for an iterate during a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IterateMetrics {
    pub objective: Option<f64>,
    pub psnr: Option<f64>,
}

/// Observes solver iterates for telemetry.
pub trait Monitor: Sync {
    /// `z` is the system unknown; the restored image is `W z`.
    fn observe(&self, z: &[f64]) -> IterateMetrics;
}

/// Reports the objective and, when ground truth is known, the PSNR of `W z`.
pub struct SystemMonitor<'a> {
    pub objective: Objective<'a>,
    pub truth: Option<&'a Image>,
}

impl Monitor for SystemMonitor<'_> {
    fn observe(&self, z: &[f64]) -> IterateMetrics {
        let (value, x) = self.objective.eval(z);
        let psnr = self
            .truth
            .and_then(|t| Image::from_vec_like(t, x).ok().and_then(|img| psnr(t, &img).ok()));
        IterateMetrics {
            objective: Some(value),
            psnr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::KernelConfig;
    use crate::forward::{gaussian_kernel, Boundary};
    use crate::operator::materialize;
    use crate::vecops::{max_abs_diff, norm};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    fn setup(seed: u64) -> (ForwardModel, KernelDenoiser) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let guide = Image::from_fn(10, 10, |_, _| rng.random::<f64>());
        let mask = (0..100).map(|_| rng.random::<f64>() < 0.4).collect();
        let fwd = ForwardModel::inpaint(10, 10, mask).unwrap();
        let cfg = KernelConfig {
            patch_radius: 1,
            search_radius: 2,
            intensity_bandwidth: 0.3,
            ..KernelConfig::default()
        };
        (fwd, KernelDenoiser::build(&guide, cfg).unwrap())
    }

    #[test]
    fn c_form_annihilates_regularizer_on_ones() {
        let (fwd, den) = setup(1);
        let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.7).unwrap();
        let ones = vec![1.0; 100];
        let ce = op.apply(&ones);
        let ftfe = fwd.adjoint_slice(&fwd.forward_slice(&ones));
        assert!(max_abs_diff(&ce, &ftfe) < 1e-12);
    }

    #[test]
    fn linear_in_rho() {
        let (fwd, den) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = rvec(100, &mut rng);
        let c1 = SystemOperator::new(SystemForm::CForm, &fwd, &den, 1.0)
            .unwrap()
            .apply(&z);
        let c0 = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.0)
            .unwrap()
            .apply(&z);
        let wz = den.apply_slice(&z);
        for i in 0..100 {
            let want = den.row_sums()[i] * (z[i] - wz[i]);
            assert!((c1[i] - c0[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_materialization() {
        let (fwd, den) = setup(4);
        let dd = den.materialize(4096).unwrap();
        let f = fwd.materialize(4096).unwrap();
        let dm = dd.d_matrix();
        let rho = 0.3;
        let i = DMatrix::identity(100, 100);
        let c_dense = f.transpose() * &f * &dd.w + rho * &dm * (&i - &dd.w);
        let a_dense = dd.w.transpose() * &c_dense;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = rvec(100, &mut rng);
        let zv = DVector::from_column_slice(&z);
        let c_op = SystemOperator::new(SystemForm::CForm, &fwd, &den, rho).unwrap();
        let a_op = SystemOperator::new(SystemForm::AForm, &fwd, &den, rho).unwrap();
        assert!(max_abs_diff((&c_dense * &zv).as_slice(), &c_op.apply(&z)) < 1e-10);
        assert!(max_abs_diff((&a_dense * &zv).as_slice(), &a_op.apply(&z)) < 1e-10);

        let y = rvec(fwd.output_len(), &mut rng);
        let d = c_op.rhs(&y).unwrap();
        let b = a_op.rhs(&y).unwrap();
        let b_dense = dd.w.transpose() * f.transpose() * DVector::from_column_slice(&y);
        assert!(max_abs_diff(b_dense.as_slice(), &b) < 1e-12);
        assert!(max_abs_diff(&den.apply_adjoint_slice(&d), &b) < 1e-14);
    }

    #[test]
    fn linearity_and_a_form_symmetry() {
        let (fwd, den) = setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for form in [SystemForm::AForm, SystemForm::CForm] {
            let op = SystemOperator::new(form, &fwd, &den, 0.05).unwrap();
            for _ in 0..10 {
                let (x, y) = (rvec(100, &mut rng), rvec(100, &mut rng));
                let (a, b) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let lhs = op.apply(&combo);
                let (ox, oy) = (op.apply(&x), op.apply(&y));
                let rhs: Vec<f64> = ox.iter().zip(&oy).map(|(p, q)| a * p + b * q).collect();
                assert!(max_abs_diff(&lhs, &rhs) <= 1e-10 * norm(&rhs).max(1.0));
                if form == SystemForm::AForm {
                    let l = dot(&op.apply(&x), &y);
                    let r = dot(&x, &op.apply(&y));
                    assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()));
                }
            }
        }
    }

    #[test]
    fn rhs_cases() {
        let (fwd, den) = setup(8);
        let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
        assert!(op.rhs(&vec![0.0; fwd.output_len()]).unwrap().iter().all(|&v| v == 0.0));
        let x = Image::from_fn(10, 10, |r, c| (r * 10 + c) as f64 / 100.0);
        let y = fwd.apply_forward(&x).unwrap();
        let d = op.rhs(&y).unwrap();
        let mask = match fwd.kind() {
            crate::forward::ForwardKind::Inpaint { mask } => mask.clone(),
            _ => unreachable!(),
        };
        for i in 0..100 {
            assert_eq!(d[i], if mask[i] { x.data()[i] } else { 0.0 });
        }
        assert!(op.rhs(&[0.0; 3]).is_err());
    }

    #[test]
    fn work_counts_per_product() {
        let (fwd, den) = setup(9);
        let c = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
        c.apply(&vec![0.0; 100]);
        assert_eq!(c.work_counter().total(), 3);
        let a = SystemOperator::new(SystemForm::AForm, &fwd, &den, 0.05).unwrap();
        a.apply(&vec![0.0; 100]);
        assert_eq!(a.work_counter().total(), 4);
    }

    #[test]
    fn rho_zero_objective_is_data_term() {
        let (fwd, den) = setup(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = rvec(fwd.output_len(), &mut rng);
        let z = rvec(100, &mut rng);
        let obj = Objective {
            forward: &fwd,
            denoiser: &den,
            rho: 0.0,
            y: &y,
        };
        let (v, x) = obj.eval(&z);
        let fx = fwd.forward_slice(&x);
        let want: f64 = 0.5 * fx.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let guide = Image::from_fn(6, 6, |_, _| rng.random::<f64>());
        let fwd = ForwardModel::blur(6, 6, gaussian_kernel(3, 1.0), Boundary::Symmetric).unwrap();
        let den = KernelDenoiser::build(
            &guide,
            KernelConfig {
                patch_radius: 1,
                search_radius: 2,
                intensity_bandwidth: 0.3,
                ..Default::default()
            },
        )
        .unwrap();
        let y = rvec(36, &mut rng);
        let obj = Objective {
            forward: &fwd,
            denoiser: &den,
            rho: 0.4,
            y: &y,
        };
        let z = rvec(36, &mut rng);
        let g = obj.gradient(&z);
        let h = 1e-6;
        for i in 0..36 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (obj.eval(&zp).0 - obj.eval(&zm).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn dense_operator_equals_materialized_system() {
        let (fwd, den) = setup(13);
        let op = SystemOperator::new(SystemForm::AForm, &fwd, &den, 0.2).unwrap();
        let a = materialize(&op, 4096).unwrap();
        assert!((&a - a.transpose()).amax() < 1e-12);
    }
}
