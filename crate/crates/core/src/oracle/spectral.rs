use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::denoiser::KernelDenoiser;
use crate::error::{Error, Result};

/// Eigenvalues at or below `RANK_TOLERANCE × λ_max` are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;
/// Full SVD with a tight convergence threshold. The default threshold of
/// `DMatrix::svd` leaves errors near 1e-5 on matrices with a large null space.
pub fn dense_svd(a: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    a.clone()
        .try_svd(true, true, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

/// Relative distance from `range(W)` beyond which `Φ_W` is `+∞`.
pub const RANGE_TOLERANCE: f64 = 1e-7;
/// Largest spectrum excursion outside `[0, 1]` that is clipped silently.
const CLIP_TOLERANCE: f64 = 1e-8;

/// `W = M Λ M⁻¹` with `M = D^{-1/2} Q`, `M⁻¹ = Qᵀ D^{1/2}`, obtained from the
/// symmetric similar matrix `S = D^{-1/2} K D^{-1/2} = Q Λ Qᵀ`.
///
/// Eigenvalues are sorted in decreasing order, so the first `rank` columns of
/// `M` span `range(W)`.
#[derive(Debug, Clone)]
pub struct DenseSpectralForm {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub m: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub rank: usize,
    /// Largest distance of a raw eigenvalue outside `[0, 1]` before clipping.
    pub clip_violation: f64,
    regularizer: OnceLock<DMatrix<f64>>,
}

/// Decomposes a dense denoiser matrix given its row sums `d`.
pub fn spectral_decompose(w: &DMatrix<f64>, d: &DVector<f64>) -> Result<DenseSpectralForm> {
    let n = w.nrows();
    if w.ncols() != n || d.len() != n {
        return Err(Error::shape(
            format!("{n}x{n} and {n}"),
            format!("{}x{} and {}", w.nrows(), w.ncols(), d.len()),
        ));
    }
    if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("row sums must be positive".into()));
    }
    let sqrt_d = d.map(f64::sqrt);
    // S = D^{1/2} W D^{-1/2}, symmetrized to remove rounding asymmetry.
    let mut s = w.clone();
    for j in 0..n {
        for i in 0..n {
            s[(i, j)] *= sqrt_d[i] / sqrt_d[j];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite denoiser matrix".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lambda = DVector::zeros(n);
    let mut q = DMatrix::zeros(n, n);
    let mut clip_violation: f64 = 0.0;
    for (k, &src) in order.iter().enumerate() {
        let raw = eig.eigenvalues[src];
        let excursion = if raw < 0.0 {
            -raw
        } else if raw > 1.0 {
            raw - 1.0
        } else {
            0.0
        };
        clip_violation = clip_violation.max(excursion);
        lambda[k] = raw.clamp(0.0, 1.0);
        q.set_column(k, &eig.eigenvectors.column(src));
    }
    if clip_violation > CLIP_TOLERANCE {
        return Err(Error::Numerical(format!(
            "spectrum leaves [0, 1] by {clip_violation:.3e}; the kernel is not positive semidefinite"
        )));
    }
    let lmax = lambda[0];
    let rank = lambda.iter().filter(|&&l| l > RANK_TOLERANCE * lmax).count();
    for k in rank..n {
        lambda[k] = 0.0;
    }

    let mut m = q.clone();
    let mut m_inv = q.transpose();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= sqrt_d[i];
            m_inv[(j, i)] *= sqrt_d[i];
        }
    }
    Ok(DenseSpectralForm {
        w: w.clone(),
        d: d.clone(),
        q,
        lambda,
        m,
        m_inv,
        rank,
        clip_violation,
        regularizer: OnceLock::new(),
    })
}

impl DenseSpectralForm {
    pub fn from_denoiser(denoiser: &KernelDenoiser, cap: usize) -> Result<Self> {
        let dense = denoiser.materialize(cap)?;
        spectral_decompose(&dense.w, &dense.d)
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Basis `U` of `range(W)` (first `rank` columns of `M`).
    pub fn u(&self) -> DMatrix<f64> {
        self.m.columns(0, self.rank).into_owned()
    }

    /// `U† `: the matching rows of `M⁻¹`, so that `U† U = I`.
    pub fn u_dagger(&self) -> DMatrix<f64> {
        self.m_inv.rows(0, self.rank).into_owned()
    }

    /// `M Λ M⁻¹`.
    pub fn reconstruct_w(&self) -> DMatrix<f64> {
        let mut ml = self.m.clone();
        for k in 0..self.len() {
            ml.column_mut(k).scale_mut(self.lambda[k]);
        }
        ml * &self.m_inv
    }

    /// Generalized inverse `W† = M Λ† M⁻¹`.
    pub fn w_pinv(&self) -> DMatrix<f64> {
        let mut ml = self.m.columns(0, self.rank).into_owned();
        for k in 0..self.rank {
            ml.column_mut(k).scale_mut(1.0 / self.lambda[k]);
        }
        ml * self.m_inv.rows(0, self.rank)
    }

    /// `P = D(I − W)W†`, formed by direct products.
    pub fn regularizer_matrix(&self) -> &DMatrix<f64> {
        self.regularizer.get_or_init(|| {
            let n = self.len();
            let pinv = self.w_pinv();
            let mut p = &pinv - &self.w * &pinv;
            for i in 0..n {
                p.row_mut(i).scale_mut(self.d[i]);
            }
            p
        })
    }

    /// Coefficients `U† x` and the relative distance of `x` from `range(W)`.
    pub fn range_coefficients(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let xv = DVector::from_column_slice(x);
        let c = self.m_inv.rows(0, self.rank) * &xv;
        let back = self.m.columns(0, self.rank) * &c;
        let xn = xv.norm();
        let dist = (&xv - back).norm();
        (c, if xn > 0.0 { dist / xn } else { dist })
    }

    pub fn in_range(&self, x: &[f64]) -> bool {
        self.range_coefficients(x).1 <= RANGE_TOLERANCE
    }

    /// `Φ_W(x) = ½ xᵀ D(I − W)W† x` on `range(W)`, `+∞` elsewhere.
    pub fn phi(&self, x: &[f64]) -> f64 {
        if !self.in_range(x) {
            return f64::INFINITY;
        }
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(self.regularizer_matrix() * &xv))
    }

    /// `Φ_W(x) = ½ Σ (1/λ_i − 1)(U†x)_i²`, computed from the spectrum only.
    pub fn phi_alternative(&self, x: &[f64]) -> f64 {
        let (c, dist) = self.range_coefficients(x);
        if dist > RANGE_TOLERANCE {
            return f64::INFINITY;
        }
        0.5 * (0..self.rank)
            .map(|i| (1.0 / self.lambda[i] - 1.0) * c[i] * c[i])
            .sum::<f64>()
    }

    /// `argmin_z ½‖z − x‖²_D + Φ_W(z)` by solving the optimality system on
    /// `range(W)`: with `z = U c`, `(UᵀDU + UᵀPU) c = UᵀD x`.
    pub fn scaled_prox(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::shape(self.len().to_string(), x.len().to_string()));
        }
        let u = self.u();
        let mut du = u.clone();
        for i in 0..self.len() {
            du.row_mut(i).scale_mut(self.d[i]);
        }
        let p = self.regularizer_matrix();
        let h = u.transpose() * &du + u.transpose() * (p * &u);
        let h = (&h + h.transpose()) * 0.5;
        let rhs = du.transpose() * DVector::from_column_slice(x);
        let c = match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => h
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("prox system is singular".into()))?,
        };
        Ok((u * c).as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{KernelConfig, KernelVariant, SpatialProfile};
    use crate::image::Image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_denoiser(seed: u64, n: usize) -> KernelDenoiser {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let guide = Image::from_fn(n, n, |_, _| rng.random::<f64>());
        let cfg = KernelConfig {
            patch_radius: 1,
            search_radius: 2,
            intensity_bandwidth: 0.25,
            ..KernelConfig::default()
        };
        KernelDenoiser::build(&guide, cfg).unwrap()
    }

    fn rank_deficient(levels: &[f64], n: usize) -> KernelDenoiser {
        let guide = Image::from_fn(n, n, |r, c| levels[(r * 7 + c * 3) % levels.len()]);
        let cfg = KernelConfig {
            variant: KernelVariant::Yaroslavsky,
            patch_radius: 0,
            search_radius: n,
            intensity_bandwidth: 0.2,
            spatial_profile: SpatialProfile::Box,
            spatial_bandwidth: 1.0,
        };
        KernelDenoiser::build(&guide, cfg).unwrap()
    }

    #[test]
    fn reconstructs_w_and_inverse_pair() {
        let den = random_denoiser(1, 7);
        let f = DenseSpectralForm::from_denoiser(&den, 4096).unwrap();
        let w = den.materialize(4096).unwrap().w;
        assert!((f.reconstruct_w() - &w).amax() < 1e-10);
        let eye = DMatrix::<f64>::identity(49, 49);
        assert!((&f.m * &f.m_inv - &eye).amax() < 1e-10);
        assert!(f.lambda.iter().all(|&l| (0.0..=1.0).contains(&l)));
        assert!((f.lambda[0] - 1.0).abs() < 1e-10);
        assert!(f.clip_violation <= 1e-8);
    }

    #[test]
    fn exact_rank_from_few_valued_guide() {
        let den = rank_deficient(&[0.1, 0.5, 0.9], 6);
        let f = DenseSpectralForm::from_denoiser(&den, 4096).unwrap();
        assert_eq!(f.rank, 3);
        let pinv = f.w_pinv();
        let w = &f.w;
        assert!((w * &pinv * w - w).amax() < 1e-8);
        assert!((&pinv * w * &pinv - &pinv).amax() < 1e-6 * pinv.amax());
    }

    #[test]
    fn phi_forms_agree_and_infinite_off_range() {
        let den = rank_deficient(&[0.2, 0.4, 0.6, 0.8], 5);
        let f = DenseSpectralForm::from_denoiser(&den, 4096).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let x = den.apply_slice(&v);
            let (a, b) = (f.phi(&x), f.phi_alternative(&x));
            assert!(a.is_finite() && a >= -1e-12);
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
            assert!(f.phi(&v).is_infinite());
        }
        assert_eq!(f.phi(&[0.0; 25]), 0.0);
        let ones = vec![1.0; 25];
        assert!(f.phi(&ones).abs() < 1e-10);
    }

    #[test]
    fn scaled_prox_reproduces_denoiser() {
        for seed in 0..3 {
            let den = random_denoiser(10 + seed, 6);
            let f = DenseSpectralForm::from_denoiser(&den, 4096).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..36).map(|_| rng.random::<f64>()).collect();
            let z = f.scaled_prox(&x).unwrap();
            let wx = den.apply_slice(&x);
            let err = z.iter().zip(&wx).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-8, "{err}");
        }
    }

    #[test]
    fn rejects_indefinite_and_bad_shapes() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = DVector::from_element(2, 1.0);
        assert!(matches!(spectral_decompose(&w, &d), Err(Error::Numerical(_))));
        assert!(spectral_decompose(&w, &DVector::from_element(3, 1.0)).is_err());
        assert!(spectral_decompose(&w, &DVector::from_element(2, 0.0)).is_err());
    }
}
