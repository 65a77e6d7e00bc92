//! Kernel denoisers `W = D⁻¹K` built from a guide image.
//!
//! The kernel weight between pixels `s` and `t` is the product of a feature
//! term (patch or pixel similarity in the guide) and a spatial profile over
//! the offset `t - s`, truncated to a `(2R+1)²` search window. Both factors
//! are symmetric in `(s, t)`, so `K` is symmetric, and for the `hat` and
//! `gaussian` profiles it is positive semidefinite, which puts the spectrum
//! of `W` in `[0, 1]`.
//!
//! Weights are computed once at build time and stored per pixel, so each
//! application of `W` or `Wᵀ` costs one pass over the weight table.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelVariant {
    /// Non-local means, Gaussian kernel on patch differences.
    NlmGaussian,
    /// Non-local means, Laplacian kernel on patch differences.
    NlmLaplacian,
    /// Gaussian range kernel on the centre pixel, Gaussian spatial taper.
    Bilateral,
    /// Gaussian range kernel on the centre pixel only.
    Yaroslavsky,
}

impl KernelVariant {
    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::NlmGaussian => "nlm-gaussian",
            KernelVariant::NlmLaplacian => "nlm-laplacian",
            KernelVariant::Bilateral => "bilateral",
            KernelVariant::Yaroslavsky => "yaroslavsky",
        }
    }

    pub fn all() -> [KernelVariant; 4] {
        [
            KernelVariant::NlmGaussian,
            KernelVariant::NlmLaplacian,
            KernelVariant::Bilateral,
            KernelVariant::Yaroslavsky,
        ]
    }

    pub fn uses_patches(self) -> bool {
        matches!(self, KernelVariant::NlmGaussian | KernelVariant::NlmLaplacian)
    }
}

impl std::str::FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelVariant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown kernel variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialProfile {
    /// Separable triangle `(1 - |dr|/(R+1)) (1 - |dc|/(R+1))`.
    Hat,
    /// `exp(-|d|²/(2σ²))` tapered by the hat, which keeps it positive
    /// semidefinite after truncation.
    Gaussian,
    /// Constant over the window. Not positive semidefinite unless the window
    /// covers the whole image.
    Box,
}

impl SpatialProfile {
    pub fn name(self) -> &'static str {
        match self {
            SpatialProfile::Hat => "hat",
            SpatialProfile::Gaussian => "gaussian",
            SpatialProfile::Box => "box",
        }
    }
}

impl std::str::FromStr for SpatialProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hat" => Ok(SpatialProfile::Hat),
            "gaussian" => Ok(SpatialProfile::Gaussian),
            "box" => Ok(SpatialProfile::Box),
            _ => Err(Error::Config(format!("unknown spatial profile `{s}`"))),
        }
    }
}

/// Parameters of a kernel denoiser.
///
/// Defaults: 7x7 patches (`patch_radius = 3`), 21x21 search window
/// (`search_radius = 10`), intensity bandwidth 0.1, hat spatial profile.
/// Patch distances are averaged over the patch, so the bandwidth is on the
/// per-pixel intensity scale regardless of patch size. The spatial profile
/// is scaled to unit mass over the window, so every row sum lies in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    pub patch_radius: usize,
    pub search_radius: usize,
    pub intensity_bandwidth: f64,
    pub spatial_profile: SpatialProfile,
    /// Only used by the gaussian profile.
    pub spatial_bandwidth: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            variant: KernelVariant::NlmGaussian,
            patch_radius: 3,
            search_radius: 10,
            intensity_bandwidth: 0.1,
            spatial_profile: SpatialProfile::Hat,
            spatial_bandwidth: 3.0,
        }
    }
}

impl KernelConfig {
    /// Default parameters for a variant.
    pub fn for_variant(variant: KernelVariant) -> Self {
        let base = Self::default();
        match variant {
            KernelVariant::NlmGaussian | KernelVariant::NlmLaplacian => Self { variant, ..base },
            KernelVariant::Bilateral => Self {
                variant,
                patch_radius: 0,
                spatial_profile: SpatialProfile::Gaussian,
                ..base
            },
            KernelVariant::Yaroslavsky => Self {
                variant,
                patch_radius: 0,
                ..base
            },
        }
    }

    /// Default bandwidth scaled to a noise level: `0.1 · max(σ/0.04, 0.25)`.
    pub fn for_noise(mut self, sigma: f64) -> Self {
        self.intensity_bandwidth = 0.1 * (sigma / 0.04).max(0.25);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.search_radius < 1 {
            return Err(Error::Config("search_radius must be at least 1".into()));
        }
        if !(self.intensity_bandwidth > 0.0 && self.intensity_bandwidth.is_finite()) {
            return Err(Error::Config("intensity_bandwidth must be positive".into()));
        }
        if !(self.spatial_bandwidth > 0.0 && self.spatial_bandwidth.is_finite()) {
            return Err(Error::Config("spatial_bandwidth must be positive".into()));
        }
        if self.variant == KernelVariant::Yaroslavsky && self.patch_radius != 0 {
            return Err(Error::Config(
                "yaroslavsky uses pixel features only; patch_radius must be 0".into(),
            ));
        }
        Ok(())
    }

    fn effective_patch_radius(&self) -> usize {
        if self.variant.uses_patches() {
            self.patch_radius
        } else {
            0
        }
    }

    fn spatial_weight(&self, dr: isize, dc: isize) -> f64 {
        let r1 = (self.search_radius + 1) as f64;
        let hat = (1.0 - dr.unsigned_abs() as f64 / r1) * (1.0 - dc.unsigned_abs() as f64 / r1);
        match self.spatial_profile {
            SpatialProfile::Hat => hat,
            SpatialProfile::Gaussian => {
                let d2 = (dr * dr + dc * dc) as f64;
                hat * (-d2 / (2.0 * self.spatial_bandwidth * self.spatial_bandwidth)).exp()
            }
            SpatialProfile::Box => 1.0,
        }
    }
}

/// Half-sample symmetric reflection into `0..n`, valid for any offset.
#[inline]
pub(crate) fn reflect(p: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = p.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

/// A kernel denoiser with its weights precomputed from a guide image.
#[derive(Debug, Clone)]
pub struct KernelDenoiser {
    guide: Image,
    config: KernelConfig,
    /// `weights[s * window + k]` is `K[s, t]` for the k-th window offset
    /// (row-major), zero where `t` falls outside the image.
    weights: Vec<f64>,
    row_sums: Vec<f64>,
}

impl KernelDenoiser {
    pub fn build(guide: &Image, config: KernelConfig) -> Result<Self> {
        config.validate()?;
        if let Some(i) = guide.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite guide pixel at index {i}")));
        }
        let (h, w) = guide.shape();
        let radius = config.search_radius as isize;
        let side = 2 * config.search_radius + 1;
        let window = side * side;
        let pr = config.effective_patch_radius();
        let patch_len = (2 * pr + 1) * (2 * pr + 1);

        // Guide padded by mirror extension so every patch read is in bounds.
        let pw = w + 2 * pr;
        let ph = h + 2 * pr;
        let mut padded = vec![0.0; ph * pw];
        for r in 0..ph {
            for c in 0..pw {
                let sr = reflect(r as isize - pr as isize, h);
                let sc = reflect(c as isize - pr as isize, w);
                padded[r * pw + c] = guide.get(sr, sc);
            }
        }

        let mut spatial = vec![0.0; window];
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let k = ((dr + radius) as usize) * side + (dc + radius) as usize;
                spatial[k] = config.spatial_weight(dr, dc);
            }
        }
        let mass: f64 = spatial.iter().sum();
        spatial.iter_mut().for_each(|s| *s /= mass);

        let h2 = config.intensity_bandwidth * config.intensity_bandwidth;
        let bw = config.intensity_bandwidth;
        let variant = config.variant;
        let feature = |dist: f64| -> f64 {
            match variant {
                KernelVariant::NlmGaussian | KernelVariant::Bilateral | KernelVariant::Yaroslavsky => {
                    (-dist / (2.0 * h2)).exp()
                }
                KernelVariant::NlmLaplacian => (-dist / bw).exp(),
            }
        };
        let laplacian = variant == KernelVariant::NlmLaplacian;
        let side_p = 2 * pr + 1;

        let mut weights = vec![0.0; h * w * window];
        weights.par_chunks_mut(window).enumerate().for_each(|(s, row)| {
            let (sr, sc) = (s / w, s % w);
            for dr in -radius..=radius {
                let tr = sr as isize + dr;
                if tr < 0 || tr >= h as isize {
                    continue;
                }
                for dc in -radius..=radius {
                    let tc = sc as isize + dc;
                    if tc < 0 || tc >= w as isize {
                        continue;
                    }
                    let k = ((dr + radius) as usize) * side + (dc + radius) as usize;
                    if spatial[k] == 0.0 {
                        continue;
                    }
                    // patch (i, j) of pixel (r, c) lives at padded[(r+i)*pw + c+j]
                    let mut dist = 0.0;
                    for i in 0..side_p {
                        let a = (sr + i) * pw + sc;
                        let b = (tr as usize + i) * pw + tc as usize;
                        for j in 0..side_p {
                            let d = padded[a + j] - padded[b + j];
                            dist += if laplacian { d.abs() } else { d * d };
                        }
                    }
                    row[k] = spatial[k] * feature(dist / patch_len as f64);
                }
            }
        });

        let row_sums: Vec<f64> = weights.par_chunks(window).map(|r| r.iter().sum()).collect();
        if let Some(s) = row_sums.iter().position(|&d| d.is_nan() || d <= 0.0) {
            return Err(Error::Numerical(format!("non-positive kernel row sum at pixel {s}")));
        }
        Ok(Self {
            guide: guide.clone(),
            config,
            weights,
            row_sums,
        })
    }

    pub fn guide(&self) -> &Image {
        &self.guide
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn shape(&self) -> (usize, usize) {
        self.guide.shape()
    }

    pub fn len(&self) -> usize {
        self.guide.len()
    }

    pub fn is_empty(&self) -> bool {
        self.guide.is_empty()
    }

    /// Diagonal of `D`.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn min_row_sum(&self) -> f64 {
        self.row_sums.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `out[s] = Σ_t K[s,t] · x[t] · scale[t]`, one pass over the table.
    fn kernel_pass(&self, x: &[f64], col_scale: Option<&[f64]>, out: &mut [f64]) {
        let (h, w) = self.guide.shape();
        let radius = self.config.search_radius as isize;
        let side = 2 * self.config.search_radius + 1;
        let window = side * side;
        out.par_iter_mut().enumerate().for_each(|(s, o)| {
            let (sr, sc) = ((s / w) as isize, (s % w) as isize);
            let row = &self.weights[s * window..(s + 1) * window];
            let r0 = (sr - radius).max(0);
            let r1 = (sr + radius).min(h as isize - 1);
            let c0 = (sc - radius).max(0);
            let c1 = (sc + radius).min(w as isize - 1);
            let mut acc = 0.0;
            for tr in r0..=r1 {
                let kbase = ((tr - sr + radius) as usize) * side;
                let tbase = tr as usize * w;
                for tc in c0..=c1 {
                    let k = kbase + (tc - sc + radius) as usize;
                    let t = tbase + tc as usize;
                    let v = match col_scale {
                        Some(sc) => x[t] * sc[t],
                        None => x[t],
                    };
                    acc += row[k] * v;
                }
            }
            *o = acc;
        });
    }

    /// `K x` (the unnormalized kernel product).
    pub fn apply_kernel_into(&self, x: &[f64], out: &mut [f64]) {
        self.kernel_pass(x, None, out);
    }

    /// `W x = D⁻¹ K x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.kernel_pass(x, None, out);
        for (o, d) in out.iter_mut().zip(&self.row_sums) {
            *o /= d;
        }
    }

    /// `Wᵀ x = K D⁻¹ x`, which equals `D W D⁻¹ x`.
    pub fn apply_adjoint_into(&self, x: &[f64], out: &mut [f64]) {
        let inv: Vec<f64> = self.row_sums.iter().map(|d| 1.0 / d).collect();
        self.kernel_pass(x, Some(&inv), out);
    }

    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_adjoint_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_adjoint_into(x, &mut out);
        out
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        self.guide.same_shape(x)?;
        Image::from_vec_like(x, self.apply_slice(x.data()))
    }

    pub fn apply_adjoint(&self, x: &Image) -> Result<Image> {
        self.guide.same_shape(x)?;
        Image::from_vec_like(x, self.apply_adjoint_slice(x.data()))
    }

    /// Dense `W`, `K` and the diagonal of `D`, for instances with at most
    /// `cap` pixels.
    pub fn materialize(&self, cap: usize) -> Result<DenseDenoiser> {
        let n = self.len();
        if n > cap {
            return Err(Error::TooLarge { n, cap });
        }
        let (h, w) = self.guide.shape();
        let radius = self.config.search_radius as isize;
        let side = 2 * self.config.search_radius + 1;
        let window = side * side;
        let mut k = DMatrix::zeros(n, n);
        for s in 0..n {
            let (sr, sc) = ((s / w) as isize, (s % w) as isize);
            for dr in -radius..=radius {
                for dc in -radius..=radius {
                    let (tr, tc) = (sr + dr, sc + dc);
                    if tr < 0 || tc < 0 || tr >= h as isize || tc >= w as isize {
                        continue;
                    }
                    let idx = ((dr + radius) as usize) * side + (dc + radius) as usize;
                    k[(s, tr as usize * w + tc as usize)] = self.weights[s * window + idx];
                }
            }
        }
        let d = DVector::from_column_slice(&self.row_sums);
        let mut wm = k.clone();
        for (s, mut row) in wm.row_iter_mut().enumerate() {
            row /= d[s];
        }
        Ok(DenseDenoiser { w: wm, k, d })
    }
}

/// Dense materialization of a kernel denoiser.
#[derive(Debug, Clone)]
pub struct DenseDenoiser {
    pub w: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Diagonal of `D`.
    pub d: DVector<f64>,
}

impl DenseDenoiser {
    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d)
    }
}
