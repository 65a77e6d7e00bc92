//! Forward imaging operators `F` and their adjoints, matrix-free.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::denoiser::reflect;
use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::operator::{materialize, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Circular,
    /// Half-sample mirror extension.
    Symmetric,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Circular => "circular",
            Boundary::Symmetric => "symmetric",
        }
    }

    fn index(self, p: isize, n: usize) -> usize {
        match self {
            Boundary::Circular => p.rem_euclid(n as isize) as usize,
            Boundary::Symmetric => reflect(p, n),
        }
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Boundary::Circular),
            "symmetric" => Ok(Boundary::Symmetric),
            _ => Err(Error::Config(format!("unknown boundary `{s}`"))),
        }
    }
}

/// Normalized `size x size` Gaussian kernel.
pub fn gaussian_kernel(size: usize, std: f64) -> Image {
    assert!(size > 0 && std > 0.0);
    let c = (size as f64 - 1.0) / 2.0;
    let mut k = Image::from_fn(size, size, |r, col| {
        let (dr, dc) = (r as f64 - c, col as f64 - c);
        (-(dr * dr + dc * dc) / (2.0 * std * std)).exp()
    });
    let s: f64 = k.data().iter().sum();
    k.data_mut().iter_mut().for_each(|v| *v /= s);
    k
}

pub fn box_kernel(size: usize) -> Image {
    Image::filled(size, size, 1.0 / (size * size) as f64)
}

/// Per-axis gather tables for a convolution under a boundary rule.
#[derive(Debug, Clone)]
struct AxisMap {
    /// `src[i * taps + a]`: input index read by output `i` for tap `a`.
    src: Vec<usize>,
    /// `pre[j]`: all `(i, a)` with `src[i * taps + a] == j`.
    pre: Vec<Vec<(usize, usize)>>,
}

impl AxisMap {
    fn new(n: usize, taps: usize, boundary: Boundary) -> Self {
        let centre = (taps / 2) as isize;
        let mut src = Vec::with_capacity(n * taps);
        let mut pre = vec![Vec::new(); n];
        for i in 0..n {
            for a in 0..taps {
                let j = boundary.index(i as isize - (a as isize - centre), n);
                src.push(j);
                pre[j].push((i, a));
            }
        }
        Self { src, pre }
    }
}

/// 2-D convolution `(Bx)[r,c] = Σ h[a,b] x[r-(a-ca), c-(b-cb)]` with the
/// kernel centred at `(kh/2, kw/2)`.
#[derive(Debug, Clone)]
struct Convolution {
    kernel: Image,
    height: usize,
    width: usize,
    rows: AxisMap,
    cols: AxisMap,
}

impl Convolution {
    fn new(kernel: Image, boundary: Boundary, height: usize, width: usize) -> Result<Self> {
        if kernel.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Input("blur kernel entries must be nonnegative".into()));
        }
        let sum: f64 = kernel.data().iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Input("blur kernel must have a finite positive sum".into()));
        }
        let rows = AxisMap::new(height, kernel.height(), boundary);
        let cols = AxisMap::new(width, kernel.width(), boundary);
        Ok(Self {
            kernel,
            height,
            width,
            rows,
            cols,
        })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (kh, kw) = self.kernel.shape();
        let (w, h) = (self.width, self.height);
        let k = self.kernel.data();
        out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
            for (c, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..kh {
                    let sr = self.rows.src[r * kh + a];
                    let xrow = &x[sr * w..(sr + 1) * w];
                    let krow = &k[a * kw..(a + 1) * kw];
                    let csrc = &self.cols.src[c * kw..(c + 1) * kw];
                    for b in 0..kw {
                        acc += krow[b] * xrow[csrc[b]];
                    }
                }
                *o = acc;
            }
        });
        debug_assert_eq!(out.len(), h * w);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let kw = self.kernel.width();
        let w = self.width;
        let k = self.kernel.data();
        out.par_chunks_mut(w).enumerate().for_each(|(j1, row)| {
            for (j2, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &(r, a) in &self.rows.pre[j1] {
                    let yrow = &y[r * w..(r + 1) * w];
                    for &(c, b) in &self.cols.pre[j2] {
                        acc += k[a * kw + b] * yrow[c];
                    }
                }
                *o = acc;
            }
        });
    }
}

#[derive(Debug, Clone)]
pub enum ForwardKind {
    Blur {
        kernel: Image,
        boundary: Boundary,
    },
    /// Blur followed by keeping pixels `(phase + i·factor, phase + j·factor)`.
    Superres {
        kernel: Image,
        boundary: Boundary,
        factor: usize,
        phase: usize,
    },
    /// Observed pixels are gathered in row-major mask order.
    Inpaint {
        mask: Vec<bool>,
    },
}

/// A forward model `F` with fixed input (image) and output (measurement)
/// shapes.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    kind: ForwardKind,
    height: usize,
    width: usize,
    output_shape: (usize, usize),
    conv: Option<Convolution>,
    observed: Vec<usize>,
}

impl ForwardModel {
    pub fn blur(height: usize, width: usize, kernel: Image, boundary: Boundary) -> Result<Self> {
        let conv = Convolution::new(kernel.clone(), boundary, height, width)?;
        Ok(Self {
            kind: ForwardKind::Blur { kernel, boundary },
            height,
            width,
            output_shape: (height, width),
            conv: Some(conv),
            observed: Vec::new(),
        })
    }

    pub fn superres(
        height: usize,
        width: usize,
        kernel: Image,
        boundary: Boundary,
        factor: usize,
        phase: usize,
    ) -> Result<Self> {
        if factor < 1 {
            return Err(Error::Config("superresolution factor must be at least 1".into()));
        }
        if phase >= factor || phase >= height || phase >= width {
            return Err(Error::Config(format!(
                "phase {phase} must be below the factor {factor} and the image size"
            )));
        }
        let conv = Convolution::new(kernel.clone(), boundary, height, width)?;
        let oh = (height - phase).div_ceil(factor);
        let ow = (width - phase).div_ceil(factor);
        Ok(Self {
            kind: ForwardKind::Superres {
                kernel,
                boundary,
                factor,
                phase,
            },
            height,
            width,
            output_shape: (oh, ow),
            conv: Some(conv),
            observed: Vec::new(),
        })
    }

    pub fn inpaint(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        check_len(height * width, mask.len())?;
        let observed: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        if observed.is_empty() {
            return Err(Error::Input("inpainting mask has no observed pixel".into()));
        }
        Ok(Self {
            kind: ForwardKind::Inpaint { mask },
            height,
            width,
            output_shape: (observed.len(), 1),
            conv: None,
            observed,
        })
    }

    pub fn kind(&self) -> &ForwardKind {
        &self.kind
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Measurement shape. Inpainting measurements are a column of observed
    /// samples.
    pub fn output_shape(&self) -> (usize, usize) {
        self.output_shape
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.0 * self.output_shape.1
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ForwardKind::Blur { .. } => "deblur",
            ForwardKind::Superres { .. } => "superres",
            ForwardKind::Inpaint { .. } => "inpaint",
        }
    }

    /// Upper bound on `‖F‖²`.
    pub fn norm_squared_bound(&self) -> f64 {
        match &self.kind {
            ForwardKind::Blur { kernel, .. } | ForwardKind::Superres { kernel, .. } => {
                let s: f64 = kernel.data().iter().sum();
                s * s
            }
            ForwardKind::Inpaint { .. } => 1.0,
        }
    }

    pub fn apply_forward_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ForwardKind::Blur { .. } => self.conv.as_ref().unwrap().apply(x, out),
            ForwardKind::Superres { factor, phase, .. } => {
                let mut blurred = vec![0.0; self.input_len()];
                self.conv.as_ref().unwrap().apply(x, &mut blurred);
                let (oh, ow) = self.output_shape;
                for i in 0..oh {
                    for j in 0..ow {
                        out[i * ow + j] = blurred[(phase + i * factor) * self.width + phase + j * factor];
                    }
                }
            }
            ForwardKind::Inpaint { .. } => {
                for (o, &i) in out.iter_mut().zip(&self.observed) {
                    *o = x[i];
                }
            }
        }
    }

    pub fn apply_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        match &self.kind {
            ForwardKind::Blur { .. } => self.conv.as_ref().unwrap().apply_adjoint(y, out),
            ForwardKind::Superres { factor, phase, .. } => {
                let mut up = vec![0.0; self.input_len()];
                let (oh, ow) = self.output_shape;
                for i in 0..oh {
                    for j in 0..ow {
                        up[(phase + i * factor) * self.width + phase + j * factor] = y[i * ow + j];
                    }
                }
                self.conv.as_ref().unwrap().apply_adjoint(&up, out);
            }
            ForwardKind::Inpaint { .. } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                for (&v, &i) in y.iter().zip(&self.observed) {
                    out[i] = v;
                }
            }
        }
    }

    pub fn forward_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.apply_forward_into(x, &mut out);
        out
    }

    pub fn adjoint_slice(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_len()];
        self.apply_adjoint_into(y, &mut out);
        out
    }

    /// `F x` for an image of the input shape.
    pub fn apply_forward(&self, x: &Image) -> Result<Vec<f64>> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(self.forward_slice(x.data()))
    }

    /// `Fᵀ y` as an image of the input shape.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Image> {
        check_len(self.output_len(), y.len())?;
        Image::new(self.height, self.width, self.adjoint_slice(y))
    }

    /// Measurement reshaped as an image (useful for saving and display).
    pub fn measurement_image(&self, y: &[f64]) -> Result<Image> {
        check_len(self.output_len(), y.len())?;
        let (h, w) = self.output_shape;
        Image::new(h, w, y.to_vec())
    }

    /// Dense `m x n` matrix; column `j` is `F e_j`.
    pub fn materialize(&self, cap: usize) -> Result<DMatrix<f64>> {
        materialize(&ForwardOp(self), cap)
    }
}

/// `F` as a [`LinearOperator`].
pub struct ForwardOp<'a>(pub &'a ForwardModel);

impl LinearOperator for ForwardOp<'_> {
    fn input_len(&self) -> usize {
        self.0.input_len()
    }

    fn output_len(&self) -> usize {
        self.0.output_len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.apply_forward_into(x, out)
    }
}

/// `Fᵀ` as a [`LinearOperator`].
pub struct AdjointOp<'a>(pub &'a ForwardModel);

impl LinearOperator for AdjointOp<'_> {
    fn input_len(&self) -> usize {
        self.0.output_len()
    }

    fn output_len(&self) -> usize {
        self.0.input_len()
    }

    fn apply_into(&self, y: &[f64], out: &mut [f64]) {
        self.0.apply_adjoint_into(y, out)
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise, deterministic in `seed`.
pub fn add_noise(y: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("noise level must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(y.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid standard deviation");
    Ok(y.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Bernoulli sampling mask keeping each pixel with probability `density`,
/// deterministic in `seed`. At least one pixel is always kept.
pub fn random_mask(height: usize, width: usize, density: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Input(format!("mask density must lie in [0, 1], got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask: Vec<bool> = (0..height * width).map(|_| rng.random::<f64>() < density).collect();
    if !mask.is_empty() && !mask.iter().any(|&m| m) {
        mask[0] = true;
    }
    Ok(mask)
}
