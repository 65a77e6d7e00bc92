//! Image quality metrics with peak value 1.0.

use crate::error::{Error, Result};
use crate::image::Image;

pub fn mse(reference: &Image, candidate: &Image) -> Result<f64> {
    reference.same_shape(candidate)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in decibels for intensities on `[0, 1]`.
/// Identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image, candidate: &Image) -> Result<f64> {
    let mse = mse(reference, candidate)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering: output has size (h - 10) x (w - 10).
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| taps[k] * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 windows that fit inside the
/// image (Gaussian weights, sigma 1.5).
pub fn ssim(reference: &Image, candidate: &Image) -> Result<f64> {
    reference.same_shape(candidate)?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            format!("at least {SSIM_WINDOW}x{SSIM_WINDOW}"),
            format!("{h}x{w}"),
        ));
    }
    let taps = gaussian_taps();
    let x = reference.data();
    let y = candidate.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let e_xx = filter_valid(&xx, h, w, &taps);
    let e_yy = filter_valid(&yy, h, w, &taps);
    let e_xy = filter_valid(&xy, h, w, &taps);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mu_x.len() as f64)
}
