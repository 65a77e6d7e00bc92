//! Builds the forward model and measurements described by the settings.

use anyhow::{bail, Context, Result};
use krs_core::forward::{add_noise, random_mask};
use krs_core::harness::smoothed_noise;
use krs_core::io::{load_image, load_mask};
use krs_core::pipeline::{Application, ForwardSpec};
use krs_core::{ForwardModel, Image};

use crate::settings::{parse_blur_kernel, ProblemSettings};

/// Salt separating the mask stream from the noise stream of one seed.
const MASK_SALT: u64 = 0x6d61_736b;

pub struct Problem {
    pub spec: ForwardSpec,
    pub forward: ForwardModel,
    pub y: Vec<f64>,
    /// Ground truth for PSNR/SSIM, when known.
    pub truth: Option<Image>,
    /// Shape of the image being restored.
    pub shape: (usize, usize),
}

fn mask_for(p: &ProblemSettings, shape: (usize, usize)) -> Result<Vec<bool>> {
    match &p.mask {
        Some(path) => {
            let (h, w, mask) = load_mask(path)?;
            if (h, w) != shape {
                bail!(
                    "mask {} is {h}x{w} but the image is {}x{}",
                    path.display(),
                    shape.0,
                    shape.1
                );
            }
            Ok(mask)
        }
        None => Ok(random_mask(shape.0, shape.1, p.mask_density, p.seed ^ MASK_SALT)?),
    }
}

fn forward_spec(p: &ProblemSettings, shape: (usize, usize)) -> Result<ForwardSpec> {
    Ok(match p.application {
        Application::Deblur => ForwardSpec::Blur {
            kernel: parse_blur_kernel(&p.blur)?,
            boundary: p.boundary,
        },
        Application::Superres => ForwardSpec::Superres {
            kernel: parse_blur_kernel(&p.blur)?,
            boundary: p.boundary,
            factor: p.factor,
            phase: p.phase,
        },
        Application::Inpaint => ForwardSpec::Inpaint {
            mask: mask_for(p, shape)?,
        },
    })
}

fn load_reference(p: &ProblemSettings, shape: (usize, usize)) -> Result<Option<Image>> {
    let Some(path) = &p.reference else { return Ok(None) };
    let img = load_image(path).with_context(|| "loading the reference image")?;
    if img.shape() != shape {
        bail!(
            "reference {} is {}x{} but the restored image is {}x{}",
            path.display(),
            img.height(),
            img.width(),
            shape.0,
            shape.1
        );
    }
    Ok(Some(img))
}

pub fn build(p: &ProblemSettings) -> Result<Problem> {
    let input = match &p.input {
        Some(path) => load_image(path).with_context(|| "loading the input image")?,
        None if p.measured => bail!("measured mode needs an input image"),
        None => smoothed_noise(p.size, p.size, p.seed),
    };

    if p.measured {
        let shape = match p.application {
            Application::Superres => (input.height() * p.factor, input.width() * p.factor),
            _ => input.shape(),
        };
        if p.application == Application::Inpaint && p.mask.is_none() {
            bail!("measured inpainting needs --mask");
        }
        let spec = forward_spec(p, shape)?;
        let forward = spec.build(shape.0, shape.1)?;
        let y = match p.application {
            Application::Inpaint => forward.apply_forward(&input)?,
            _ => input.into_data(),
        };
        let truth = load_reference(p, shape)?;
        return Ok(Problem {
            spec,
            forward,
            y,
            truth,
            shape,
        });
    }

    let shape = input.shape();
    let spec = forward_spec(p, shape)?;
    let forward = spec.build(shape.0, shape.1)?;
    let y = add_noise(&forward.apply_forward(&input)?, p.sigma, p.seed)?;
    let truth = match load_reference(p, shape)? {
        Some(r) => Some(r),
        None => Some(input),
    };
    Ok(Problem {
        spec,
        forward,
        y,
        truth,
        shape,
    })
}
