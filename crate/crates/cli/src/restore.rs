//! `deblur`, `superres` and `inpaint`.

use anyhow::Result;
use krs_core::config::ConfigMap;
use krs_core::io::{save_image, BitDepth};
use krs_core::metrics::{psnr, ssim};
use krs_core::pipeline::{restore_with, PipelineConfig, RestoreOptions};
use krs_core::system::Objective;

use crate::manifest::{write_text, RunManifest};
use crate::problem::{self, Problem};
use crate::settings::RestoreSettings;
use crate::Status;

pub const METRICS_FILE: &str = "metrics.txt";
pub const TELEMETRY_FILE: &str = "telemetry.csv";

pub fn pipeline_config(s: &RestoreSettings, problem: &Problem) -> PipelineConfig {
    let mut c = PipelineConfig::new(problem.spec.clone());
    c.kernel = s.denoiser;
    c.rho = s.rho;
    c.guide_iterations = s.guide_iterations;
    c.guide_algorithm = s.guide_algorithm;
    c.guide_denoiser = s.guide_denoiser;
    c.guide_rho = s.guide_rho;
    c.guide_refresh = s.guide_refresh;
    c.solver = s.solver.clone();
    c.form = s.form;
    c.seed = s.problem.seed;
    c
}

pub fn run(command: &str, s: &RestoreSettings) -> Result<Status> {
    let problem = problem::build(&s.problem)?;
    let config = pipeline_config(s, &problem);
    let options = RestoreOptions {
        truth: problem.truth.as_ref(),
        telemetry: s.telemetry,
    };
    log::info!("restoring a {}x{} image ({command})", problem.shape.0, problem.shape.1);
    let out = restore_with(&problem.forward, &problem.y, &config, options)?;
    let objective = Objective {
        forward: &problem.forward,
        denoiser: &out.denoiser,
        rho: s.rho,
        y: &problem.y,
    }
    .eval(&out.z)
    .0;

    let report = &out.report;
    let mut metrics = ConfigMap::new();
    metrics.set("method", &report.method);
    metrics.set("converged", report.converged);
    metrics.set("stop_reason", report.stop_reason.name());
    metrics.set("iterations", report.iterations);
    metrics.set("final_relative_residual", report.final_relative_residual);
    metrics.set("objective", objective);
    metrics.set("applications.guide", out.work.guide.total());
    metrics.set("applications.solve", out.work.solve.total());
    metrics.set("applications.total", out.work.total());
    metrics.set("seconds.guide", out.timings.guide);
    metrics.set("seconds.denoiser", out.timings.denoiser);
    metrics.set("seconds.solve", out.timings.solve);
    let quality = match &problem.truth {
        Some(truth) => {
            let p = psnr(truth, &out.image)?;
            let q = ssim(truth, &out.image)?;
            metrics.set("psnr", p);
            metrics.set("ssim", q);
            format!(", PSNR {p:.2} dB, SSIM {q:.4}")
        }
        None => String::new(),
    };

    let dir = &s.output_dir;
    std::fs::create_dir_all(dir)?;
    let image_path = dir.join(&s.output);
    save_image(&out.image, &image_path, BitDepth::Eight)?;
    write_text(dir, METRICS_FILE, &metrics.to_text())?;
    write_text(dir, TELEMETRY_FILE, &report.to_csv())?;
    let mut resolved = ConfigMap::new();
    s.write(&mut resolved);
    RunManifest::new(command, resolved).save(dir)?;

    say!(
        "{command}: {} {} after {} iterations (residual {:.2e}), {} operator applications{quality}\n",
        report.method,
        if report.converged {
            "converged"
        } else {
            "did not converge"
        },
        report.iterations,
        report.final_relative_residual,
        out.work.total(),
    );
    say!("wrote {}\n", image_path.display());
    Ok(if report.converged {
        Status::Success
    } else {
        Status::NotConverged
    })
}
