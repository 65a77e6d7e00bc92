//! `compare-solvers`: every selected method on one problem.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use krs_core::config::ConfigMap;
use krs_core::pipeline::build_guide;
use krs_core::pnp::{pnp_run, PnpConfig, PnpProblem};
use krs_core::solvers::{solve, SolveReport};
use krs_core::system::{Objective, SystemMonitor};
use krs_core::{KernelDenoiser, SolverConfig, SolverMethod, SystemForm, SystemOperator};

use crate::manifest::{write_text, RunManifest};
use crate::problem;
use crate::restore::pipeline_config;
use crate::settings::{CompareSettings, Method};
use crate::Status;

pub const TABLE_FILE: &str = "comparison.txt";
/// Relative spread of final objectives accepted as agreement.
pub const AGREEMENT: f64 = 1e-4;

struct Row {
    method: Method,
    report: SolveReport,
    diverged: bool,
}

pub fn run(s: &CompareSettings) -> Result<Status> {
    let r = &s.restore;
    if r.form == SystemForm::CForm && s.methods.contains(&Method::Linear(SolverMethod::Cg)) {
        bail!("cg needs the symmetric A-form system; pass --form a");
    }
    let problem = problem::build(&r.problem)?;
    let config = pipeline_config(r, &problem);
    config.validate()?;
    let guide = build_guide(&problem.y, &problem.forward, &config)?;
    let denoiser = KernelDenoiser::build(&guide.image, r.denoiser)?;
    let op = SystemOperator::new(r.form, &problem.forward, &denoiser, r.rho)?;
    let rhs = op.rhs(&problem.y)?;
    let monitor = SystemMonitor {
        objective: Objective {
            forward: &problem.forward,
            denoiser: &denoiser,
            rho: r.rho,
            y: &problem.y,
        },
        truth: problem.truth.as_ref(),
    };
    let pnp = PnpProblem::new(&problem.forward, &denoiser, &problem.y)?;

    let mut rows = Vec::new();
    for &method in &s.methods {
        log::info!("running {}", method.name());
        let row = match method {
            Method::Linear(m) => {
                let config = SolverConfig {
                    method: m,
                    ..r.solver.clone()
                };
                let report = solve(&op, &rhs, &config, Some(&monitor))?.report;
                Row {
                    method,
                    report,
                    diverged: false,
                }
            }
            Method::Pnp(alg) => {
                let out = pnp_run(&pnp, &PnpConfig::new(alg, r.rho, s.pnp_iterations), Some(&monitor))?;
                Row {
                    method,
                    report: out.report,
                    diverged: out.diverged,
                }
            }
        };
        write_text(
            &r.output_dir,
            &format!("telemetry_{}.csv", method.name()),
            &row.report.to_csv(),
        )?;
        rows.push(row);
    }

    let finals: Vec<f64> = rows
        .iter()
        .filter(|row| row.report.converged && !row.diverged)
        .filter_map(|row| row.report.final_objective())
        .collect();
    let best = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = finals
        .iter()
        .map(|o| (o - best).abs() / best.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let linear_failed = rows
        .iter()
        .any(|row| matches!(row.method, Method::Linear(_)) && !row.report.converged);

    let table = render(&rows);
    let mut summary = table.clone();
    let _ = writeln!(
        summary,
        "\nobjective spread over {} convergent methods: {spread:.3e} (agreement threshold {AGREEMENT:.0e})",
        finals.len()
    );
    write_text(&r.output_dir, TABLE_FILE, &summary)?;
    let mut resolved = ConfigMap::new();
    s.write(&mut resolved);
    RunManifest::new("compare-solvers", resolved).save(&r.output_dir)?;
    say!("{summary}");

    if linear_failed || finals.is_empty() || spread > AGREEMENT {
        Ok(Status::NotConverged)
    } else {
        Ok(Status::Success)
    }
}

fn render(rows: &[Row]) -> String {
    let mut s = format!(
        "{:<16} {:>10} {:>12} {:>9} {:>11} {:>20} {:>8}  {}\n",
        "method", "iterations", "applications", "seconds", "residual", "objective", "psnr", "status"
    );
    for row in rows {
        let r = &row.report;
        let status = if row.diverged {
            "diverged"
        } else if r.converged {
            "converged"
        } else {
            r.stop_reason.name()
        };
        let fmt_opt = |v: Option<f64>, p: usize| match v {
            None => "-".to_string(),
            Some(x) if x.abs() >= 1e6 => format!("{x:.4e}"),
            Some(x) => format!("{x:.p$}"),
        };
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>12} {:>9.2} {:>11.3e} {:>20} {:>8}  {status}",
            row.method.name(),
            r.iterations,
            r.operator_applications,
            r.seconds,
            r.final_relative_residual,
            fmt_opt(r.final_objective(), 10),
            fmt_opt(r.final_psnr(), 2),
        );
    }
    s
}
