//! Iterative solvers for `C z = d` (non-symmetric) and `A z = b` (symmetric).

mod broyden;
mod cg;
mod gmres;

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::operator::{LinearOperator, WorkCount};
use crate::system::Monitor;
use crate::vecops::{all_finite, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    GmresRestarted,
    /// Restarted GMRES that carries recent correction directions across
    /// restarts as extra search vectors.
    GmresAugmented,
    Broyden,
    /// Conjugate gradients; symmetric operators only.
    Cg,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::GmresRestarted => "gmres-restarted",
            SolverMethod::GmresAugmented => "gmres-augmented",
            SolverMethod::Broyden => "broyden",
            SolverMethod::Cg => "cg",
        }
    }

    pub fn all() -> [SolverMethod; 4] {
        [
            SolverMethod::GmresRestarted,
            SolverMethod::GmresAugmented,
            SolverMethod::Broyden,
            SolverMethod::Cg,
        ]
    }
}

impl std::fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmres-restarted" | "gmres" => Ok(SolverMethod::GmresRestarted),
            "gmres-augmented" | "lgmres" => Ok(SolverMethod::GmresAugmented),
            "broyden" => Ok(SolverMethod::Broyden),
            "cg" => Ok(SolverMethod::Cg),
            _ => Err(Error::Config(format!("unknown solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialGuess {
    #[default]
    Zero,
    /// Start from the right-hand side itself.
    Rhs,
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Cap on iterations that apply the operator.
    pub max_iterations: usize,
    pub restart_length: usize,
    /// Number of carried vectors for `GmresAugmented`.
    pub augmentation: usize,
    pub tolerance: f64,
    pub initial_guess: InitialGuess,
    /// Stop once this many primitive operator applications were spent
    /// (operators that do not count work fall back to counting products).
    pub max_operator_applications: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::GmresRestarted,
            max_iterations: 200,
            restart_length: 30,
            augmentation: 3,
            tolerance: 1e-6,
            initial_guess: InitialGuess::Zero,
            max_operator_applications: None,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: SolverMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restart_length == 0 {
            return Err(Error::Config("restart_length must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    Budget,
    /// The method can make no further progress (e.g. a singular direction).
    Stagnated,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Budget => "budget",
            StopReason::Stagnated => "stagnated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    pub objective: Option<f64>,
    pub psnr: Option<f64>,
    pub seconds: f64,
    /// Cumulative primitive operator applications at this point.
    pub operator_applications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: String,
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub final_relative_residual: f64,
    /// Products with the system operator.
    pub matvecs: usize,
    pub operator_applications: usize,
    pub work: Option<WorkCount>,
    pub seconds: f64,
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "iteration,residual,objective,psnr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.12e},{},{},{:.6}",
                r.iteration,
                r.residual,
                csv_opt(r.objective),
                csv_opt(r.psnr),
                r.seconds
            );
        }
        s
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.objective)
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.psnr)
    }

    /// Operator applications spent before the objective first came within
    /// `gap` (relative) of `reference`.
    pub fn applications_to_gap(&self, reference: f64, gap: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| {
                r.objective
                    .is_some_and(|o| (o - reference).abs() <= gap * reference.abs())
            })
            .map(|r| r.operator_applications)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub report: SolveReport,
}

/// Shared bookkeeping for the individual methods.
pub(crate) struct Tracker<'a> {
    op: &'a dyn LinearOperator,
    monitor: Option<&'a dyn Monitor>,
    start: Instant,
    start_work: Option<WorkCount>,
    budget: Option<usize>,
    pub matvecs: usize,
    pub records: Vec<IterationRecord>,
    best: Option<(f64, Vec<f64>)>,
}

impl<'a> Tracker<'a> {
    pub(crate) fn new(op: &'a dyn LinearOperator, monitor: Option<&'a dyn Monitor>, budget: Option<usize>) -> Self {
        Self {
            op,
            monitor,
            start: Instant::now(),
            start_work: op.work(),
            budget,
            matvecs: 0,
            records: Vec::new(),
            best: None,
        }
    }

    pub(crate) fn has_monitor(&self) -> bool {
        self.monitor.is_some()
    }

    pub(crate) fn applications(&self) -> usize {
        match (self.op.work(), self.start_work) {
            (Some(now), Some(start)) => (now - start).total(),
            _ => self.matvecs,
        }
    }

    pub(crate) fn budget_exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.applications() >= b)
    }

    pub(crate) fn matvec(&mut self, x: &[f64], iteration: usize) -> Result<Vec<f64>> {
        let out = self.op.apply(x);
        self.matvecs += 1;
        if !all_finite(&out) {
            return Err(Error::Breakdown {
                iteration,
                reason: "operator product is not finite".into(),
            });
        }
        Ok(out)
    }

    /// `b − op(x)`.
    pub(crate) fn residual(&mut self, b: &[f64], x: &[f64], iteration: usize) -> Result<Vec<f64>> {
        let ax = self.matvec(x, iteration)?;
        Ok(sub(b, &ax))
    }

    pub(crate) fn record(&mut self, iteration: usize, iterate: Option<&[f64]>, residual: f64) -> Result<()> {
        if !residual.is_finite() || iterate.is_some_and(|x| !all_finite(x)) {
            return Err(Error::Breakdown {
                iteration,
                reason: "iterate or residual is not finite".into(),
            });
        }
        let metrics = match (self.monitor, iterate) {
            (Some(m), Some(x)) => m.observe(x),
            _ => Default::default(),
        };
        self.records.push(IterationRecord {
            iteration,
            residual,
            objective: metrics.objective,
            psnr: metrics.psnr,
            seconds: self.start.elapsed().as_secs_f64(),
            operator_applications: self.applications(),
        });
        Ok(())
    }

    /// Remembers `x` if its true residual is the smallest seen.
    pub(crate) fn offer_best(&mut self, residual: f64, x: &[f64]) {
        if self.best.as_ref().is_none_or(|(r, _)| residual < *r) {
            self.best = Some((residual, x.to_vec()));
        }
    }

    pub(crate) fn take_best(&mut self) -> Option<(f64, Vec<f64>)> {
        self.best.take()
    }
}

/// Outcome of a method before the common report is assembled.
pub(crate) struct Finish {
    pub x: Vec<f64>,
    /// `‖b − op(x)‖`, computed from a true product.
    pub residual: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

fn initial_guess(config: &SolverConfig, rhs: &[f64]) -> Result<Vec<f64>> {
    match &config.initial_guess {
        InitialGuess::Zero => Ok(vec![0.0; rhs.len()]),
        InitialGuess::Rhs => Ok(rhs.to_vec()),
        InitialGuess::Provided(v) => {
            check_len(rhs.len(), v.len())?;
            if !all_finite(v) {
                return Err(Error::Input("initial guess is not finite".into()));
            }
            Ok(v.clone())
        }
    }
}

/// Solves `op(x) = rhs`. A monitor, when given, is consulted at every
/// iteration for the objective and PSNR columns of the report.
pub fn solve(
    op: &dyn LinearOperator,
    rhs: &[f64],
    config: &SolverConfig,
    monitor: Option<&dyn Monitor>,
) -> Result<Solution> {
    config.validate()?;
    check_len(op.input_len(), rhs.len())?;
    check_len(op.output_len(), rhs.len())?;
    if !all_finite(rhs) {
        return Err(Error::Input("right-hand side is not finite".into()));
    }
    if config.method == SolverMethod::Cg && !op.is_symmetric() {
        return Err(Error::Config(
            "cg requires a symmetric operator; use the A-form system".into(),
        ));
    }
    let x0 = initial_guess(config, rhs)?;
    let mut tracker = Tracker::new(op, monitor, config.max_operator_applications);
    let bnorm = norm(rhs);
    let finish = if bnorm == 0.0 {
        // x = 0 solves the system exactly.
        tracker.record(0, Some(&vec![0.0; rhs.len()]), 0.0)?;
        Finish {
            x: vec![0.0; rhs.len()],
            residual: 0.0,
            iterations: 0,
            reason: StopReason::Converged,
        }
    } else {
        match config.method {
            SolverMethod::GmresRestarted => gmres::run(&mut tracker, rhs, x0, config, 0)?,
            SolverMethod::GmresAugmented => gmres::run(&mut tracker, rhs, x0, config, config.augmentation)?,
            SolverMethod::Broyden => broyden::run(&mut tracker, rhs, x0, config)?,
            SolverMethod::Cg => cg::run(&mut tracker, rhs, x0, config)?,
        }
    };
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let final_relative_residual = finish.residual / scale;
    let converged = final_relative_residual <= config.tolerance;
    let stop_reason = if converged {
        StopReason::Converged
    } else {
        finish.reason
    };
    let work = match (op.work(), tracker.start_work) {
        (Some(now), Some(start)) => Some(now - start),
        _ => None,
    };
    let report = SolveReport {
        method: config.method.name().to_string(),
        iterations: finish.iterations,
        converged,
        stop_reason,
        final_relative_residual,
        matvecs: tracker.matvecs,
        operator_applications: tracker.applications(),
        work,
        seconds: tracker.start.elapsed().as_secs_f64(),
        records: std::mem::take(&mut tracker.records),
    };
    Ok(Solution { x: finish.x, report })
}

/// One row of a solver comparison.
#[derive(Debug)]
pub struct ShootoutEntry {
    pub method: SolverMethod,
    pub outcome: Result<Solution>,
}

/// Runs every method on the same operator, right-hand side and initial
/// guess. Methods share `base` except for `method`.
pub fn solver_shootout(
    op: &dyn LinearOperator,
    rhs: &[f64],
    methods: &[SolverMethod],
    base: &SolverConfig,
    monitor: Option<&dyn Monitor>,
) -> Result<Vec<ShootoutEntry>> {
    for &m in methods {
        if m == SolverMethod::Cg && !op.is_symmetric() {
            return Err(Error::Config(
                "cg requires a symmetric operator; use the A-form system".into(),
            ));
        }
    }
    Ok(methods
        .iter()
        .map(|&method| {
            let cfg = SolverConfig { method, ..base.clone() };
            ShootoutEntry {
                method,
                outcome: solve(op, rhs, &cfg, monitor),
            }
        })
        .collect())
}

/// Plain-text table: iterations, operator applications, time and final
/// residual/objective per method.
pub fn comparison_table(entries: &[ShootoutEntry]) -> String {
    let mut s = format!(
        "{:<16} {:>10} {:>12} {:>10} {:>12} {:>16} {:>9}\n",
        "method", "iterations", "applications", "seconds", "residual", "objective", "converged"
    );
    for e in entries {
        match &e.outcome {
            Ok(sol) => {
                let r = &sol.report;
                let _ = writeln!(
                    s,
                    "{:<16} {:>10} {:>12} {:>10.3} {:>12.3e} {:>16} {:>9}",
                    e.method.name(),
                    r.iterations,
                    r.operator_applications,
                    r.seconds,
                    r.final_relative_residual,
                    r.final_objective()
                        .map(|o| format!("{o:.10e}"))
                        .unwrap_or_else(|| "-".into()),
                    r.converged
                );
            }
            Err(err) => {
                let _ = writeln!(s, "{:<16} error: {err}", e.method.name());
            }
        }
    }
    s
}

#[cfg(test)]
mod tests;
