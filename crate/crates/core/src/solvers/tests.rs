use super::*;
use crate::denoiser::{KernelConfig, KernelDenoiser};
use crate::forward::{gaussian_kernel, Boundary, ForwardModel};
use crate::image::Image;
use crate::operator::DenseOperator;
use crate::system::{SystemForm, SystemOperator};
use crate::vecops::{max_abs_diff, norm, sub};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rvec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn true_relative_residual(op: &dyn LinearOperator, x: &[f64], b: &[f64]) -> f64 {
    norm(&sub(&op.apply(x), b)) / norm(b)
}

fn inpaint_instance(n: usize, seed: u64) -> (ForwardModel, KernelDenoiser, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guide = Image::from_fn(n, n, |_, _| rng.random::<f64>());
    let mask: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() < 0.5).collect();
    let fwd = ForwardModel::inpaint(n, n, mask).unwrap();
    let den = KernelDenoiser::build(
        &guide,
        KernelConfig {
            patch_radius: 1,
            search_radius: 2,
            intensity_bandwidth: 0.3,
            ..KernelConfig::default()
        },
    )
    .unwrap();
    let y = rvec(fwd.output_len(), &mut rng);
    (fwd, den, y)
}

#[test]
fn identity_converges_in_one_iteration() {
    let op = DenseOperator::symmetric(DMatrix::identity(20, 20));
    let b: Vec<f64> = (0..20).map(|i| i as f64 + 1.0).collect();
    for method in SolverMethod::all() {
        let sol = solve(&op, &b, &SolverConfig::with_method(method), None).unwrap();
        assert!(sol.report.converged, "{method}");
        assert!(sol.report.iterations <= 1, "{method}: {}", sol.report.iterations);
        assert!(max_abs_diff(&sol.x, &b) < 1e-12);
    }
}

#[test]
fn dense_inpainting_matches_lu() {
    let (fwd, den, y) = inpaint_instance(10, 1);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.3).unwrap();
    let d = op.rhs(&y).unwrap();
    let c = crate::operator::materialize(&op, 4096).unwrap();
    let z_ref = c.lu().solve(&DVector::from_column_slice(&d)).unwrap();
    for method in [
        SolverMethod::GmresRestarted,
        SolverMethod::GmresAugmented,
        SolverMethod::Broyden,
    ] {
        let cfg = SolverConfig {
            method,
            tolerance: 1e-12,
            max_iterations: 1000,
            ..SolverConfig::default()
        };
        let sol = solve(&op, &d, &cfg, None).unwrap();
        let err = norm(&sub(&sol.x, z_ref.as_slice())) / z_ref.norm();
        assert!(err < 1e-7, "{method}: {err}");
    }
    let a_op = SystemOperator::new(SystemForm::AForm, &fwd, &den, 0.3).unwrap();
    let b = a_op.rhs(&y).unwrap();
    let cfg = SolverConfig {
        method: SolverMethod::Cg,
        tolerance: 1e-13,
        max_iterations: 2000,
        ..SolverConfig::default()
    };
    let sol = solve(&a_op, &b, &cfg, None).unwrap();
    let err = norm(&sub(&sol.x, z_ref.as_slice())) / z_ref.norm();
    assert!(err < 1e-7, "cg: {err}");
}

#[test]
fn exact_termination_on_distinct_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values = [0.5, 1.0, 2.0, 3.5, 7.0];
    let n = 40;
    let diag: Vec<f64> = (0..n).map(|i| values[i % values.len()]).collect();
    let op = DenseOperator::symmetric(DMatrix::from_diagonal(&DVector::from_vec(diag)));
    let b = rvec(n, &mut rng);
    let cfg = SolverConfig {
        tolerance: 1e-10,
        ..SolverConfig::default()
    };
    let sol = solve(&op, &b, &cfg, None).unwrap();
    let fifth = sol.report.records.iter().find(|r| r.iteration == values.len()).unwrap();
    assert!(fifth.residual / norm(&b) <= 1e-10, "{}", fifth.residual);
    assert!(sol.report.iterations <= values.len());
}

#[test]
fn full_restart_terminates_within_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 12;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { 0.0 } + rng.random::<f64>() - 0.5);
    let op = DenseOperator::new(m);
    let b = rvec(n, &mut rng);
    let cfg = SolverConfig {
        restart_length: n,
        tolerance: 1e-10,
        ..SolverConfig::default()
    };
    let sol = solve(&op, &b, &cfg, None).unwrap();
    assert!(sol.report.converged);
    assert!(sol.report.iterations <= n);
}

#[test]
fn broyden_well_conditioned_12x12() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 12;
    let m = DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 4.0 } else { 0.0 } + 0.6 * (rng.random::<f64>() - 0.5),
    );
    let op = DenseOperator::new(m);
    let b = rvec(n, &mut rng);
    let cfg = SolverConfig {
        method: SolverMethod::Broyden,
        tolerance: 1e-8,
        max_iterations: 5 * n,
        ..SolverConfig::default()
    };
    let sol = solve(&op, &b, &cfg, None).unwrap();
    assert!(sol.report.converged, "{}", sol.report.final_relative_residual);
    assert!(sol.report.iterations <= 5 * n);
}

#[test]
fn residual_monotone_within_cycles_and_certified() {
    let (fwd, den, y) = inpaint_instance(12, 5);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
    let d = op.rhs(&y).unwrap();
    for method in SolverMethod::all() {
        let (op, d): (Box<dyn LinearOperator>, Vec<f64>) = if method == SolverMethod::Cg {
            let a = SystemOperator::new(SystemForm::AForm, &fwd, &den, 0.05).unwrap();
            let b = a.rhs(&y).unwrap();
            (Box::new(a), b)
        } else {
            (
                Box::new(SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap()),
                d.clone(),
            )
        };
        let cfg = SolverConfig {
            method,
            restart_length: 7,
            max_iterations: 60,
            tolerance: 1e-9,
            ..SolverConfig::default()
        };
        let sol = solve(op.as_ref(), &d, &cfg, None).unwrap();
        let recomputed = true_relative_residual(op.as_ref(), &sol.x, &d);
        assert!(
            (recomputed - sol.report.final_relative_residual).abs() <= 1e-12,
            "{method}: {recomputed} vs {}",
            sol.report.final_relative_residual
        );
        if matches!(method, SolverMethod::GmresRestarted) {
            for cycle in sol.report.records.chunks(7) {
                for w in cycle.windows(2) {
                    assert!(w[1].residual <= w[0].residual * (1.0 + 1e-12));
                }
            }
        }
    }
    let _ = op;
}

#[test]
fn augmented_not_slower_than_plain_restarts() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let guide = Image::from_fn(24, 24, |_, _| rng.random::<f64>());
    let fwd = ForwardModel::blur(24, 24, gaussian_kernel(7, 1.6), Boundary::Circular).unwrap();
    let den = KernelDenoiser::build(
        &guide,
        KernelConfig {
            patch_radius: 1,
            search_radius: 3,
            intensity_bandwidth: 0.2,
            ..Default::default()
        },
    )
    .unwrap();
    let y = rvec(fwd.output_len(), &mut rng);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
    let d = op.rhs(&y).unwrap();
    let base = SolverConfig {
        restart_length: 5,
        max_iterations: 2000,
        tolerance: 1e-8,
        ..Default::default()
    };
    let plain = solve(&op, &d, &base, None).unwrap();
    let aug = solve(
        &op,
        &d,
        &SolverConfig {
            method: SolverMethod::GmresAugmented,
            ..base.clone()
        },
        None,
    )
    .unwrap();
    assert!(plain.report.converged && aug.report.converged);
    assert!(
        aug.report.matvecs <= plain.report.matvecs,
        "{} vs {}",
        aug.report.matvecs,
        plain.report.matvecs
    );
}

#[test]
fn cg_on_c_form_is_config_error() {
    let (fwd, den, y) = inpaint_instance(6, 7);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
    let d = op.rhs(&y).unwrap();
    let err = solve(&op, &d, &SolverConfig::with_method(SolverMethod::Cg), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(solver_shootout(&op, &d, &SolverMethod::all(), &SolverConfig::default(), None).is_err());
}

struct Poisoned;
impl LinearOperator for Poisoned {
    fn input_len(&self) -> usize {
        4
    }
    fn output_len(&self) -> usize {
        4
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = if *v != 0.0 { f64::NAN } else { 0.0 };
        }
    }
}

#[test]
fn non_finite_iterate_names_iteration() {
    let err = solve(&Poisoned, &[1.0; 4], &SolverConfig::default(), None).unwrap_err();
    match err {
        Error::Breakdown { iteration, .. } => assert_eq!(iteration, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_convergence_returns_best_iterate() {
    let (fwd, den, y) = inpaint_instance(10, 8);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
    let d = op.rhs(&y).unwrap();
    let cfg = SolverConfig {
        max_iterations: 3,
        tolerance: 1e-14,
        ..Default::default()
    };
    let sol = solve(&op, &d, &cfg, None).unwrap();
    assert!(!sol.report.converged);
    assert_eq!(sol.report.stop_reason, StopReason::MaxIterations);
    assert!(sol.report.final_relative_residual < 1.0);
    assert_eq!(sol.report.iterations, 3);
}

#[test]
fn budget_mode_stops_at_operator_count() {
    let (fwd, den, y) = inpaint_instance(10, 9);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.05).unwrap();
    let d = op.rhs(&y).unwrap();
    let cfg = SolverConfig {
        max_operator_applications: Some(15),
        tolerance: 1e-14,
        ..Default::default()
    };
    let sol = solve(&op, &d, &cfg, None).unwrap();
    assert_eq!(sol.report.stop_reason, StopReason::Budget);
    // five products of three primitive applications, plus the closing residual
    assert_eq!(sol.report.iterations, 5);
    assert_eq!(sol.report.operator_applications, 18);
}

#[test]
fn config_validation_and_parsing() {
    assert!(SolverConfig {
        restart_length: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(SolverConfig {
        tolerance: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    for m in SolverMethod::all() {
        assert_eq!(m.name().parse::<SolverMethod>().unwrap(), m);
    }
    assert!("qmr".parse::<SolverMethod>().is_err());
    let op = DenseOperator::new(DMatrix::identity(3, 3));
    let cfg = SolverConfig {
        initial_guess: InitialGuess::Provided(vec![0.0; 2]),
        ..Default::default()
    };
    assert!(solve(&op, &[1.0; 3], &cfg, None).is_err());
    assert!(solve(&op, &[1.0; 2], &SolverConfig::default(), None).is_err());
}

#[test]
fn zero_rhs_gives_zero() {
    let op = DenseOperator::new(DMatrix::identity(3, 3));
    let cfg = SolverConfig {
        initial_guess: InitialGuess::Provided(vec![1.0; 3]),
        ..Default::default()
    };
    let sol = solve(&op, &[0.0; 3], &cfg, None).unwrap();
    assert!(sol.report.converged);
    assert_eq!(sol.x, vec![0.0; 3]);
}

#[test]
fn csv_export_schema() {
    let op = DenseOperator::new(DMatrix::identity(3, 3) * 2.0);
    let sol = solve(&op, &[1.0, 2.0, 3.0], &SolverConfig::default(), None).unwrap();
    let csv = sol.report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,residual,objective,psnr,seconds"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 5);
    assert_eq!(row[0], "1");
}

#[test]
fn shootout_methods_agree() {
    let (fwd, den, y) = inpaint_instance(10, 10);
    let op = SystemOperator::new(SystemForm::CForm, &fwd, &den, 0.1).unwrap();
    let d = op.rhs(&y).unwrap();
    let obj = crate::system::Objective {
        forward: &fwd,
        denoiser: &den,
        rho: 0.1,
        y: &y,
    };
    let monitor = crate::system::SystemMonitor {
        objective: obj,
        truth: None,
    };
    let methods = [
        SolverMethod::GmresRestarted,
        SolverMethod::GmresAugmented,
        SolverMethod::Broyden,
    ];
    let base = SolverConfig {
        tolerance: 1e-10,
        max_iterations: 1000,
        ..Default::default()
    };
    let entries = solver_shootout(&op, &d, &methods, &base, Some(&monitor)).unwrap();
    let objectives: Vec<f64> = entries
        .iter()
        .map(|e| e.outcome.as_ref().unwrap().report.final_objective().unwrap())
        .collect();
    for o in &objectives {
        assert!((o - objectives[0]).abs() <= 1e-5 * objectives[0].abs());
    }
    let table = comparison_table(&entries);
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("gmres-augmented"));
}
