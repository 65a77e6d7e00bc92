use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use krs_core::config::ConfigMap;
use krs_core::io::{load_image, save_image, save_mask, BitDepth};
use krs_core::Image;

fn krs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_krs"))
}

fn run(args: &[&str]) -> Output {
    krs().args(args).output().expect("krs runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn camera_crop(dir: &Path, side: usize) -> PathBuf {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/camera_128.pgm");
    let img = load_image(data).unwrap().crop(40, 40, side, side);
    let path = dir.join("crop.pgm");
    save_image(&img, &path, BitDepth::Eight).unwrap();
    path
}

fn metrics(dir: &Path) -> ConfigMap {
    ConfigMap::load(&dir.join("metrics.txt")).unwrap()
}

fn metric(dir: &Path, key: &str) -> f64 {
    metrics(dir).get_parsed(key).unwrap().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parsed telemetry rows: (iteration, residual, objective).
fn telemetry(path: &Path) -> Vec<(usize, f64, Option<f64>)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,residual,objective,psnr,seconds"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5, "{l}");
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().ok())
        })
        .collect()
}

#[test]
fn full_mask_tiny_rho_recovers_input() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 24);
    let mask = tmp.path().join("all_true.pgm");
    save_mask(24, 24, &[true; 576], &mask).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "inpaint",
        "--input",
        s(&input),
        "--mask",
        s(&mask),
        "--sigma",
        "0",
        "--rho",
        "1e-6",
        "--tol",
        "1e-10",
        "--restart",
        "100",
        "--max-iters",
        "3000",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(metric(&out_dir, "psnr") > 60.0);
    for f in ["restored.png", "metrics.txt", "telemetry.csv", "manifest.txt"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let restored = load_image(out_dir.join("restored.png")).unwrap();
    assert_eq!(restored.shape(), (24, 24));
}

#[test]
fn deblur_objective_settles_after_first_restart_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 48);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deblur",
        "--input",
        s(&input),
        "--kernel",
        "gaussian:25:1.6",
        "--sigma",
        "0.0392156862745098",
        "--rho",
        "0.05",
        "--tol",
        "1e-12",
        "--max-iters",
        "120",
        "--telemetry",
        "--output-dir",
        s(&out_dir),
    ]);
    assert!(matches!(code(&out), 0 | 2), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = telemetry(&out_dir.join("telemetry.csv"));
    let restart = 30;
    assert!(rows.len() > restart, "only {} iterations", rows.len());
    let tail: Vec<f64> = rows[restart..]
        .iter()
        .map(|r| r.2.expect("objective recorded"))
        .collect();
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "objective rose from {} to {}", w[0], w[1]);
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["deblur", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn missing_input_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["deblur", "--output-dir", s(tmp.path())]);
    assert_eq!(code(&out), 1);
    let out = run(&[
        "deblur",
        "--input",
        s(&tmp.path().join("nope.png")),
        "--output-dir",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.png"));
}

#[test]
fn non_convergence_exits_2_and_still_writes() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 24);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deblur",
        "--input",
        s(&input),
        "--kernel",
        "gaussian:7:1.5",
        "--sigma",
        "0.02",
        "--max-iters",
        "1",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("restored.png").is_file());
    assert_eq!(metrics(&out_dir).get("converged"), Some("false"));
}

#[test]
fn replay_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 32);
    let first = tmp.path().join("first");
    let out = run(&[
        "superres",
        "--input",
        s(&input),
        "--factor",
        "2",
        "--kernel",
        "gaussian:5:1",
        "--sigma",
        "0.02",
        "--seed",
        "9",
        "--output-dir",
        s(&first),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let second = tmp.path().join("second");
    let out = run(&["replay", s(&first.join("manifest.txt")), "--output-dir", s(&second)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for key in [
        "psnr",
        "ssim",
        "objective",
        "final_relative_residual",
        "iterations",
        "applications.total",
    ] {
        let a = metric(&first, key);
        let b = metric(&second, key);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{key}: {a} vs {b}");
    }
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 16);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# test\nrho = 0.3\nsolver.tolerance = 1e-4\nguide.iterations = 2\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deblur",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--kernel",
        "gaussian:3:1",
        "--rho",
        "0.7",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = ConfigMap::load(&out_dir.join("manifest.txt")).unwrap();
    assert_eq!(m.get("command"), Some("deblur"));
    assert_eq!(m.get("rho"), Some("0.7"));
    assert_eq!(m.get("solver.tolerance"), Some("0.0001"));
    assert_eq!(m.get("guide.iterations"), Some("2"));
    assert_eq!(m.get("solver.restart"), Some("30"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 16);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "rhoo = 0.3\n").unwrap();
    let out = run(&[
        "deblur",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--output-dir",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rhoo"));
}

#[test]
fn measured_deblur_uses_input_as_measurement() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 24);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "deblur",
        "--input",
        s(&input),
        "--measured",
        "--kernel",
        "gaussian:5:1",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // No reference: no quality metrics.
    assert!(metrics(&out_dir).get("psnr").is_none());
}

#[test]
fn compare_solvers_agree_and_write_one_csv_each() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("cmp");
    let out = run(&[
        "compare-solvers",
        "--size",
        "20",
        "--kernel",
        "gaussian:7:1.2",
        "--sigma",
        "0.02",
        "--rho",
        "0.3",
        "--solvers",
        "gmres-restarted,gmres-augmented,broyden,pnp-admm",
        "--tol",
        "1e-10",
        "--max-iters",
        "500",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let mut finals = Vec::new();
    for m in ["gmres-restarted", "gmres-augmented", "broyden", "pnp-admm"] {
        let rows = telemetry(&out_dir.join(format!("telemetry_{m}.csv")));
        finals.push(rows.last().unwrap().2.unwrap());
    }
    let best = finals.iter().copied().fold(f64::INFINITY, f64::min);
    for f in finals {
        assert!((f - best).abs() <= 1e-4 * best.abs());
    }
    let table = std::fs::read_to_string(out_dir.join("comparison.txt")).unwrap();
    assert!(table.starts_with("method"));
    assert_eq!(table.lines().filter(|l| l.contains("converged")).count(), 4);
}

#[test]
fn single_solver_comparison_matches_restore_telemetry() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 20);
    let common = [
        "--input",
        s(&input),
        "--kernel",
        "gaussian:5:1",
        "--sigma",
        "0.02",
        "--seed",
        "3",
    ];
    let a = tmp.path().join("a");
    let out = krs()
        .arg("compare-solvers")
        .args(common)
        .args(["--solvers", "gmres-restarted", "--output-dir", s(&a)])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let b = tmp.path().join("b");
    let out = krs()
        .arg("deblur")
        .args(common)
        .args(["--telemetry", "--output-dir", s(&b)])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let ra = telemetry(&a.join("telemetry_gmres-restarted.csv"));
    let rb = telemetry(&b.join("telemetry.csv"));
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() <= 1e-12 * x.1.max(1e-300));
        assert!((x.2.unwrap() - y.2.unwrap()).abs() <= 1e-12 * x.2.unwrap().abs());
    }
}

#[test]
fn compare_rejects_empty_list_and_cg_on_c_form() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&[
            "compare-solvers",
            "--solvers",
            "",
            "--output-dir",
            s(tmp.path())
        ])),
        1
    );
    assert_eq!(
        code(&run(&[
            "compare-solvers",
            "--solvers",
            "cg",
            "--size",
            "8",
            "--output-dir",
            s(tmp.path())
        ])),
        1
    );
    assert_eq!(
        code(&run(&[
            "compare-solvers",
            "--preset",
            "nope",
            "--output-dir",
            s(tmp.path())
        ])),
        1
    );
}

#[test]
fn verify_default_run_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--output-dir", s(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(tmp.path().join("verify_report.txt")).unwrap();
    assert!(report.lines().count() >= 10);
    assert!(report.lines().all(|l| l.contains("status=pass")), "{report}");
}

#[test]
fn verify_zero_trials_warns_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--trials", "0", "--output-dir", s(tmp.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn verify_catches_unnormalized_w() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        "--trials",
        "3",
        "--inject-fault",
        "unnormalized-w",
        "--output-dir",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 3);
    let report = std::fs::read_to_string(tmp.path().join("verify_report.txt")).unwrap();
    assert!(report.contains("status=fail counterexample="), "{report}");
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = krs()
        .env("KRS_THREADS", "1")
        .args(["verify", "--trials", "1", "--output-dir", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(code(&ok), 0);
    let bad = krs()
        .env("KRS_THREADS", "0")
        .args(["verify", "--trials", "1", "--output-dir", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn written_image_matches_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let input = camera_crop(tmp.path(), 20);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "inpaint",
        "--input",
        s(&input),
        "--mask-density",
        "0.5",
        "--sigma",
        "0",
        "--output",
        "r.pgm",
        "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let restored = load_image(out_dir.join("r.pgm")).unwrap();
    let truth = load_image(&input).unwrap();
    let p = krs_core::metrics::psnr(&truth, &restored).unwrap();
    // 8-bit quantization of the output costs at most a few hundredths of a dB here.
    assert!((p - metric(&out_dir, "psnr")).abs() < 0.5);
    let _: Image = restored;
}
