//! Randomized checks of the linear-algebra facts the regularizer relies on:
//! null/range relations for sums of PSD matrices, complements of nested
//! subspaces, and first-order optimality of a quadratic on a subspace.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PropertyResult, VerifyReport};

const TOL: f64 = 1e-8;

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let normal = rand_distr::StandardNormal;
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(normal))
}

/// Splits the eigenvectors of a symmetric PSD matrix into range and null
/// bases using a relative eigenvalue threshold.
fn range_null(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(s.clone());
    let lmax = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let (mut range, mut null) = (Vec::new(), Vec::new());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let col = eig.eigenvectors.column(k).into_owned();
        if l > 1e-10 * lmax {
            range.push(col);
        } else {
            null.push(col);
        }
    }
    let n = s.nrows();
    let stack = |v: Vec<DVector<f64>>| {
        if v.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&v)
        }
    };
    (stack(range), stack(null))
}

fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (range, _) = range_null(&(a * a.transpose()));
    range
}

/// Relative size of the part of `x`'s columns outside the span of the
/// orthonormal `basis`.
fn outside(basis: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let scale = x.norm().max(f64::MIN_POSITIVE);
    let proj = basis * (basis.transpose() * x);
    (x - proj).norm() / scale
}

/// Runs every subspace property over `trials` random instances of size `n`.
pub fn verify_subspace_facts(trials: usize, n: usize, seed: u64) -> VerifyReport {
    let mut null_sum = PropertyResult::new("psd-sum-null-space", TOL);
    let mut range_sum = PropertyResult::new("psd-sum-range", TOL);
    let mut nested = PropertyResult::new("nested-subspace-complements", TOL);
    let mut first_order = PropertyResult::new("subspace-first-order-condition", TOL);
    let mut gd_agree = PropertyResult::new("subspace-minimizer-vs-descent", 1e-6);
    let n = n.max(3);

    for trial in 0..trials {
        let tseed = seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(tseed);
        let tag = |what: &str| format!("{what} trial={trial} seed={tseed} n={n}");

        // PSD pair, rank deficient, sometimes sharing directions.
        let ka = rng.random_range(1..n);
        let kb = rng.random_range(1..n);
        let ga = gaussian_matrix(&mut rng, n, ka);
        let mut gb = gaussian_matrix(&mut rng, n, kb);
        if trial % 2 == 0 {
            let shared = ka.min(kb);
            let pick = rng.random_range(0..shared) + 1;
            for j in 0..pick {
                gb.set_column(j, &ga.column(j));
            }
        }
        let a = &ga * ga.transpose();
        let b = &gb * gb.transpose();
        let sum = &a + &b;
        let (sum_range, sum_null) = range_null(&sum);
        let scale = a.norm().max(b.norm());
        let v = if sum_null.ncols() == 0 {
            0.0
        } else {
            ((&a * &sum_null).norm()).max((&b * &sum_null).norm()) / scale
        };
        null_sum.record(v, || tag("null(A+B) not inside null(A)∩null(B)"));
        let v = outside(&sum_range, &a).max(outside(&sum_range, &b));
        range_sum.record(v, || tag("range(A) or range(B) not inside range(A+B)"));

        // Nested subspaces S1 ⊆ S2: S2⊥ ⊆ S1⊥.
        let k2 = rng.random_range(1..n);
        let k1 = rng.random_range(1..=k2);
        let b2 = gaussian_matrix(&mut rng, n, k2);
        let b1 = &b2 * gaussian_matrix(&mut rng, k2, k1);
        let (_, comp2) = range_null(&(&b2 * b2.transpose()));
        let q1 = orthonormal_basis(&b1);
        let v = if comp2.ncols() == 0 {
            0.0
        } else {
            (q1.transpose() * &comp2).amax()
        };
        nested.record(v, || tag("complement of larger subspace not orthogonal to smaller"));

        // Quadratic q(x) = ½xᵀHx − gᵀx on span(U); H indefinite overall but
        // positive definite on the subspace.
        let k = rng.random_range(1..n);
        let u = orthonormal_basis(&gaussian_matrix(&mut rng, n, k));
        let k = u.ncols();
        let spectrum: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..10.0)).collect();
        let r = orthonormal_basis(&gaussian_matrix(&mut rng, k, k));
        let inner = &r * DMatrix::from_diagonal(&DVector::from_vec(spectrum)) * r.transpose();
        let noise = gaussian_matrix(&mut rng, n, n);
        let (_, perp) = range_null(&(&u * u.transpose()));
        let off = &perp * (perp.transpose() * (&noise + noise.transpose()) * &perp) * perp.transpose();
        let h = &u * &inner * u.transpose() + off;
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let reduced = u.transpose() * &h * &u;
        let c = reduced.clone().cholesky().map(|ch| ch.solve(&(u.transpose() * &g)));
        let Some(c) = c else {
            first_order.record(f64::INFINITY, || tag("reduced Hessian not positive definite"));
            continue;
        };
        let x_star = &u * &c;
        let grad = &h * &x_star - &g;
        let v = (u.transpose() * &grad).norm() / g.norm().max(1.0);
        first_order.record(v, || tag("gradient not orthogonal to subspace at minimizer"));

        // Independent minimization by gradient descent on the coefficients.
        let lip = reduced.symmetric_eigenvalues().amax();
        let mut cg = DVector::zeros(k);
        let ug = u.transpose() * &g;
        for _ in 0..5000 {
            let step = &reduced * &cg - &ug;
            cg -= step / lip;
        }
        let v = (&u * cg - &x_star).norm() / x_star.norm().max(1.0);
        gd_agree.record(v, || tag("descent minimizer differs from stationary point"));
    }

    VerifyReport {
        results: vec![null_sum, range_sum, nested, first_order, gd_agree],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subspace_properties_hold() {
        let report = verify_subspace_facts(40, 8, 7);
        assert!(report.passed(), "{report}");
        assert_eq!(report.results.len(), 5);
        for r in &report.results {
            assert_eq!(r.trials, 40);
        }
    }

    #[test]
    fn report_lines_are_structured() {
        let report = verify_subspace_facts(2, 5, 1);
        let text = report.to_string();
        assert_eq!(text.lines().count(), 5);
        assert!(text
            .lines()
            .all(|l| l.starts_with("property=") && l.contains("status=pass")));
    }

    #[test]
    fn failing_trial_records_counterexample() {
        let mut r = PropertyResult::new("x", 1e-8);
        r.record(1e-12, || "a".into());
        r.record(1.0, || "first".into());
        r.record(2.0, || "second".into());
        assert!(!r.passed());
        assert_eq!(r.counterexample.as_deref(), Some("first"));
        assert_eq!(r.max_violation, 2.0);
        r = PropertyResult::new("y", 1.0);
        r.record(f64::NAN, || "nan".into());
        assert!(!r.passed());
    }
}
