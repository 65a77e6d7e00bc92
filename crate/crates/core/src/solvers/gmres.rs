use std::collections::VecDeque;

use super::{Finish, SolverConfig, StopReason, Tracker};
use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm, scale};

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Solves the `j × j` upper-triangular system stored column-wise in `r`.
fn back_substitute(r: &[Vec<f64>], g: &[f64], j: usize) -> Vec<f64> {
    let mut y = g[..j].to_vec();
    for i in (0..j).rev() {
        for k in i + 1..j {
            y[i] -= r[k][i] * y[k];
        }
        y[i] /= r[i][i];
    }
    y
}

fn combine(dirs: &[Vec<f64>], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (d, &c) in dirs.iter().zip(y) {
        axpy(c, d, &mut out);
    }
    out
}

/// Restarted GMRES. With `augment > 0`, each cycle appends up to `augment`
/// previous corrections `dx` (with their images `op(dx)`, so no extra
/// products) to the Krylov directions, giving a flexible Arnoldi relation
/// `op(Z) = V H̄`.
pub(super) fn run(t: &mut Tracker<'_>, b: &[f64], x0: Vec<f64>, cfg: &SolverConfig, augment: usize) -> Result<Finish> {
    let n = b.len();
    let tol_abs = cfg.tolerance * norm(b);
    let mut x = x0;
    let mut r = if x.iter().all(|&v| v == 0.0) {
        b.to_vec()
    } else {
        t.residual(b, &x, 0)?
    };
    let mut beta = norm(&r);
    t.offer_best(beta, &x);
    let mut carried: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut products = 0usize;
    let mut steps = 0usize;
    let reason;

    loop {
        if beta <= tol_abs {
            reason = StopReason::Converged;
            break;
        }
        if products >= cfg.max_iterations {
            reason = StopReason::MaxIterations;
            break;
        }
        if t.budget_exhausted() {
            reason = StopReason::Budget;
            break;
        }
        let m = cfg.restart_length;
        let extra: Vec<(Vec<f64>, Vec<f64>)> = carried.iter().cloned().collect();
        let total = m + extra.len();

        let mut v0 = r.clone();
        scale(1.0 / beta, &mut v0);
        let mut basis = vec![v0];
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(total);
        let mut hbar: Vec<Vec<f64>> = Vec::with_capacity(total);
        let mut rot: Vec<Vec<f64>> = Vec::with_capacity(total);
        let mut rotations: Vec<(f64, f64)> = Vec::with_capacity(total);
        let mut g = vec![beta];
        let mut happy = false;
        let mut j = 0;

        while j < total {
            let (z, mut w) = if j < m {
                let z = basis[j].clone();
                products += 1;
                let w = t.matvec(&z, steps + 1)?;
                (z, w)
            } else {
                extra[j - m].clone()
            };
            steps += 1;
            let mut h = vec![0.0; j + 2];
            // Modified Gram-Schmidt with one reorthogonalization pass.
            for _ in 0..2 {
                for (i, vi) in basis.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[i] += c;
                    axpy(-c, vi, &mut w);
                }
            }
            let hn = norm(&w);
            h[j + 1] = hn;
            hbar.push(h.clone());

            let mut col = h;
            for (i, &(c, s)) in rotations.iter().enumerate() {
                let a = c * col[i] + s * col[i + 1];
                col[i + 1] = -s * col[i] + c * col[i + 1];
                col[i] = a;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = 0.0;
            rotations.push((c, s));
            g.push(-s * g[j]);
            g[j] *= c;
            rot.push(col);
            dirs.push(z);

            let res = g[j + 1].abs();
            let column_scale = hbar[j].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            happy = hn <= 1e-14 * column_scale.max(beta);
            if !happy {
                scale(1.0 / hn, &mut w);
                basis.push(w);
            }
            j += 1;
            if rot[j - 1][j - 1] == 0.0 {
                return Err(Error::Breakdown {
                    iteration: steps,
                    reason: "singular least-squares factor in GMRES".into(),
                });
            }

            if t.has_monitor() {
                let y = back_substitute(&rot, &g, j);
                let mut xj = x.clone();
                axpy(1.0, &combine(&dirs, &y, n), &mut xj);
                t.record(steps, Some(&xj), res)?;
            } else {
                t.record(steps, None, res)?;
            }
            if res <= tol_abs || happy || products >= cfg.max_iterations || t.budget_exhausted() {
                break;
            }
        }

        let y = back_substitute(&rot, &g, j);
        let dx = combine(&dirs, &y, n);
        if !dx.iter().all(|v| v.is_finite()) {
            return Err(Error::Breakdown {
                iteration: steps,
                reason: "GMRES correction is not finite".into(),
            });
        }
        axpy(1.0, &dx, &mut x);

        if augment > 0 {
            let dn = norm(&dx);
            if dn > 0.0 {
                // op(dx) = V H̄ y
                let mut hy = vec![0.0; j + 1];
                for (k, col) in hbar.iter().enumerate() {
                    for (i, &hv) in col.iter().enumerate() {
                        hy[i] += hv * y[k];
                    }
                }
                let mut adx = vec![0.0; n];
                for (vi, &c) in basis.iter().zip(&hy) {
                    axpy(c, vi, &mut adx);
                }
                let mut d = dx;
                scale(1.0 / dn, &mut d);
                scale(1.0 / dn, &mut adx);
                carried.push_front((d, adx));
                carried.truncate(augment);
            }
        }

        r = t.residual(b, &x, steps)?;
        let prev = beta;
        beta = norm(&r);
        t.offer_best(beta, &x);
        if happy && beta > tol_abs && beta >= prev {
            reason = StopReason::Stagnated;
            break;
        }
    }

    let (residual, x) = match t.take_best() {
        Some((best, bx)) if best < beta => (best, bx),
        _ => (beta, x),
    };
    Ok(Finish {
        x,
        residual,
        iterations: steps,
        reason,
    })
}
