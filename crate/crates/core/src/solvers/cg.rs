use super::{Finish, SolverConfig, StopReason, Tracker};
use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm};

pub(super) fn run(t: &mut Tracker<'_>, b: &[f64], x0: Vec<f64>, cfg: &SolverConfig) -> Result<Finish> {
    let tol_abs = cfg.tolerance * norm(b);
    let mut x = x0;
    let mut r = if x.iter().all(|&v| v == 0.0) {
        b.to_vec()
    } else {
        t.residual(b, &x, 0)?
    };
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut reason = StopReason::MaxIterations;
    let mut it = 0;
    while rs.sqrt() > tol_abs {
        if it >= cfg.max_iterations {
            reason = StopReason::MaxIterations;
            break;
        }
        if t.budget_exhausted() {
            reason = StopReason::Budget;
            break;
        }
        it += 1;
        let ap = t.matvec(&p, it)?;
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            if curvature < 0.0 {
                return Err(Error::Breakdown {
                    iteration: it,
                    reason: "negative curvature; operator is not positive semidefinite".into(),
                });
            }
            reason = StopReason::Stagnated;
            break;
        }
        let alpha = rs / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        let shown = if t.has_monitor() { Some(x.as_slice()) } else { None };
        t.record(it, shown, rs_new.sqrt())?;
        let beta = rs_new / rs;
        rs = rs_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    // The recursive residual drifts; certify with a true product.
    let r_true = t.residual(b, &x, it)?;
    Ok(Finish {
        residual: norm(&r_true),
        x,
        iterations: it,
        reason,
    })
}
