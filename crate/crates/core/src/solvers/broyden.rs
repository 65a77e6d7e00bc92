use super::{Finish, SolverConfig, StopReason, Tracker};
use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, norm};

/// Inverse Jacobian estimate `H = γI + Σ u_k w_kᵀ`.
struct InverseJacobian {
    gamma: f64,
    updates: Vec<(Vec<f64>, Vec<f64>)>,
}

impl InverseJacobian {
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| self.gamma * x).collect();
        for (u, w) in &self.updates {
            axpy(dot(w, v), u, &mut out);
        }
        out
    }

    fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| self.gamma * x).collect();
        for (u, w) in &self.updates {
            axpy(dot(u, v), w, &mut out);
        }
        out
    }

    /// Good Broyden: `H ← H + (s − Hy) sᵀH / (sᵀHy)`. Returns false when the
    /// denominator is too small to trust.
    fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        let hy = self.apply(y);
        let denom = dot(s, &hy);
        if !denom.is_finite() || denom.abs() <= 1e-14 * norm(s) * norm(&hy) {
            return false;
        }
        let u: Vec<f64> = s.iter().zip(&hy).map(|(a, b)| (a - b) / denom).collect();
        let w = self.apply_transpose(s);
        self.updates.push((u, w));
        true
    }

    /// Drops all updates, rescaling from the last secant pair.
    fn restart(&mut self, s: &[f64], y: &[f64]) {
        let yy = dot(y, y);
        let sy = dot(s, y);
        self.gamma = if yy > 0.0 && sy.is_finite() && sy != 0.0 {
            sy / yy
        } else {
            self.gamma
        };
        self.updates.clear();
    }
}

/// Good Broyden for `g(x) = b − op(x) = 0` written as `F(x) = op(x) − b`,
/// with unit steps `s = −H F(x)`.
pub(super) fn run(t: &mut Tracker<'_>, b: &[f64], x0: Vec<f64>, cfg: &SolverConfig) -> Result<Finish> {
    let tol_abs = cfg.tolerance * norm(b);
    let mut x = x0;
    // f = op(x) − b
    let mut f: Vec<f64> = if x.iter().all(|&v| v == 0.0) {
        b.iter().map(|v| -v).collect()
    } else {
        t.residual(b, &x, 0)?.iter().map(|v| -v).collect()
    };
    let mut fnorm = norm(&f);
    t.offer_best(fnorm, &x);
    let mut reason = StopReason::MaxIterations;
    let mut it = 0;
    let mut h: Option<InverseJacobian> = None;

    while fnorm > tol_abs {
        if it >= cfg.max_iterations {
            reason = StopReason::MaxIterations;
            break;
        }
        if t.budget_exhausted() {
            reason = StopReason::Budget;
            break;
        }
        it += 1;
        let s: Vec<f64> = match &h {
            Some(h) => h.apply(&f).iter().map(|v| -v).collect(),
            None => {
                // First step: scale from a Rayleigh-type quotient of op(f).
                let q = t.matvec(&f, it)?;
                let qq = dot(&q, &q);
                let fq = dot(&f, &q);
                let gamma = if qq > 0.0 && fq > 0.0 {
                    fq / qq
                } else {
                    fnorm / qq.sqrt().max(f64::MIN_POSITIVE)
                };
                h = Some(InverseJacobian {
                    gamma,
                    updates: Vec::new(),
                });
                f.iter().map(|v| -gamma * v).collect()
            }
        };
        axpy(1.0, &s, &mut x);
        let r = t.residual(b, &x, it)?;
        let f_new: Vec<f64> = r.iter().map(|v| -v).collect();
        let y: Vec<f64> = f_new.iter().zip(&f).map(|(a, b)| a - b).collect();
        f = f_new;
        fnorm = norm(&f);
        if !fnorm.is_finite() {
            return Err(Error::Breakdown {
                iteration: it,
                reason: "Broyden residual is not finite".into(),
            });
        }
        let shown = if t.has_monitor() { Some(x.as_slice()) } else { None };
        t.record(it, shown, fnorm)?;
        t.offer_best(fnorm, &x);
        let jac = h.as_mut().expect("initialized on first step");
        if !jac.update(&s, &y) {
            jac.restart(&s, &y);
        }
    }
    let (residual, x) = match t.take_best() {
        Some((best, bx)) if best < fnorm => (best, bx),
        _ => (fnorm, x),
    };
    Ok(Finish {
        x,
        residual,
        iterations: it,
        reason,
    })
}
