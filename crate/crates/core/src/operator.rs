//! Matrix-free linear operator contract and work accounting.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default cap on `n` for dense materialization.
pub const DENSE_CAP: usize = 4096;

/// A linear map `R^input_len -> R^output_len` available only through
/// matrix-vector products.
pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;

    /// `out = op(x)`; `out` is fully overwritten.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.apply_into(x, &mut out);
        out
    }

    /// Whether the operator is symmetric by construction.
    fn is_symmetric(&self) -> bool {
        false
    }

    /// Cumulative primitive-operator work, for operators that count it.
    fn work(&self) -> Option<WorkCount> {
        None
    }
}

/// Builds the dense matrix whose column `j` is `op(e_j)`.
pub fn materialize(op: &dyn LinearOperator, cap: usize) -> Result<DMatrix<f64>> {
    let n = op.input_len();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let m = op.output_len();
    let mut dense = DMatrix::zeros(m, n);
    let mut unit = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        unit[j] = 1.0;
        op.apply_into(&unit, &mut col);
        unit[j] = 0.0;
        dense.column_mut(j).copy_from_slice(&col);
    }
    Ok(dense)
}

/// Dense matrix wrapped as an operator; handy for oracles and tests.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
    pub symmetric: bool,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            symmetric: false,
        }
    }

    pub fn symmetric(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            symmetric: true,
        }
    }
}

impl LinearOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_len(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.matrix.nrows();
        for (i, o) in out.iter_mut().enumerate().take(m) {
            *o = x.iter().enumerate().map(|(j, v)| self.matrix[(i, j)] * v).sum();
        }
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Counts primitive operator applications. One "operator application" is
/// one application of F, Fᵀ, W or Wᵀ; every algorithm in the crate counts
/// through this type so comparisons are like for like.
#[derive(Debug, Default)]
pub struct WorkCounter {
    forward: AtomicUsize,
    forward_adjoint: AtomicUsize,
    denoiser: AtomicUsize,
    denoiser_adjoint: AtomicUsize,
}

/// Snapshot of a [`WorkCounter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCount {
    pub forward: usize,
    pub forward_adjoint: usize,
    pub denoiser: usize,
    pub denoiser_adjoint: usize,
}

impl WorkCount {
    pub fn total(&self) -> usize {
        self.forward + self.forward_adjoint + self.denoiser + self.denoiser_adjoint
    }
}

impl std::ops::Add for WorkCount {
    type Output = WorkCount;

    fn add(self, o: WorkCount) -> WorkCount {
        WorkCount {
            forward: self.forward + o.forward,
            forward_adjoint: self.forward_adjoint + o.forward_adjoint,
            denoiser: self.denoiser + o.denoiser,
            denoiser_adjoint: self.denoiser_adjoint + o.denoiser_adjoint,
        }
    }
}

impl std::ops::Sub for WorkCount {
    type Output = WorkCount;

    fn sub(self, o: WorkCount) -> WorkCount {
        WorkCount {
            forward: self.forward - o.forward,
            forward_adjoint: self.forward_adjoint - o.forward_adjoint,
            denoiser: self.denoiser - o.denoiser,
            denoiser_adjoint: self.denoiser_adjoint - o.denoiser_adjoint,
        }
    }
}

impl WorkCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
    }

    pub fn forward_adjoint(&self) {
        self.forward_adjoint.fetch_add(1, Ordering::Relaxed);
    }

    pub fn denoiser(&self) {
        self.denoiser.fetch_add(1, Ordering::Relaxed);
    }

    pub fn denoiser_adjoint(&self) {
        self.denoiser_adjoint.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> WorkCount {
        WorkCount {
            forward: self.forward.load(Ordering::Relaxed),
            forward_adjoint: self.forward_adjoint.load(Ordering::Relaxed),
            denoiser: self.denoiser.load(Ordering::Relaxed),
            denoiser_adjoint: self.denoiser_adjoint.load(Ordering::Relaxed),
        }
    }

    pub fn total(&self) -> usize {
        self.snapshot().total()
    }
}
