//! Dense reference computations for small instances.
//!
//! Nothing here is used by the restoration path; these are the ground truth
//! the matrix-free code is checked against.

mod spectral;
mod subspace;

pub use spectral::{dense_svd, spectral_decompose, DenseSpectralForm, RANGE_TOLERANCE, RANK_TOLERANCE};
pub use subspace::verify_subspace_facts;

use std::fmt;

/// Outcome of checking one property over many random trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub property: String,
    pub trials: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Description of the first failing trial, if any.
    pub counterexample: Option<String>,
}

impl PropertyResult {
    pub fn new(property: impl Into<String>, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            trials: 0,
            max_violation: 0.0,
            tolerance,
            counterexample: None,
        }
    }

    /// Records one trial. Non-finite violations count as failures.
    pub fn record(&mut self, violation: f64, describe: impl FnOnce() -> String) {
        self.trials += 1;
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v > self.max_violation {
            self.max_violation = v;
        }
        if v > self.tolerance && self.counterexample.is_none() {
            self.counterexample = Some(describe());
        }
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.counterexample.is_none()
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "property={} trials={} max_violation={:.3e} tolerance={:.1e} status={}",
            self.property,
            self.trials,
            self.max_violation,
            self.tolerance,
            if self.passed() { "pass" } else { "fail" }
        )?;
        if let Some(c) = &self.counterexample {
            write!(f, " counterexample=\"{c}\"")?;
        }
        Ok(())
    }
}

/// A list of property results, printed one per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(PropertyResult::passed)
    }

    pub fn extend(&mut self, other: VerifyReport) {
        self.results.extend(other.results);
    }

    pub fn get(&self, property: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.property == property)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
