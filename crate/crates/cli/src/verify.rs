//! `verify`: randomized property suites on dense desk-scale instances.

use anyhow::Result;
use krs_core::config::ConfigMap;
use krs_core::harness::{verify_all, VerifyOptions};

use crate::manifest::{write_text, RunManifest};
use crate::settings::VerifySettings;
use crate::Status;

pub const REPORT_FILE: &str = "verify_report.txt";

pub fn run(s: &VerifySettings) -> Result<Status> {
    if s.trials == 0 {
        eprintln!("warning: --trials 0 checks nothing; passing vacuously");
    }
    let report = verify_all(&VerifyOptions {
        trials: s.trials,
        max_n: s.max_n,
        seed: s.seed,
        fault: s.fault,
    });
    write_text(&s.output_dir, REPORT_FILE, &report.to_string())?;
    let mut resolved = ConfigMap::new();
    s.write(&mut resolved);
    RunManifest::new("verify", resolved).save(&s.output_dir)?;

    say!("{report}");
    let failed: Vec<_> = report.results.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        say!("verify: {} properties passed\n", report.results.len());
        Ok(Status::Success)
    } else {
        for r in &failed {
            eprintln!("violation: {r}");
        }
        eprintln!("verify: {} of {} properties failed", failed.len(), report.results.len());
        Ok(Status::Violation)
    }
}
