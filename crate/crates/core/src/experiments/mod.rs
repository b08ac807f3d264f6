//! Configuration-driven runs, the reference registry and verification suites.

pub mod config;
pub mod registry;
pub mod runner;
pub mod suites;

use crate::error::Error;

pub use config::{MmdimConfig, NamedMeasure, RunConfig, Task};
pub use registry::{expected, reference_config, Expected, Quantity, REFERENCE_NAMES};
pub use runner::{run_estimate, run_mmdim, Format, RunManifest, RunOptions, RunOutcome, MANIFEST};
pub use suites::{run_suite, SuiteReport, SuiteViolation, SUITES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Process exit code for an error: configuration problems are 2, everything
/// else is a runtime failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. } | Error::Epsilon(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}
