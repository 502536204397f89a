//! Command implementations behind the `wattmon` binary: run-and-measure,
//! post-hoc report/plot/replay, the metric catalog listing, and the
//! self-overhead bench harness.

use std::fmt;

pub mod bench;
pub mod posthoc;
pub mod run;

pub use bench::{bench_command, render_bench, BenchArgs, BenchReport};
pub use posthoc::{catalog_command, plot_command, replay_command, report_command};
pub use run::{run_command, RunArgs};

/// Marker for user-input problems; the binary maps it to exit code 1.
/// Runtime measurement failures exit with 2 instead.
#[derive(Debug)]
pub struct Validation(pub String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Validation {}

pub(crate) fn validation<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(anyhow::Error::new(Validation(msg.into())))
}
