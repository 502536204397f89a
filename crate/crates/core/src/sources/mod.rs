//! Uniform sampling abstraction over heterogeneous metric providers.
//!
//! Hardware adapters (GPU management library, powercap energy counters, OS
//! statistics) and the two hardware-free providers (synthetic generator,
//! trace replay) all expose the same [`Source`] contract, so the collector
//! cannot tell them apart.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::model::{descriptor, DeviceId, SeriesKey};

pub mod rapl;
pub mod replay;
pub mod synthetic;
pub mod system;

#[cfg(target_os = "linux")]
pub mod nvml;

pub use replay::{resample_ticks, ReplaySource};
pub use synthetic::{generate_synthetic, SyntheticPhase, SyntheticSource, SyntheticTraceSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SourceError {
    /// The requested provider cannot run on this host; carries the probed
    /// reason. The collector degrades by excluding its metrics.
    #[error("source `{kind}` unavailable: {reason}")]
    Unavailable { kind: String, reason: String },
    /// Handle-level failure while polling; the collector marks the source
    /// dead and continues.
    #[error("source `{name}` died: {reason}")]
    Dead { name: String, reason: String },
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
}

/// One sampled value, already converted to the metric's catalog unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub device: DeviceId,
    pub metric: &'static str,
    pub value: f64,
    pub read_time_ms: i64,
}

impl Reading {
    pub fn new(device: DeviceId, metric: &'static str, value: f64, read_time_ms: i64) -> Self {
        debug_assert!(descriptor(metric).is_some(), "metric `{metric}` not in catalog");
        Reading { device, metric, value, read_time_ms }
    }

    pub fn key(&self) -> SeriesKey {
        (self.device, self.metric.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyClass {
    Fast,
    Slow,
}

/// Identity and coverage of an open source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDescriptor {
    pub name: String,
    pub provided: BTreeSet<SeriesKey>,
    pub latency_class: LatencyClass,
}

/// A pollable metric provider.
///
/// A handle is polled by exactly one caller at a time but may be created on
/// one thread and used on another; distinct handles are polled concurrently.
pub trait Source: Send {
    fn descriptor(&self) -> &SourceDescriptor;

    /// Sample every provided (device, metric) once. A metric that fails
    /// individually is omitted from the result, never fabricated; a
    /// handle-level failure returns [`SourceError::Dead`].
    fn poll(&mut self) -> Result<Vec<Reading>, SourceError>;

    /// Model names for the devices this source knows about.
    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        Vec::new()
    }
}

/// Which provider to open, with per-kind parameters.
#[derive(Debug, Clone)]
pub enum SourceSpec {
    /// Coarse GPU metrics: power, temps, utilizations, clocks, memory usage,
    /// PCIe link gen/width.
    GpuBasic,
    /// Fine GPU metrics: SM/tensor/fp-unit activity, DRAM activity, PCIe and
    /// NVLink byte counters.
    GpuFine,
    /// CPU and DRAM power from cumulative powercap energy counters.
    CpuEnergy {
        /// Override of `/sys/class/powercap`; used by tests.
        root: Option<PathBuf>,
    },
    /// Host CPU and memory usage from OS statistics.
    System {
        /// Override of `/proc`; used by tests.
        root: Option<PathBuf>,
    },
    Synthetic(SyntheticTraceSpec),
    Replay { session_dir: PathBuf },
}

impl SourceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SourceSpec::GpuBasic => "gpu_basic",
            SourceSpec::GpuFine => "gpu_fine",
            SourceSpec::CpuEnergy { .. } => "cpu_energy",
            SourceSpec::System { .. } => "system",
            SourceSpec::Synthetic(_) => "synthetic",
            SourceSpec::Replay { .. } => "replay",
        }
    }
}

/// Open a source, probing hardware availability where applicable.
pub fn open_source(spec: SourceSpec) -> Result<Box<dyn Source>, SourceError> {
    match spec {
        SourceSpec::GpuBasic => open_gpu(false),
        SourceSpec::GpuFine => open_gpu(true),
        SourceSpec::CpuEnergy { root } => rapl::RaplSource::open(root).map(boxed),
        SourceSpec::System { root } => system::SystemSource::open(root).map(boxed),
        SourceSpec::Synthetic(spec) => SyntheticSource::open(spec).map(boxed),
        SourceSpec::Replay { session_dir } => ReplaySource::open(&session_dir).map(boxed),
    }
}

fn boxed<S: Source + 'static>(source: S) -> Box<dyn Source> {
    Box::new(source)
}

#[cfg(target_os = "linux")]
fn open_gpu(fine: bool) -> Result<Box<dyn Source>, SourceError> {
    nvml::NvmlSource::open(fine).map(boxed)
}

#[cfg(not(target_os = "linux"))]
fn open_gpu(fine: bool) -> Result<Box<dyn Source>, SourceError> {
    Err(SourceError::Unavailable {
        kind: if fine { "gpu_fine".into() } else { "gpu_basic".into() },
        reason: "GPU management library adapter is only built on Linux".into(),
    })
}

/// Fault-injection wrapper: behaves like the inner source for `healthy_polls`
/// polls, then reports a handle-level death. Used to exercise the dead-source
/// degradation path in tests and demos.
pub struct FailAfterSource {
    inner: Box<dyn Source>,
    healthy_polls: u64,
    polls: u64,
}

impl FailAfterSource {
    pub fn new(inner: Box<dyn Source>, healthy_polls: u64) -> Self {
        FailAfterSource { inner, healthy_polls, polls: 0 }
    }
}

impl Source for FailAfterSource {
    fn descriptor(&self) -> &SourceDescriptor {
        self.inner.descriptor()
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        if self.polls >= self.healthy_polls {
            return Err(SourceError::Dead {
                name: self.inner.descriptor().name.clone(),
                reason: "injected fault".into(),
            });
        }
        self.polls += 1;
        self.inner.poll()
    }

    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        self.inner.device_inventory()
    }
}

/// Current wall time in epoch milliseconds.
pub fn now_epoch_ms() -> i64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}
