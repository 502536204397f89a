//! Workload telemetry toolkit: samples power, energy, and hardware-activity
//! metrics around the execution of a child process, converts them into
//! time-aligned series, estimated energy, and operational carbon emissions,
//! and renders execution reports, correlation analyses, plots, and a live
//! exposition feed.
//!
//! The crate is organized along the pipeline:
//!
//! * [`model`] — the 26-metric catalog and the time-aligned data model
//! * [`sources`] — hardware adapters plus synthetic and replay providers
//! * [`collector`] — the fixed-rate sampling loop
//! * [`processing`] — counter normalization, energy integration, carbon
//! * [`carbon`] — carbon-intensity resolution (static / cache / provider)
//! * [`persistence`] — CSV + metadata session storage
//! * [`analytics`] — summary stats, correlation, bottleneck classification
//! * [`reporting`] — markdown reports, SVG plots, exposition endpoint

pub mod analytics;
pub mod carbon;
pub mod collector;
pub mod model;
pub mod persistence;
pub mod processing;
pub mod reporting;
pub mod sources;

pub use collector::{start, stop, SessionHandle};
pub use model::{metric_catalog, resolve_selection, SamplingConfig, SessionData};
