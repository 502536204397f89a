//! Metric catalog and the time-aligned data model shared by every other module.
//!
//! The catalog is a fixed table of 26 metric descriptors partitioned into five
//! categories (energy, compute, memory, communication, system). Everything that
//! flows through the pipeline — readings, ticks, CSV columns, report rows — is
//! keyed by a catalog id.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::carbon::CarbonConfig;
use crate::processing::EnergyTotals;

/// Measurement unit of a catalog metric (or of its post-processed form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    Watts,
    Joules,
    Celsius,
    Percent,
    Megahertz,
    Bytes,
    GigabytesPerSecond,
    Count,
}

impl Unit {
    pub fn symbol(&self) -> &'static str {
        match self {
            Unit::Watts => "W",
            Unit::Joules => "J",
            Unit::Celsius => "°C",
            Unit::Percent => "%",
            Unit::Megahertz => "MHz",
            Unit::Bytes => "bytes",
            Unit::GigabytesPerSecond => "GB/s",
            Unit::Count => "count",
        }
    }

    /// Bracketed suffix used in report rows, e.g. `[W]`. Counts render bare.
    pub fn bracket(&self) -> String {
        match self {
            Unit::Count => String::new(),
            other => format!(" [{}]", other.symbol()),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Whether a metric is an instantaneous gauge or a monotone counter.
///
/// Counters carry an optional wrap range (the value after which the source
/// rolls over); `None` means the counter is treated as unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricKind {
    Gauge,
    CumulativeCounter { wrap_range: Option<f64> },
}

impl MetricKind {
    pub fn is_counter(&self) -> bool {
        matches!(self, MetricKind::CumulativeCounter { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Energy,
    Compute,
    Memory,
    Communication,
    System,
}

impl Category {
    pub fn name(&self) -> &'static str {
        match self {
            Category::Energy => "energy",
            Category::Compute => "compute",
            Category::Memory => "memory",
            Category::Communication => "communication",
            Category::System => "system",
        }
    }

    pub fn from_name(s: &str) -> Option<Category> {
        match s {
            "energy" => Some(Category::Energy),
            "compute" => Some(Category::Compute),
            "memory" => Some(Category::Memory),
            "communication" => Some(Category::Communication),
            "system" => Some(Category::System),
            _ => None,
        }
    }
}

/// Which device class a metric is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceScope {
    PerGpu,
    Host,
}

/// Identity of a sampled device. GPU indices are dense from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceId {
    Host,
    Gpu(u32),
}

impl DeviceId {
    /// Label used in exposition output and plot legends: `host` or `gpuN`.
    pub fn label(&self) -> String {
        match self {
            DeviceId::Host => "host".to_string(),
            DeviceId::Gpu(i) => format!("gpu{i}"),
        }
    }

    /// CSV column prefix for per-GPU metrics: `g{i}_`. Host columns are bare.
    pub fn column_prefix(&self) -> String {
        match self {
            DeviceId::Host => String::new(),
            DeviceId::Gpu(i) => format!("g{i}_"),
        }
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// One entry of the 26-metric catalog.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDescriptor {
    /// Canonical snake_case id with unit suffix, e.g. `power_draw_w`.
    pub id: &'static str,
    /// Report display base, e.g. `Power Draw` (unit bracket appended on render).
    pub display_base: &'static str,
    pub unit: Unit,
    pub kind: MetricKind,
    pub category: Category,
    pub device_scope: DeviceScope,
}

impl MetricDescriptor {
    /// Display name with the unit of the *stored* form, e.g. `Power Draw [W]`.
    pub fn display_name(&self) -> String {
        format!("{}{}", self.display_base, self.unit.bracket())
    }

    /// Display name of the form that appears in reports. Byte counters are
    /// reported as rates, so they render with the GB/s bracket.
    pub fn report_display_name(&self) -> String {
        if self.kind.is_counter() && self.unit == Unit::Bytes {
            format!("{}{}", self.display_base, Unit::GigabytesPerSecond.bracket())
        } else {
            self.display_name()
        }
    }
}

const GAUGE: MetricKind = MetricKind::Gauge;
const UNBOUNDED_COUNTER: MetricKind = MetricKind::CumulativeCounter { wrap_range: None };

/// The fixed catalog: 4 energy + 9 compute + 5 memory + 6 communication + 2 system.
pub const CATALOG: [MetricDescriptor; 26] = [
    // Energy
    MetricDescriptor { id: "power_draw_w", display_base: "Power Draw", unit: Unit::Watts, kind: GAUGE, category: Category::Energy, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "temperature_gpu_c", display_base: "GPU Temp.", unit: Unit::Celsius, kind: GAUGE, category: Category::Energy, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "cpu_power_w", display_base: "CPU Power", unit: Unit::Watts, kind: GAUGE, category: Category::Energy, device_scope: DeviceScope::Host },
    MetricDescriptor { id: "dram_power_w", display_base: "DRAM Power", unit: Unit::Watts, kind: GAUGE, category: Category::Energy, device_scope: DeviceScope::Host },
    // Compute
    MetricDescriptor { id: "gpu_utilization_pct", display_base: "GPU Utilization", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "sm_active_pct", display_base: "SM Active", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "sm_occupancy_pct", display_base: "SM Occupancy", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "tensor_active_pct", display_base: "Tensor Active", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "fp64_active_pct", display_base: "FP64 Active", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "fp32_active_pct", display_base: "FP32 Active", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "fp16_active_pct", display_base: "FP16 Active", unit: Unit::Percent, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "graphics_clock_mhz", display_base: "Graphics Clock", unit: Unit::Megahertz, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "sm_clock_mhz", display_base: "SM Clock", unit: Unit::Megahertz, kind: GAUGE, category: Category::Compute, device_scope: DeviceScope::PerGpu },
    // Memory
    MetricDescriptor { id: "memory_utilization_pct", display_base: "Mem. Utilization", unit: Unit::Percent, kind: GAUGE, category: Category::Memory, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "dram_active_pct", display_base: "DRAM Active (Cycles)", unit: Unit::Percent, kind: GAUGE, category: Category::Memory, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "memory_usage_pct", display_base: "Mem. Usage Total", unit: Unit::Percent, kind: GAUGE, category: Category::Memory, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "temperature_memory_c", display_base: "Mem. Temp.", unit: Unit::Celsius, kind: GAUGE, category: Category::Memory, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "memory_clock_mhz", display_base: "Mem. Clock", unit: Unit::Megahertz, kind: GAUGE, category: Category::Memory, device_scope: DeviceScope::PerGpu },
    // Communication
    MetricDescriptor { id: "pcie_link_gen", display_base: "PCIe Link Gen", unit: Unit::Count, kind: GAUGE, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "pcie_link_width", display_base: "PCIe Width", unit: Unit::Count, kind: GAUGE, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "pcie_tx_bytes", display_base: "PCIe TX", unit: Unit::Bytes, kind: UNBOUNDED_COUNTER, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "pcie_rx_bytes", display_base: "PCIe RX", unit: Unit::Bytes, kind: UNBOUNDED_COUNTER, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "nvlink_tx_bytes", display_base: "NVLink TX", unit: Unit::Bytes, kind: UNBOUNDED_COUNTER, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    MetricDescriptor { id: "nvlink_rx_bytes", display_base: "NVLink RX", unit: Unit::Bytes, kind: UNBOUNDED_COUNTER, category: Category::Communication, device_scope: DeviceScope::PerGpu },
    // System
    MetricDescriptor { id: "cpu_usage_pct", display_base: "CPU Usage", unit: Unit::Percent, kind: GAUGE, category: Category::System, device_scope: DeviceScope::Host },
    MetricDescriptor { id: "dram_usage_pct", display_base: "DRAM Usage", unit: Unit::Percent, kind: GAUGE, category: Category::System, device_scope: DeviceScope::Host },
];

/// The full metric catalog in stable (category, then in-category) order.
pub fn metric_catalog() -> &'static [MetricDescriptor] {
    &CATALOG
}

/// Look up a descriptor by canonical id.
pub fn descriptor(id: &str) -> Option<&'static MetricDescriptor> {
    CATALOG.iter().find(|d| d.id == id)
}

/// Position of an id in catalog order; used to keep selections stably sorted.
pub fn catalog_index(id: &str) -> Option<usize> {
    CATALOG.iter().position(|d| d.id == id)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("unknown metric or category: `{0}`")]
    UnknownToken(String),
    #[error("empty metric selection")]
    Empty,
}

/// Expand a selection expression into catalog ids.
///
/// Accepted forms: `all`, a category name, or a comma list whose tokens are
/// ids, category names, or `all`. The result is deduplicated and returned in
/// catalog order, which makes resolution idempotent.
pub fn resolve_selection(spec: &str) -> Result<Vec<&'static str>, SelectionError> {
    let mut picked = [false; CATALOG.len()];
    let mut any = false;
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        any = true;
        if token == "all" {
            picked = [true; CATALOG.len()];
        } else if let Some(cat) = Category::from_name(token) {
            for (i, d) in CATALOG.iter().enumerate() {
                if d.category == cat {
                    picked[i] = true;
                }
            }
        } else if let Some(i) = catalog_index(token) {
            picked[i] = true;
        } else {
            return Err(SelectionError::UnknownToken(token.to_string()));
        }
    }
    if !any {
        return Err(SelectionError::Empty);
    }
    Ok(CATALOG
        .iter()
        .enumerate()
        .filter(|(i, _)| picked[*i])
        .map(|(_, d)| d.id)
        .collect())
}

/// A (device, metric) pair — the key of every sampled series.
pub type SeriesKey = (DeviceId, String);

/// One time-aligned row of the session: scheduled timestamps plus the values
/// gathered for that instant. Absent values are simply missing keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    /// Unix epoch milliseconds of the tick's scheduled time.
    pub wall_time_ms: i64,
    /// Seconds since session start on the monotonic clock (scheduled).
    pub mono_elapsed_s: f64,
    pub values: BTreeMap<SeriesKey, f64>,
}

impl Tick {
    pub fn value(&self, device: DeviceId, metric: &str) -> Option<f64> {
        self.values.get(&(device, metric.to_string())).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("sampling interval {0}s is below the 0.05s minimum")]
    IntervalTooSmall(String),
    #[error("sampling interval must be positive and finite")]
    IntervalInvalid,
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// Session configuration: cadence, metric selection, devices, output, carbon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub interval_s: f64,
    /// Resolved metric ids in catalog order.
    pub selected_metrics: Vec<String>,
    pub devices: Vec<DeviceId>,
    pub output_dir: PathBuf,
    pub carbon: CarbonConfig,
}

impl SamplingConfig {
    pub fn new(interval_s: f64, selection: &str, output_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let selected = resolve_selection(selection)?;
        let config = SamplingConfig {
            interval_s,
            selected_metrics: selected.iter().map(|s| s.to_string()).collect(),
            devices: Vec::new(),
            output_dir: output_dir.into(),
            carbon: CarbonConfig::Off,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.interval_s.is_finite() || self.interval_s <= 0.0 {
            return Err(ConfigError::IntervalInvalid);
        }
        if self.interval_s < 0.05 {
            return Err(ConfigError::IntervalTooSmall(format!("{}", self.interval_s)));
        }
        if self.selected_metrics.is_empty() {
            return Err(SelectionError::Empty.into());
        }
        for id in &self.selected_metrics {
            if descriptor(id).is_none() {
                return Err(SelectionError::UnknownToken(id.clone()).into());
            }
        }
        Ok(())
    }

    /// The (device, metric) series this config records, in column order:
    /// host metrics first, then per-GPU blocks in catalog order.
    pub fn series_keys(&self) -> Vec<SeriesKey> {
        let mut keys = Vec::new();
        let host_order = ["cpu_power_w", "dram_power_w", "cpu_usage_pct", "dram_usage_pct"];
        if self.devices.contains(&DeviceId::Host) {
            for id in host_order {
                if self.selected_metrics.iter().any(|m| m == id) {
                    keys.push((DeviceId::Host, id.to_string()));
                }
            }
        }
        let mut gpus: Vec<u32> = self
            .devices
            .iter()
            .filter_map(|d| match d {
                DeviceId::Gpu(i) => Some(*i),
                DeviceId::Host => None,
            })
            .collect();
        gpus.sort_unstable();
        for gpu in gpus {
            for d in &CATALOG {
                if d.device_scope == DeviceScope::PerGpu
                    && self.selected_metrics.iter().any(|m| m == d.id)
                {
                    keys.push((DeviceId::Gpu(gpu), d.id.to_string()));
                }
            }
        }
        keys
    }
}

/// A source that died mid-session, and the tick index from which its metrics
/// are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadSource {
    pub name: String,
    pub reason: String,
    pub from_tick: u64,
}

/// Scheduling quality observed over a finished session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CadenceStats {
    /// Mean achieved interval between tick collections, seconds.
    pub mean_interval_s: f64,
    /// Largest observed deviation of a collection start from its grid slot.
    pub max_schedule_deviation_s: f64,
}

/// Everything a finished session knows about itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub id: String,
    pub config: SamplingConfig,
    pub device_inventory: BTreeMap<DeviceId, String>,
    pub ticks: Vec<Tick>,
    pub overrun_count: u64,
    pub dropped_tick_count: u64,
    /// Selected series no open source could provide.
    pub uncollected: Vec<SeriesKey>,
    pub dead_sources: Vec<DeadSource>,
    pub started_wall_ms: i64,
    pub ended_wall_ms: Option<i64>,
    pub cadence: CadenceStats,
    pub totals: Option<EnergyTotals>,
}

impl SessionData {
    /// Extract one series as (mono_elapsed_s, value) pairs over present ticks.
    pub fn series(&self, device: DeviceId, metric: &str) -> Vec<(f64, f64)> {
        let key = (device, metric.to_string());
        self.ticks
            .iter()
            .filter_map(|t| t.values.get(&key).map(|v| (t.mono_elapsed_s, *v)))
            .collect()
    }

    /// Extract one series aligned to the tick grid, absent values preserved.
    pub fn aligned_series(&self, device: DeviceId, metric: &str) -> Vec<Option<f64>> {
        let key = (device, metric.to_string());
        self.ticks.iter().map(|t| t.values.get(&key).copied()).collect()
    }

    /// GPU devices present in this session's config, ascending.
    pub fn gpu_devices(&self) -> Vec<DeviceId> {
        let mut gpus: Vec<u32> = self
            .config
            .devices
            .iter()
            .filter_map(|d| match d {
                DeviceId::Gpu(i) => Some(*i),
                DeviceId::Host => None,
            })
            .collect();
        gpus.sort_unstable();
        gpus.into_iter().map(DeviceId::Gpu).collect()
    }

    /// Span between first and last tick on the monotonic clock.
    pub fn duration_s(&self) -> f64 {
        match (self.ticks.first(), self.ticks.last()) {
            (Some(a), Some(b)) => b.mono_elapsed_s - a.mono_elapsed_s,
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_26_entries_partitioned_as_stated() {
        assert_eq!(CATALOG.len(), 26);
        let count = |c: Category| CATALOG.iter().filter(|d| d.category == c).count();
        assert_eq!(count(Category::Energy), 4);
        assert_eq!(count(Category::Compute), 9);
        assert_eq!(count(Category::Memory), 5);
        assert_eq!(count(Category::Communication), 6);
        assert_eq!(count(Category::System), 2);
    }

    #[test]
    fn catalog_ids_unique() {
        for (i, a) in CATALOG.iter().enumerate() {
            for b in &CATALOG[i + 1..] {
                assert_ne!(a.id, b.id);
            }
        }
    }

    #[test]
    fn catalog_entry_power_draw() {
        let d = descriptor("power_draw_w").unwrap();
        assert_eq!(d.unit, Unit::Watts);
        assert_eq!(d.kind, MetricKind::Gauge);
        assert_eq!(d.category, Category::Energy);
    }

    #[test]
    fn catalog_entry_pcie_tx() {
        let d = descriptor("pcie_tx_bytes").unwrap();
        assert!(d.kind.is_counter());
        assert_eq!(d.category, Category::Communication);
        assert_eq!(d.report_display_name(), "PCIe TX [GB/s]");
    }

    #[test]
    fn counters_declare_wrap_or_unbounded() {
        for d in &CATALOG {
            if let MetricKind::CumulativeCounter { wrap_range } = d.kind {
                if let Some(w) = wrap_range {
                    assert!(w > 0.0);
                }
            }
        }
    }

    #[test]
    fn selection_all_is_everything() {
        let ids = resolve_selection("all").unwrap();
        assert_eq!(ids.len(), 26);
    }

    #[test]
    fn selection_energy_category() {
        let ids = resolve_selection("energy").unwrap();
        assert_eq!(ids, vec!["power_draw_w", "temperature_gpu_c", "cpu_power_w", "dram_power_w"]);
    }

    #[test]
    fn selection_unknown_token_named_in_error() {
        let err = resolve_selection("bogus_metric").unwrap_err();
        assert_eq!(err, SelectionError::UnknownToken("bogus_metric".into()));
    }

    #[test]
    fn selection_mixed_list_dedups_in_catalog_order() {
        let ids = resolve_selection("sm_clock_mhz, energy, power_draw_w").unwrap();
        assert_eq!(
            ids,
            vec!["power_draw_w", "temperature_gpu_c", "cpu_power_w", "dram_power_w", "sm_clock_mhz"]
        );
    }

    #[test]
    fn selection_idempotent() {
        let once = resolve_selection("compute,system").unwrap();
        let again = resolve_selection(&once.join(",")).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn interval_below_floor_rejected() {
        let err = SamplingConfig::new(0.01, "all", "/tmp/x").unwrap_err();
        assert!(matches!(err, ConfigError::IntervalTooSmall(_)));
    }

    #[test]
    fn series_keys_host_then_gpu_blocks() {
        let mut cfg = SamplingConfig::new(0.1, "all", "/tmp/x").unwrap();
        cfg.devices = vec![DeviceId::Gpu(1), DeviceId::Host, DeviceId::Gpu(0)];
        let keys = cfg.series_keys();
        assert_eq!(keys[0], (DeviceId::Host, "cpu_power_w".to_string()));
        assert_eq!(keys[4], (DeviceId::Gpu(0), "power_draw_w".to_string()));
        // 4 host + 22 per-gpu × 2
        assert_eq!(keys.len(), 4 + 22 * 2);
        let gpu1_start = keys.iter().position(|k| k.0 == DeviceId::Gpu(1)).unwrap();
        assert_eq!(gpu1_start, 4 + 22);
    }
}
