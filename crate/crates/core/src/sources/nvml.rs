//! GPU metric adapters over the NVIDIA management library.
//!
//! Two flavours share one backend:
//!
//! * `gpu_basic` — the coarse queries every driver answers: power, die
//!   temperature, utilizations, clocks, memory usage, PCIe link gen/width.
//! * `gpu_fine` — profiling counters (SM/tensor/fp-unit/DRAM activity) and
//!   PCIe/NVLink byte counters via field-value queries. Availability depends
//!   on GPU generation and driver; the probe fails with the reason when the
//!   driver rejects profiling queries.
//!
//! NVLink byte counters report 0 when links are absent.

use std::collections::BTreeSet;

use nvml_wrapper::enum_wrappers::device::{Clock, TemperatureSensor};
use nvml_wrapper::enums::device::SampleValue;
use nvml_wrapper::structs::device::FieldId;
use nvml_wrapper::{Device, Nvml};

use super::{now_epoch_ms, LatencyClass, Reading, Source, SourceDescriptor, SourceError};
use crate::model::DeviceId;

// Field ids from nvml.h. The first block are the DCP profiling metrics
// (driver 510+, Ampere or newer); the rest are stable counters.
const FI_PROF_SM_ACTIVE: u32 = 1002;
const FI_PROF_SM_OCCUPANCY: u32 = 1003;
const FI_PROF_PIPE_TENSOR_ACTIVE: u32 = 1004;
const FI_PROF_DRAM_ACTIVE: u32 = 1005;
const FI_PROF_PIPE_FP64_ACTIVE: u32 = 1006;
const FI_PROF_PIPE_FP32_ACTIVE: u32 = 1007;
const FI_PROF_PIPE_FP16_ACTIVE: u32 = 1008;
const FI_DEV_MEMORY_TEMP: u32 = 82;
const FI_DEV_PCIE_COUNT_TX_BYTES: u32 = 197;
const FI_DEV_PCIE_COUNT_RX_BYTES: u32 = 198;
// Cumulative KiB moved over NVLink (data payload), default link scope.
const FI_DEV_NVLINK_THROUGHPUT_DATA_TX: u32 = 138;
const FI_DEV_NVLINK_THROUGHPUT_DATA_RX: u32 = 139;

const BASIC_METRICS: [&str; 10] = [
    "power_draw_w",
    "temperature_gpu_c",
    "gpu_utilization_pct",
    "graphics_clock_mhz",
    "sm_clock_mhz",
    "memory_utilization_pct",
    "memory_usage_pct",
    "temperature_memory_c",
    "memory_clock_mhz",
    "pcie_link_gen",
];

const FINE_FIELDS: [(&str, u32); 11] = [
    ("sm_active_pct", FI_PROF_SM_ACTIVE),
    ("sm_occupancy_pct", FI_PROF_SM_OCCUPANCY),
    ("tensor_active_pct", FI_PROF_PIPE_TENSOR_ACTIVE),
    ("dram_active_pct", FI_PROF_DRAM_ACTIVE),
    ("fp64_active_pct", FI_PROF_PIPE_FP64_ACTIVE),
    ("fp32_active_pct", FI_PROF_PIPE_FP32_ACTIVE),
    ("fp16_active_pct", FI_PROF_PIPE_FP16_ACTIVE),
    ("pcie_tx_bytes", FI_DEV_PCIE_COUNT_TX_BYTES),
    ("pcie_rx_bytes", FI_DEV_PCIE_COUNT_RX_BYTES),
    ("nvlink_tx_bytes", FI_DEV_NVLINK_THROUGHPUT_DATA_TX),
    ("nvlink_rx_bytes", FI_DEV_NVLINK_THROUGHPUT_DATA_RX),
];

pub struct NvmlSource {
    descriptor: SourceDescriptor,
    nvml: Nvml,
    device_count: u32,
    fine: bool,
}

impl NvmlSource {
    pub fn open(fine: bool) -> Result<Self, SourceError> {
        let kind = if fine { "gpu_fine" } else { "gpu_basic" };
        let unavailable = |reason: String| SourceError::Unavailable {
            kind: kind.to_string(),
            reason,
        };
        let nvml = Nvml::init().map_err(|e| unavailable(e.to_string()))?;
        let device_count = nvml.device_count().map_err(|e| unavailable(e.to_string()))?;
        if device_count == 0 {
            return Err(unavailable("no GPU devices".to_string()));
        }
        if fine {
            // Profiling support is per-device/driver; probe on device 0.
            let device = nvml.device_by_index(0).map_err(|e| unavailable(e.to_string()))?;
            device
                .field_values_for(&[FieldId(FI_PROF_SM_ACTIVE)])
                .map_err(|e| unavailable(format!("profiling field query rejected: {e}")))?;
        }

        let mut provided = BTreeSet::new();
        for gpu in 0..device_count {
            let device = DeviceId::Gpu(gpu);
            if fine {
                for (metric, _) in FINE_FIELDS {
                    provided.insert((device, metric.to_string()));
                }
            } else {
                for metric in BASIC_METRICS {
                    provided.insert((device, metric.to_string()));
                }
                provided.insert((device, "pcie_link_width".to_string()));
            }
        }

        Ok(NvmlSource {
            descriptor: SourceDescriptor {
                name: kind.to_string(),
                provided,
                latency_class: if fine { LatencyClass::Slow } else { LatencyClass::Fast },
            },
            nvml,
            device_count,
            fine,
        })
    }

    fn poll_basic(&self, device: &Device, id: DeviceId, now_ms: i64, out: &mut Vec<Reading>) {
        let mut push = |metric: &'static str, value: Option<f64>| {
            if let Some(v) = value {
                if v.is_finite() {
                    out.push(Reading::new(id, metric, v, now_ms));
                }
            }
        };
        push("power_draw_w", device.power_usage().ok().map(|mw| mw as f64 / 1000.0));
        push(
            "temperature_gpu_c",
            device.temperature(TemperatureSensor::Gpu).ok().map(f64::from),
        );
        if let Ok(util) = device.utilization_rates() {
            push("gpu_utilization_pct", Some(util.gpu as f64));
            push("memory_utilization_pct", Some(util.memory as f64));
        }
        push("graphics_clock_mhz", device.clock_info(Clock::Graphics).ok().map(f64::from));
        push("sm_clock_mhz", device.clock_info(Clock::SM).ok().map(f64::from));
        push("memory_clock_mhz", device.clock_info(Clock::Memory).ok().map(f64::from));
        if let Ok(mem) = device.memory_info() {
            if mem.total > 0 {
                push("memory_usage_pct", Some(mem.used as f64 / mem.total as f64 * 100.0));
            }
        }
        push("pcie_link_gen", device.current_pcie_link_gen().ok().map(f64::from));
        push("pcie_link_width", device.current_pcie_link_width().ok().map(f64::from));
        if let Ok(samples) = device.field_values_for(&[FieldId(FI_DEV_MEMORY_TEMP)]) {
            for sample in samples.into_iter().flatten() {
                if let Ok(value) = sample.value {
                    push("temperature_memory_c", Some(sample_to_f64(&value)));
                }
            }
        }
    }

    fn poll_fine(&self, device: &Device, id: DeviceId, now_ms: i64, out: &mut Vec<Reading>) {
        let fields: Vec<FieldId> = FINE_FIELDS.iter().map(|(_, fid)| FieldId(*fid)).collect();
        let Ok(samples) = device.field_values_for(&fields) else {
            return;
        };
        for sample in samples.into_iter().flatten() {
            let Some((metric, _)) = FINE_FIELDS.iter().find(|(_, fid)| *fid == sample.field.0) else {
                continue;
            };
            let value = match sample.value {
                Ok(v) => sample_to_f64(&v),
                Err(_) => {
                    // absent NVLink reports zero traffic; everything else is omitted
                    if metric.starts_with("nvlink") {
                        out.push(Reading::new(id, metric, 0.0, now_ms));
                    }
                    continue;
                }
            };
            let converted = match *metric {
                m if m.ends_with("_pct") => normalize_activity_pct(value),
                "nvlink_tx_bytes" | "nvlink_rx_bytes" => value * 1024.0, // KiB counter
                _ => value,
            };
            if converted.is_finite() {
                out.push(Reading::new(id, metric, converted, now_ms));
            }
        }
    }
}

/// Profiling activity fields arrive as a ratio in [0, 1] on most drivers but
/// as a percentage on some older ones; normalize to percent.
fn normalize_activity_pct(raw: f64) -> f64 {
    let pct = if raw <= 1.0 { raw * 100.0 } else { raw };
    pct.clamp(0.0, 100.0)
}

fn sample_to_f64(value: &SampleValue) -> f64 {
    match value {
        SampleValue::F64(v) => *v,
        SampleValue::U32(v) => *v as f64,
        SampleValue::U64(v) => *v as f64,
        SampleValue::I64(v) => *v as f64,
    }
}

impl Source for NvmlSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        let now_ms = now_epoch_ms();
        let mut out = Vec::new();
        let mut alive = 0;
        for gpu in 0..self.device_count {
            let device = match self.nvml.device_by_index(gpu) {
                Ok(d) => d,
                Err(_) => continue,
            };
            alive += 1;
            let id = DeviceId::Gpu(gpu);
            if self.fine {
                self.poll_fine(&device, id, now_ms, &mut out);
            } else {
                self.poll_basic(&device, id, now_ms, &mut out);
            }
        }
        if alive == 0 {
            return Err(SourceError::Dead {
                name: self.descriptor.name.clone(),
                reason: "all GPU devices disappeared".to_string(),
            });
        }
        Ok(out)
    }

    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        (0..self.device_count)
            .filter_map(|gpu| {
                let name = self.nvml.device_by_index(gpu).ok()?.name().ok()?;
                Some((DeviceId::Gpu(gpu), name))
            })
            .collect()
    }
}
