//! Host CPU and memory usage from OS statistics (`/proc`).

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use super::{now_epoch_ms, LatencyClass, Reading, Source, SourceDescriptor, SourceError};
use crate::model::DeviceId;

const DEFAULT_ROOT: &str = "/proc";

#[derive(Debug, Clone, Copy, PartialEq)]
struct CpuTimes {
    busy: u64,
    total: u64,
}

/// `cpu_usage_pct` and `dram_usage_pct` from `/proc/stat` and
/// `/proc/meminfo`. CPU usage needs two samples, so the first poll omits it.
pub struct SystemSource {
    descriptor: SourceDescriptor,
    root: PathBuf,
    prev_cpu: Option<CpuTimes>,
}

impl SystemSource {
    pub fn open(root: Option<PathBuf>) -> Result<Self, SourceError> {
        let root = root.unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
        let unavailable = |reason: String| SourceError::Unavailable {
            kind: "system".to_string(),
            reason,
        };
        parse_cpu_times(
            &fs::read_to_string(root.join("stat"))
                .map_err(|e| unavailable(format!("{}/stat: {e}", root.display())))?,
        )
        .ok_or_else(|| unavailable("malformed /proc/stat".to_string()))?;
        parse_mem_usage_pct(
            &fs::read_to_string(root.join("meminfo"))
                .map_err(|e| unavailable(format!("{}/meminfo: {e}", root.display())))?,
        )
        .ok_or_else(|| unavailable("malformed /proc/meminfo".to_string()))?;

        let provided: BTreeSet<_> = [
            (DeviceId::Host, "cpu_usage_pct".to_string()),
            (DeviceId::Host, "dram_usage_pct".to_string()),
        ]
        .into();
        Ok(SystemSource {
            descriptor: SourceDescriptor {
                name: "system".to_string(),
                provided,
                latency_class: LatencyClass::Fast,
            },
            root,
            prev_cpu: None,
        })
    }
}

impl Source for SystemSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        let now_ms = now_epoch_ms();
        let mut readings = Vec::with_capacity(2);

        if let Some(cpu) = fs::read_to_string(self.root.join("stat"))
            .ok()
            .as_deref()
            .and_then(parse_cpu_times)
        {
            if let Some(prev) = self.prev_cpu {
                let dt = cpu.total.saturating_sub(prev.total);
                if dt > 0 {
                    let db = cpu.busy.saturating_sub(prev.busy);
                    let pct = (db as f64 / dt as f64 * 100.0).clamp(0.0, 100.0);
                    readings.push(Reading::new(DeviceId::Host, "cpu_usage_pct", pct, now_ms));
                }
            }
            self.prev_cpu = Some(cpu);
        }

        if let Some(pct) = fs::read_to_string(self.root.join("meminfo"))
            .ok()
            .as_deref()
            .and_then(parse_mem_usage_pct)
        {
            readings.push(Reading::new(DeviceId::Host, "dram_usage_pct", pct, now_ms));
        }

        if readings.is_empty() && self.prev_cpu.is_none() {
            return Err(SourceError::Dead {
                name: self.descriptor.name.clone(),
                reason: "proc statistics unreadable".to_string(),
            });
        }
        Ok(readings)
    }

    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        let model = fs::read_to_string(self.root.join("cpuinfo"))
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|m| m.trim().to_string())
            })
            .unwrap_or_else(|| "host".to_string());
        vec![(DeviceId::Host, model)]
    }
}

/// First `cpu` line of `/proc/stat`: user nice system idle iowait irq softirq
/// steal. Busy excludes idle and iowait.
fn parse_cpu_times(stat: &str) -> Option<CpuTimes> {
    let line = stat.lines().find(|l| l.starts_with("cpu "))?;
    let fields: Vec<u64> = line
        .split_whitespace()
        .skip(1)
        .filter_map(|f| f.parse().ok())
        .collect();
    if fields.len() < 4 {
        return None;
    }
    let total: u64 = fields.iter().take(8).sum();
    let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
    Some(CpuTimes { busy: total - idle, total })
}

fn parse_mem_usage_pct(meminfo: &str) -> Option<f64> {
    let field = |name: &str| {
        meminfo
            .lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse::<f64>().ok())
    };
    let total = field("MemTotal:")?;
    let available = field("MemAvailable:")?;
    if total <= 0.0 {
        return None;
    }
    Some(((1.0 - available / total) * 100.0).clamp(0.0, 100.0))
}
