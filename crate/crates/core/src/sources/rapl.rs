//! CPU/DRAM power from powercap-style cumulative energy counters.
//!
//! The adapter reads `energy_uj` files under `/sys/class/powercap`, converts
//! microjoules to joules, and normalizes consecutive readings into average
//! watts over the polling interval. Counter rollover is handled with each
//! domain's `max_energy_range_uj`.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use super::{now_epoch_ms, LatencyClass, Reading, Source, SourceDescriptor, SourceError};
use crate::model::DeviceId;
use crate::processing::counter_to_power;

const DEFAULT_ROOT: &str = "/sys/class/powercap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DomainRole {
    Package,
    Dram,
}

#[derive(Debug)]
struct Domain {
    energy_path: PathBuf,
    role: DomainRole,
    wrap_j: Option<f64>,
    prev: Option<(f64, i64)>,
    /// Accumulated energy since open, for diagnostics.
    total_j: f64,
}

/// Powercap energy-counter source: provides `cpu_power_w` and (when a dram
/// domain exists) `dram_power_w` on the host device.
#[derive(Debug)]
pub struct RaplSource {
    descriptor: SourceDescriptor,
    domains: Vec<Domain>,
}

impl RaplSource {
    pub fn open(root: Option<PathBuf>) -> Result<Self, SourceError> {
        let root = root.unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
        let unavailable = |reason: String| SourceError::Unavailable {
            kind: "cpu_energy".to_string(),
            reason,
        };

        let entries = fs::read_dir(&root)
            .map_err(|e| unavailable(format!("{}: {e}", root.display())))?;

        let mut domains = Vec::new();
        for entry in entries.flatten() {
            let dir = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(rest) = name.strip_prefix("intel-rapl:") else {
                continue;
            };
            let is_package = rest.chars().all(|c| c.is_ascii_digit());
            let role = if is_package {
                DomainRole::Package
            } else {
                let label = fs::read_to_string(dir.join("name")).unwrap_or_default();
                if label.trim() == "dram" {
                    DomainRole::Dram
                } else {
                    continue; // core/uncore/psys are inside or beside package scope
                }
            };
            let energy_path = dir.join("energy_uj");
            if let Err(e) = fs::read_to_string(&energy_path) {
                if e.kind() == std::io::ErrorKind::PermissionDenied {
                    return Err(unavailable(format!(
                        "permission denied reading {}",
                        energy_path.display()
                    )));
                }
                continue;
            }
            let wrap_j = fs::read_to_string(dir.join("max_energy_range_uj"))
                .ok()
                .and_then(|s| s.trim().parse::<f64>().ok())
                .map(|uj| uj / 1e6);
            domains.push(Domain { energy_path, role, wrap_j, prev: None, total_j: 0.0 });
        }

        if !domains.iter().any(|d| d.role == DomainRole::Package) {
            return Err(unavailable(format!(
                "no readable intel-rapl package domain under {}",
                root.display()
            )));
        }

        let mut provided: BTreeSet<_> = BTreeSet::new();
        provided.insert((DeviceId::Host, "cpu_power_w".to_string()));
        if domains.iter().any(|d| d.role == DomainRole::Dram) {
            provided.insert((DeviceId::Host, "dram_power_w".to_string()));
        }

        Ok(RaplSource {
            descriptor: SourceDescriptor {
                name: "cpu_energy".to_string(),
                provided,
                latency_class: LatencyClass::Fast,
            },
            domains,
        })
    }

    /// Joules accumulated per role since open. Exposed for diagnostics.
    pub fn totals_j(&self) -> (f64, f64) {
        let sum = |role| {
            self.domains
                .iter()
                .filter(|d| d.role == role)
                .map(|d| d.total_j)
                .sum()
        };
        (sum(DomainRole::Package), sum(DomainRole::Dram))
    }
}

impl Source for RaplSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        let now_ms = now_epoch_ms();
        let mut package_w: Option<f64> = None;
        let mut dram_w: Option<f64> = None;
        let mut any_readable = false;

        for domain in &mut self.domains {
            let raw = match fs::read_to_string(&domain.energy_path) {
                Ok(s) => s,
                Err(_) => continue, // this domain failed this tick; omit it
            };
            let Ok(uj) = raw.trim().parse::<f64>() else {
                continue;
            };
            any_readable = true;
            let joules = uj / 1e6;
            if let Some(prev) = domain.prev {
                if now_ms > prev.1 {
                    if let Ok(Some(watts)) = counter_to_power(prev, (joules, now_ms), domain.wrap_j)
                    {
                        let slot = match domain.role {
                            DomainRole::Package => &mut package_w,
                            DomainRole::Dram => &mut dram_w,
                        };
                        *slot = Some(slot.unwrap_or(0.0) + watts);
                        domain.total_j += watts * (now_ms - prev.1) as f64 / 1000.0;
                    }
                }
            }
            domain.prev = Some((joules, now_ms));
        }

        if !any_readable {
            return Err(SourceError::Dead {
                name: self.descriptor.name.clone(),
                reason: "all powercap domains unreadable".to_string(),
            });
        }

        let mut readings = Vec::new();
        if let Some(w) = package_w {
            readings.push(Reading::new(DeviceId::Host, "cpu_power_w", w, now_ms));
        }
        if let Some(w) = dram_w {
            readings.push(Reading::new(DeviceId::Host, "dram_power_w", w, now_ms));
        }
        Ok(readings)
    }
}

/// Lay out a fake powercap tree for tests.
#[cfg(test)]
pub(crate) fn fake_tree(root: &std::path::Path, package_uj: u64, dram_uj: u64, max_range_uj: u64) {
    let pkg = root.join("intel-rapl:0");
    fs::create_dir_all(&pkg).unwrap();
    fs::write(pkg.join("name"), "package-0").unwrap();
    fs::write(pkg.join("energy_uj"), package_uj.to_string()).unwrap();
    fs::write(pkg.join("max_energy_range_uj"), max_range_uj.to_string()).unwrap();

    let dram = root.join("intel-rapl:0:0");
    fs::create_dir_all(&dram).unwrap();
    fs::write(dram.join("name"), "dram").unwrap();
    fs::write(dram.join("energy_uj"), dram_uj.to_string()).unwrap();
    fs::write(dram.join("max_energy_range_uj"), max_range_uj.to_string()).unwrap();
}
