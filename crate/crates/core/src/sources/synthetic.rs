//! Deterministic synthetic trace generation: a phase program over the metric
//! catalog, with bounded uniform noise. Serves as the hardware-free provider
//! for tests, demos, and the bench harness.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{now_epoch_ms, LatencyClass, Reading, Source, SourceDescriptor, SourceError};
use crate::model::{descriptor, DeviceId, DeviceScope, MetricKind, Tick, Unit, CATALOG};

/// One phase of a synthetic trace: per-metric level and noise amplitude.
///
/// Levels use the metric's catalog unit; byte-counter levels are interpreted
/// as a rate in bytes/s and integrated into a monotone counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPhase {
    pub duration_s: f64,
    #[serde(default)]
    pub levels: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraceSpec {
    pub phases: Vec<SyntheticPhase>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticTraceSpec {
    /// Single constant phase over all defaults; handy for idle traces.
    pub fn constant(duration_s: f64, levels: &[(&str, f64)]) -> Self {
        SyntheticTraceSpec {
            phases: vec![SyntheticPhase {
                duration_s,
                levels: levels.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                noise: BTreeMap::new(),
            }],
            seed: 0,
        }
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if self.phases.is_empty() {
            return Err(SourceError::InvalidSpec("at least one phase required".into()));
        }
        for (i, phase) in self.phases.iter().enumerate() {
            if !(phase.duration_s > 0.0) || !phase.duration_s.is_finite() {
                return Err(SourceError::InvalidSpec(format!("phase {i}: duration must be positive")));
            }
            for (map, what) in [(&phase.levels, "level"), (&phase.noise, "noise")] {
                for (id, value) in map {
                    let desc = descriptor(id).ok_or_else(|| {
                        SourceError::InvalidSpec(format!("phase {i}: unknown metric `{id}`"))
                    })?;
                    if !value.is_finite() {
                        return Err(SourceError::InvalidSpec(format!(
                            "phase {i}: non-finite {what} for `{id}`"
                        )));
                    }
                    if what == "noise" && *value < 0.0 {
                        return Err(SourceError::InvalidSpec(format!(
                            "phase {i}: negative noise for `{id}`"
                        )));
                    }
                    if what == "level" && desc.unit == Unit::Percent && !(0.0..=100.0).contains(value) {
                        return Err(SourceError::InvalidSpec(format!(
                            "phase {i}: level for `{id}` outside [0, 100]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn phase_at(&self, t_s: f64) -> &SyntheticPhase {
        let mut end = 0.0;
        for phase in &self.phases {
            end += phase.duration_s;
            if t_s < end {
                return phase;
            }
        }
        self.phases.last().unwrap()
    }
}

/// Idle baseline used for metrics a phase does not mention.
fn default_level(id: &str) -> f64 {
    match id {
        "power_draw_w" => 60.0,
        "temperature_gpu_c" => 35.0,
        "cpu_power_w" => 120.0,
        "dram_power_w" => 9.0,
        "graphics_clock_mhz" | "sm_clock_mhz" => 1410.0,
        "memory_clock_mhz" => 1512.0,
        "memory_usage_pct" => 15.0,
        "temperature_memory_c" => 40.0,
        "pcie_link_gen" => 4.0,
        "pcie_link_width" => 16.0,
        "cpu_usage_pct" => 3.0,
        "dram_usage_pct" => 4.0,
        _ => 0.0,
    }
}

fn clamp_to_domain(unit: Unit, v: f64) -> f64 {
    match unit {
        Unit::Percent => v.clamp(0.0, 100.0),
        _ => v.max(0.0),
    }
}

fn device_for(id: &str) -> DeviceId {
    match descriptor(id).map(|d| d.device_scope) {
        Some(DeviceScope::Host) => DeviceId::Host,
        _ => DeviceId::Gpu(0),
    }
}

fn sample_value(phase: &SyntheticPhase, id: &str, unit: Unit, rng: &mut ChaCha8Rng) -> f64 {
    let level = phase.levels.get(id).copied().unwrap_or_else(|| default_level(id));
    let amp = phase.noise.get(id).copied().unwrap_or(0.0);
    let v = if amp > 0.0 {
        let dist = Uniform::new_inclusive(-amp, amp).expect("valid noise bounds");
        level + dist.sample(rng)
    } else {
        level
    };
    clamp_to_domain(unit, v)
}

/// Generate the full tick table of a spec at a fixed interval.
///
/// Ticks land on the `k·interval` grid strictly inside the trace duration, so
/// phase boundaries fall exactly at the cumulative phase durations. Output is
/// deterministic for a fixed seed.
pub fn generate_synthetic(
    spec: &SyntheticTraceSpec,
    interval_s: f64,
) -> Result<Vec<Tick>, SourceError> {
    spec.validate()?;
    if !(interval_s > 0.0) || !interval_s.is_finite() {
        return Err(SourceError::InvalidSpec("interval must be positive".into()));
    }
    let total = spec.total_duration_s();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counters: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut ticks = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t = k as f64 * interval_s;
        if t >= total - interval_s * 1e-9 {
            break;
        }
        let phase = spec.phase_at(t);
        let mut values = BTreeMap::new();
        for desc in &CATALOG {
            let device = device_for(desc.id);
            let value = match desc.kind {
                MetricKind::Gauge => sample_value(phase, desc.id, desc.unit, &mut rng),
                MetricKind::CumulativeCounter { .. } => {
                    let rate = sample_value(phase, desc.id, Unit::Count, &mut rng).max(0.0);
                    let counter = counters.entry(desc.id).or_insert(0.0);
                    if k > 0 {
                        *counter += rate * interval_s;
                    }
                    *counter
                }
            };
            values.insert((device, desc.id.to_string()), value);
        }
        ticks.push(Tick {
            wall_time_ms: (t * 1000.0).round() as i64,
            mono_elapsed_s: t,
            values,
        });
        k += 1;
    }
    Ok(ticks)
}

/// Poll-based synthetic provider covering all 26 catalog metrics on one
/// virtual GPU plus the host.
pub struct SyntheticSource {
    spec: SyntheticTraceSpec,
    descriptor: SourceDescriptor,
    opened: Instant,
    rng: ChaCha8Rng,
    counters: BTreeMap<&'static str, (f64, f64)>, // id -> (value, last_poll_t)
}

impl SyntheticSource {
    pub fn open(spec: SyntheticTraceSpec) -> Result<Self, SourceError> {
        let ids: Vec<&str> = CATALOG.iter().map(|d| d.id).collect();
        Self::covering(spec, &ids)
    }

    /// Synthetic source restricted to a subset of catalog metrics, so it can
    /// fill exactly the gap other sources leave without claim conflicts.
    pub fn covering(spec: SyntheticTraceSpec, metric_ids: &[&str]) -> Result<Self, SourceError> {
        spec.validate()?;
        let mut provided = BTreeSet::new();
        for id in metric_ids {
            let desc = descriptor(id)
                .ok_or_else(|| SourceError::InvalidSpec(format!("unknown metric `{id}`")))?;
            provided.insert((device_for(desc.id), desc.id.to_string()));
        }
        if provided.is_empty() {
            return Err(SourceError::InvalidSpec("synthetic source covers no metrics".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(SyntheticSource {
            spec,
            descriptor: SourceDescriptor {
                name: "synthetic".to_string(),
                provided,
                latency_class: LatencyClass::Fast,
            },
            opened: Instant::now(),
            rng,
            counters: BTreeMap::new(),
        })
    }
}

impl Source for SyntheticSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        let t = self.opened.elapsed().as_secs_f64();
        let phase = self.spec.phase_at(t);
        let now_ms = now_epoch_ms();
        let mut readings = Vec::with_capacity(self.descriptor.provided.len());
        for desc in &CATALOG {
            let device = device_for(desc.id);
            if !self.descriptor.provided.contains(&(device, desc.id.to_string())) {
                continue;
            }
            let value = match desc.kind {
                MetricKind::Gauge => sample_value(phase, desc.id, desc.unit, &mut self.rng),
                MetricKind::CumulativeCounter { .. } => {
                    let rate = sample_value(phase, desc.id, Unit::Count, &mut self.rng).max(0.0);
                    let (value, last_t) = self.counters.get(desc.id).copied().unwrap_or((0.0, t));
                    let advanced = value + rate * (t - last_t).max(0.0);
                    self.counters.insert(desc.id, (advanced, t));
                    advanced
                }
            };
            readings.push(Reading::new(device, desc.id, value, now_ms));
        }
        Ok(readings)
    }

    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        vec![
            (DeviceId::Gpu(0), "Synthetic GPU".to_string()),
            (DeviceId::Host, "Synthetic Host".to_string()),
        ]
    }
}
