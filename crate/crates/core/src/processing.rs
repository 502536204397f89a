//! Numeric pipeline: counter normalization, energy integration, unit
//! conversion, and carbon estimation.
//!
//! All functions here are pure. Counter anomalies (negative deltas without a
//! declared wrap range) surface as absent values rather than fabricated zeros.

use serde::{Deserialize, Serialize};

use crate::carbon::IntensityRecord;
use crate::model::{DeviceId, SessionData};

pub const JOULES_PER_WH: f64 = 3600.0;
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProcessingError {
    #[error("timestamps not increasing: {prev_ms} -> {curr_ms}")]
    NonIncreasingTime { prev_ms: i64, curr_ms: i64 },
    #[error("time delta must be positive")]
    NonPositiveDelta,
    #[error("energy integration needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("series timestamps must be strictly increasing")]
    UnorderedSeries,
    #[error("negative energy value")]
    NegativeEnergy,
    #[error("session has fewer than 2 ticks")]
    EmptySession,
}

/// Average power over the interval between two cumulative energy readings.
///
/// A drop in the counter is treated as one rollover when `wrap_range_j` is
/// declared; without it the sample is flagged as absent (`Ok(None)`).
pub fn counter_to_power(
    prev: (f64, i64),
    curr: (f64, i64),
    wrap_range_j: Option<f64>,
) -> Result<Option<f64>, ProcessingError> {
    let (prev_j, prev_ms) = prev;
    let (curr_j, curr_ms) = curr;
    if curr_ms <= prev_ms {
        return Err(ProcessingError::NonIncreasingTime { prev_ms, curr_ms });
    }
    let dt_s = (curr_ms - prev_ms) as f64 / 1000.0;
    let delta_j = if curr_j < prev_j {
        match wrap_range_j {
            Some(wrap) => (wrap - prev_j) + curr_j,
            None => return Ok(None),
        }
    } else {
        curr_j - prev_j
    };
    Ok(Some(delta_j / dt_s))
}

/// Byte-counter delta expressed as GB/s, with the same wrap policy as
/// [`counter_to_power`].
pub fn counter_to_rate(
    prev_bytes: f64,
    curr_bytes: f64,
    dt_s: f64,
    wrap_range: Option<f64>,
) -> Result<Option<f64>, ProcessingError> {
    if !(dt_s > 0.0) {
        return Err(ProcessingError::NonPositiveDelta);
    }
    let delta = if curr_bytes < prev_bytes {
        match wrap_range {
            Some(wrap) => (wrap - prev_bytes) + curr_bytes,
            None => return Ok(None),
        }
    } else {
        curr_bytes - prev_bytes
    };
    Ok(Some(delta / dt_s / 1e9))
}

/// Trapezoidal integral of a (seconds, watts) series, in joules.
pub fn integrate_energy(series: &[(f64, f64)]) -> Result<f64, ProcessingError> {
    if series.len() < 2 {
        return Err(ProcessingError::TooFewPoints(series.len()));
    }
    let mut joules = 0.0;
    for pair in series.windows(2) {
        let (t0, p0) = pair[0];
        let (t1, p1) = pair[1];
        if t1 <= t0 {
            return Err(ProcessingError::UnorderedSeries);
        }
        joules += 0.5 * (p0 + p1) * (t1 - t0);
    }
    Ok(joules)
}

pub fn joules_to_wh(joules: f64) -> Result<f64, ProcessingError> {
    if joules < 0.0 {
        return Err(ProcessingError::NegativeEnergy);
    }
    Ok(joules / JOULES_PER_WH)
}

/// Operational carbon in kg CO2eq from energy in joules and an intensity in
/// gCO2eq/kWh.
pub fn estimate_carbon(energy_j: f64, intensity: &IntensityRecord) -> f64 {
    energy_j * intensity.value / JOULES_PER_KWH / 1000.0
}

/// Session-level energy and carbon totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub duration_s: f64,
    pub cpu_energy_j: Option<f64>,
    pub dram_energy_j: Option<f64>,
    /// Per-GPU energy keyed by device index, ascending.
    pub gpu_energy_j: Vec<(u32, f64)>,
    pub total_energy_j: f64,
    pub total_energy_wh: f64,
    pub carbon_kg: Option<f64>,
    pub intensity_used: Option<IntensityRecord>,
    /// Components whose power series was missing or too short to integrate.
    pub absent_components: Vec<String>,
}

/// Integrate per-component power series into session totals.
///
/// CPU and DRAM come from their normalized power series, each GPU from its
/// `power_draw_w` series. A component without a usable series is excluded
/// from the sum and listed in `absent_components`.
pub fn compute_totals(
    session: &SessionData,
    intensity: Option<&IntensityRecord>,
) -> Result<EnergyTotals, ProcessingError> {
    if session.ticks.len() < 2 {
        return Err(ProcessingError::EmptySession);
    }
    let mut absent = Vec::new();
    let mut total = 0.0;

    let mut component = |series: Vec<(f64, f64)>, name: &str| -> Option<f64> {
        match integrate_energy(&series) {
            Ok(j) => {
                total += j;
                Some(j)
            }
            Err(_) => {
                absent.push(name.to_string());
                None
            }
        }
    };

    let cpu = component(session.series(DeviceId::Host, "cpu_power_w"), "cpu");
    let dram = component(session.series(DeviceId::Host, "dram_power_w"), "dram");
    let mut gpus = Vec::new();
    for dev in session.gpu_devices() {
        let idx = match dev {
            DeviceId::Gpu(i) => i,
            DeviceId::Host => continue,
        };
        if let Some(j) = component(session.series(dev, "power_draw_w"), &format!("gpu{idx}")) {
            gpus.push((idx, j));
        }
    }

    let carbon_kg = intensity.map(|rec| estimate_carbon(total, rec));
    Ok(EnergyTotals {
        duration_s: session.duration_s(),
        cpu_energy_j: cpu,
        dram_energy_j: dram,
        gpu_energy_j: gpus,
        total_energy_j: total,
        total_energy_wh: total / JOULES_PER_WH,
        carbon_kg,
        intensity_used: intensity.cloned(),
        absent_components: absent,
    })
}

/// Convert a cumulative byte-counter series into a GB/s rate series aligned
/// to the same ticks. The first tick (no predecessor) is absent, as is any
/// tick where either endpoint of the interval is missing.
pub fn counter_series_to_rates(
    times_s: &[f64],
    counters: &[Option<f64>],
    wrap_range: Option<f64>,
) -> Vec<Option<f64>> {
    let mut rates = vec![None; counters.len()];
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..counters.len() {
        match counters[i] {
            Some(v) => {
                if let Some((pt, pv)) = prev {
                    let dt = times_s[i] - pt;
                    if dt > 0.0 {
                        rates[i] = counter_to_rate(pv, v, dt, wrap_range).unwrap_or(None);
                    }
                }
                prev = Some((times_s[i], v));
            }
            None => {
                // gap: the next present value restarts the differencing
                prev = None;
            }
        }
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carbon::{IntensityKind, IntensityRecord, IntensitySource};

    fn intensity(value: f64) -> IntensityRecord {
        IntensityRecord {
            value,
            kind: IntensityKind::Marginal,
            zone: "test".into(),
            valid_at_ms: 0,
            source: IntensitySource::Static,
        }
    }

    #[test]
    fn counter_to_power_basic() {
        let w = counter_to_power((1000.0, 0), (1012.0, 100), None).unwrap().unwrap();
        assert!((w - 120.0).abs() < 1e-12);
    }

    #[test]
    fn counter_to_power_wraps() {
        let w = counter_to_power((262140.0, 0), (5.0, 1000), Some(262143.0)).unwrap().unwrap();
        assert!((w - 8.0).abs() < 1e-12);
    }

    #[test]
    fn counter_to_power_negative_without_wrap_is_absent() {
        let w = counter_to_power((1000.0, 0), (990.0, 100), None).unwrap();
        assert_eq!(w, None);
    }

    #[test]
    fn counter_to_power_rejects_non_increasing_time() {
        assert!(counter_to_power((1.0, 100), (2.0, 100), None).is_err());
    }

    #[test]
    fn counter_to_rate_examples() {
        let r = counter_to_rate(1.0e9, 1.1e9, 1.0, None).unwrap().unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        let zero = counter_to_rate(5e8, 5e8, 0.1, None).unwrap().unwrap();
        assert_eq!(zero, 0.0);
        let reset = counter_to_rate(9e9, 1e9, 1.0, None).unwrap();
        assert_eq!(reset, None);
    }

    #[test]
    fn integrate_constant_power() {
        let j = integrate_energy(&[(0.0, 100.0), (0.1, 100.0), (0.2, 100.0)]).unwrap();
        assert!((j - 20.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_ramp() {
        let j = integrate_energy(&[(0.0, 0.0), (1.0, 200.0)]).unwrap();
        assert!((j - 100.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_single_point_errors() {
        assert_eq!(integrate_energy(&[(0.0, 1.0)]), Err(ProcessingError::TooFewPoints(1)));
    }

    #[test]
    fn integrate_tracks_analytic_ramp_closely() {
        // p(t) = 50 + 30t sampled at 0.1s over [0, 10]: trapezoid is exact for
        // linear integrands, so the check is tight.
        let series: Vec<(f64, f64)> = (0..=100)
            .map(|k| {
                let t = k as f64 * 0.1;
                (t, 50.0 + 30.0 * t)
            })
            .collect();
        let j = integrate_energy(&series).unwrap();
        let analytic = 50.0 * 10.0 + 0.5 * 30.0 * 100.0;
        assert!((j - analytic).abs() / analytic < 1e-12);
    }

    #[test]
    fn joules_to_wh_values() {
        assert!((joules_to_wh(7485.0).unwrap() - 2.0791666666666666).abs() < 1e-12);
        assert_eq!(joules_to_wh(3600.0).unwrap(), 1.0);
        assert_eq!(joules_to_wh(0.0).unwrap(), 0.0);
        assert!(joules_to_wh(-1.0).is_err());
    }

    #[test]
    fn carbon_examples() {
        let g = estimate_carbon(7485.0, &intensity(495.4)) * 1000.0;
        assert!((g - 1.03).abs() < 0.005);
        let g = estimate_carbon(7485.0, &intensity(33.7)) * 1000.0;
        assert!((g - 0.07).abs() < 0.005);
        let kg = estimate_carbon(15655.86, &intensity(460.0));
        assert_eq!(format!("{kg:.4}"), "0.0020");
    }

    #[test]
    fn carbon_linearity() {
        let rec = intensity(421.7);
        let base = estimate_carbon(1234.5, &rec);
        for a in [0.0, 0.5, 2.0, 17.25] {
            let scaled = estimate_carbon(a * 1234.5, &rec);
            assert!((scaled - a * base).abs() <= 1e-12 * base.abs().max(scaled.abs()));
        }
    }

    #[test]
    fn rate_series_restarts_after_gap() {
        let times = [0.0, 1.0, 2.0, 3.0];
        let counters = [Some(0.0), Some(1e9), None, Some(5e9)];
        let rates = counter_series_to_rates(&times, &counters, None);
        assert_eq!(rates[0], None);
        assert_eq!(rates[1], Some(1.0));
        assert_eq!(rates[2], None);
        assert_eq!(rates[3], None); // predecessor lost in the gap
    }
}
