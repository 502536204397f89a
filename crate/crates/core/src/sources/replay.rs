//! Trace replay: feed a recorded session back through the pipeline, either
//! live (a [`Source`] driven by the wall clock) or virtually (resampling the
//! tick table onto a new grid).
//!
//! Replay is a step function: the value at time `t` is the latest recorded
//! row at or before `t`.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use super::{now_epoch_ms, LatencyClass, Reading, Source, SourceDescriptor, SourceError};
use crate::model::{descriptor, DeviceId, SessionData, Tick};
use crate::persistence;

/// Latest tick at or before `t` (with a small tolerance so grid arithmetic
/// cannot miss an exactly-coincident row).
fn step_lookup<'t>(ticks: &'t [Tick], t: f64, eps: f64) -> Option<&'t Tick> {
    let limit = t + eps;
    match ticks.binary_search_by(|tick| tick.mono_elapsed_s.partial_cmp(&limit).unwrap()) {
        Ok(i) => Some(&ticks[i]),
        Err(0) => None,
        Err(i) => Some(&ticks[i - 1]),
    }
}

/// Live replay source over a stored session.
pub struct ReplaySource {
    descriptor: SourceDescriptor,
    ticks: Vec<Tick>,
    first_mono_s: f64,
    opened: Instant,
    inventory: Vec<(DeviceId, String)>,
}

impl ReplaySource {
    /// Open a session directory; provided metrics are exactly the file's
    /// columns. The replay clock starts at the trace's first tick.
    pub fn open(session_dir: &Path) -> Result<Self, SourceError> {
        let (session, _report) = persistence::read_session(session_dir).map_err(|e| {
            SourceError::Unavailable { kind: "replay".to_string(), reason: e.to_string() }
        })?;
        if session.ticks.is_empty() {
            return Err(SourceError::Unavailable {
                kind: "replay".to_string(),
                reason: "trace has no ticks".to_string(),
            });
        }
        let meta = persistence::read_meta(&persistence::SessionLayout::new(session_dir))
            .map_err(|e| SourceError::Unavailable { kind: "replay".to_string(), reason: e.to_string() })?;
        let provided: BTreeSet<_> = meta
            .series_keys()
            .into_iter()
            .filter(|(_, metric)| descriptor(metric).is_some())
            .collect();
        if provided.is_empty() {
            return Err(SourceError::Unavailable {
                kind: "replay".to_string(),
                reason: "trace declares no catalog metrics".to_string(),
            });
        }
        let first_mono_s = session.ticks[0].mono_elapsed_s;
        Ok(ReplaySource {
            descriptor: SourceDescriptor {
                name: format!("replay:{}", session.id),
                provided,
                latency_class: LatencyClass::Fast,
            },
            inventory: session.device_inventory.clone().into_iter().collect(),
            ticks: session.ticks,
            first_mono_s,
            opened: Instant::now(),
        })
    }

    fn row_at(&self, elapsed_s: f64) -> Option<&Tick> {
        step_lookup(&self.ticks, self.first_mono_s + elapsed_s, 1e-9)
    }
}

impl Source for ReplaySource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn poll(&mut self) -> Result<Vec<Reading>, SourceError> {
        let elapsed = self.opened.elapsed().as_secs_f64();
        let now_ms = now_epoch_ms();
        let row = match self.row_at(elapsed) {
            Some(row) => row,
            None => return Ok(Vec::new()),
        };
        Ok(row
            .values
            .iter()
            .filter_map(|((device, metric), value)| {
                let id = descriptor(metric)?.id;
                Some(Reading::new(*device, id, *value, now_ms))
            })
            .collect())
    }

    fn device_inventory(&self) -> Vec<(DeviceId, String)> {
        self.inventory.clone()
    }
}

/// Resample a session's ticks onto a `k·interval` grid (virtual-time replay).
///
/// Grid points that coincide with a recorded row (within float tolerance)
/// reuse that row verbatim, so resampling at the original interval is the
/// identity.
pub fn resample_ticks(session: &SessionData, interval_s: f64) -> Vec<Tick> {
    let Some(first) = session.ticks.first() else {
        return Vec::new();
    };
    let last = session.ticks.last().unwrap();
    let t0 = first.mono_elapsed_s;
    let span = last.mono_elapsed_s - t0;
    let eps = interval_s * 1e-6;

    let mut out = Vec::new();
    let mut k: u64 = 0;
    loop {
        let t = t0 + k as f64 * interval_s;
        if t > t0 + span + eps {
            break;
        }
        if let Some(row) = step_lookup(&session.ticks, t, eps) {
            if (row.mono_elapsed_s - t).abs() <= eps {
                out.push(row.clone());
            } else {
                out.push(Tick {
                    wall_time_ms: session.started_wall_ms + (t * 1000.0).round() as i64,
                    mono_elapsed_s: t,
                    values: row.values.clone(),
                });
            }
        }
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceId, SamplingConfig};
    use crate::persistence::{SessionMeta, SessionWriter};
    use crate::sources::synthetic::{generate_synthetic, SyntheticTraceSpec};

    fn write_trace(dir: &Path, interval_s: f64) -> (std::path::PathBuf, Vec<Tick>) {
        let spec = SyntheticTraceSpec::constant(1.0, &[("power_draw_w", 200.0)]);
        let ticks = generate_synthetic(&spec, interval_s).unwrap();
        let mut config = SamplingConfig::new(0.1, "all", dir).unwrap();
        config.interval_s = interval_s;
        config.devices = vec![DeviceId::Host, DeviceId::Gpu(0)];
        let meta = SessionMeta::new("20240101T000000Z-feed".into(), 0, config);
        let mut writer = SessionWriter::create(&meta).unwrap();
        for t in &ticks {
            writer.append_tick(t).unwrap();
        }
        writer.finalize(&meta).unwrap();
        (writer.layout().root.clone(), ticks)
    }

    #[test]
    fn provided_metrics_match_file_columns() {
        let dir = tempfile::tempdir().unwrap();
        let (root, _) = write_trace(dir.path(), 0.1);
        let source = ReplaySource::open(&root).unwrap();
        // all 26 metrics were selected: 4 host + 22 per-gpu series
        assert_eq!(source.descriptor().provided.len(), 26);
    }

    #[test]
    fn step_rule_picks_latest_at_or_before() {
        let dir = tempfile::tempdir().unwrap();
        let (root, ticks) = write_trace(dir.path(), 0.1);
        let source = ReplaySource::open(&root).unwrap();
        let row = source.row_at(0.25).unwrap();
        assert_eq!(row.mono_elapsed_s, 0.2);
        assert_eq!(ticks.iter().find(|t| t.mono_elapsed_s == 0.2).unwrap().values, row.values);
    }

    #[test]
    fn before_first_row_returns_nothing() {
        let spec = SyntheticTraceSpec::constant(1.0, &[]);
        let mut ticks = generate_synthetic(&spec, 0.1).unwrap();
        // shift the trace so it starts at 0.5s
        for t in &mut ticks {
            t.mono_elapsed_s += 0.5;
        }
        assert!(step_lookup(&ticks, 0.3, 1e-9).is_none());
    }

    #[test]
    fn replay_of_generated_trace_reproduces_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticTraceSpec {
            phases: vec![super::super::synthetic::SyntheticPhase {
                duration_s: 1.0,
                levels: [("tensor_active_pct".to_string(), 61.5)].into(),
                noise: [("power_draw_w".to_string(), 10.0)].into(),
            }],
            seed: 9,
        };
        let ticks = generate_synthetic(&spec, 0.1).unwrap();
        let mut config = SamplingConfig::new(0.1, "all", dir.path()).unwrap();
        config.devices = vec![DeviceId::Host, DeviceId::Gpu(0)];
        let meta = SessionMeta::new("20240101T000000Z-cafe".into(), 0, config);
        let mut writer = SessionWriter::create(&meta).unwrap();
        for t in &ticks {
            writer.append_tick(t).unwrap();
        }
        writer.finalize(&meta).unwrap();

        let source = ReplaySource::open(&writer.layout().root).unwrap();
        for tick in &ticks {
            let row = source.row_at(tick.mono_elapsed_s).unwrap();
            assert_eq!(row.values, tick.values);
        }
    }

    #[test]
    fn resample_at_original_interval_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (root, ticks) = write_trace(dir.path(), 0.1);
        let (session, _) = persistence::read_session(&root).unwrap();
        let resampled = resample_ticks(&session, 0.1);
        assert_eq!(resampled, ticks);
    }

    #[test]
    fn resample_coarser_takes_every_other_row() {
        let dir = tempfile::tempdir().unwrap();
        let (root, ticks) = write_trace(dir.path(), 0.1);
        let (session, _) = persistence::read_session(&root).unwrap();
        let resampled = resample_ticks(&session, 0.2);
        assert_eq!(resampled.len(), 5);
        assert_eq!(resampled[1], ticks[2]);
    }
}
