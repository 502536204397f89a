//! Durable session storage: one directory per session holding `meta.json`
//! (the schema authority) and `samples.csv` (the tick table), plus report
//! artifacts added later.
//!
//! The CSV dialect is RFC 4180, UTF-8, LF line endings, header mandatory.
//! Floats are written in shortest round-trip form; absent values are empty
//! cells. `meta.json` fully determines the column list and order — readers
//! never infer schema from data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{TimeZone, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::carbon::IntensityRecord;
use crate::model::{
    CadenceStats, DeadSource, DeviceId, SamplingConfig, SeriesKey, SessionData, Tick,
};
use crate::processing;

#[derive(Debug, thiserror::Error)]
pub enum PersistenceError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("`{0}` does not contain a session (meta.json missing or unreadable)")]
    MetaMissing(PathBuf),
    #[error("meta.json is malformed: {0}")]
    MetaFormat(String),
    #[error("samples.csv header disagrees with meta.json: missing {missing:?}, unexpected {extra:?}")]
    HeaderMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("samples.csv is missing")]
    SamplesMissing,
    #[error("writer is in failed state")]
    WriterFailed,
    #[error("could not create session directory under {0}")]
    DirCreate(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io { path: path.to_path_buf(), source }
}

/// On-disk layout of one session.
#[derive(Debug, Clone)]
pub struct SessionLayout {
    pub root: PathBuf,
}

impl SessionLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionLayout { root: root.into() }
    }

    pub fn meta_path(&self) -> PathBuf {
        self.root.join("meta.json")
    }

    pub fn samples_path(&self) -> PathBuf {
        self.root.join("samples.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }
}

/// `<UTC start>-<4 hex chars>`, e.g. `20250612T093011Z-4fa2`.
pub fn new_session_id(started_wall_ms: i64) -> String {
    let stamp = Utc
        .timestamp_millis_opt(started_wall_ms)
        .single()
        .unwrap_or_else(Utc::now)
        .format("%Y%m%dT%H%M%SZ");
    let mut bytes = [0u8; 2];
    rand::rng().fill_bytes(&mut bytes);
    format!("{stamp}-{:02x}{:02x}", bytes[0], bytes[1])
}

/// CSV column name for a series: host metrics are bare, per-GPU metrics get a
/// `g{i}_` prefix.
pub fn column_name(key: &SeriesKey) -> String {
    format!("{}{}", key.0.column_prefix(), key.1)
}

/// Inverse of [`column_name`].
pub fn parse_column(name: &str) -> Option<SeriesKey> {
    if let Some(rest) = name.strip_prefix('g') {
        if let Some(pos) = rest.find('_') {
            if let Ok(idx) = rest[..pos].parse::<u32>() {
                return Some((DeviceId::Gpu(idx), rest[pos + 1..].to_string()));
            }
        }
    }
    Some((DeviceId::Host, name.to_string()))
}

/// Everything `meta.json` records about a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub started_wall_ms: i64,
    pub ended_wall_ms: Option<i64>,
    pub config: SamplingConfig,
    /// Full CSV header, in order: the two timestamp columns then one column
    /// per recorded series.
    pub columns: Vec<String>,
    pub device_inventory: BTreeMap<String, String>,
    /// Column names of selected series no source could provide.
    pub uncollected: Vec<String>,
    pub dead_sources: Vec<DeadSource>,
    pub overrun_count: u64,
    pub dropped_tick_count: u64,
    pub cadence: CadenceStats,
    pub intensity: Option<IntensityRecord>,
}

pub const TIME_COLUMNS: [&str; 2] = ["wall_time_ms", "mono_elapsed_s"];

impl SessionMeta {
    pub fn new(id: String, started_wall_ms: i64, config: SamplingConfig) -> Self {
        let columns: Vec<String> = TIME_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(config.series_keys().iter().map(column_name))
            .collect();
        SessionMeta {
            id,
            started_wall_ms,
            ended_wall_ms: None,
            config,
            columns,
            device_inventory: BTreeMap::new(),
            uncollected: Vec::new(),
            dead_sources: Vec::new(),
            overrun_count: 0,
            dropped_tick_count: 0,
            cadence: CadenceStats::default(),
            intensity: None,
        }
    }

    /// The series keys behind the data columns, in column order.
    pub fn series_keys(&self) -> Vec<SeriesKey> {
        self.columns
            .iter()
            .skip(TIME_COLUMNS.len())
            .filter_map(|c| parse_column(c))
            .collect()
    }
}

/// Streaming writer for one session: creates the directory, writes the
/// initial `meta.json`, and appends one CSV row per tick.
pub struct SessionWriter {
    layout: SessionLayout,
    keys: Vec<SeriesKey>,
    csv: csv::Writer<fs::File>,
    rows_since_flush: usize,
    last_flush: Instant,
    failed: bool,
}

const FLUSH_EVERY_ROWS: usize = 50;
const FLUSH_EVERY_SECS: f64 = 1.0;

impl SessionWriter {
    /// Create `<output_dir>/<session_id>/` and open the sample stream.
    pub fn create(meta: &SessionMeta) -> Result<Self, PersistenceError> {
        let output_dir = &meta.config.output_dir;
        fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
        let root = output_dir.join(&meta.id);
        fs::create_dir(&root).map_err(|_| PersistenceError::DirCreate(output_dir.clone()))?;
        let layout = SessionLayout::new(root);

        write_meta(&layout, meta)?;

        let samples = layout.samples_path();
        let file = fs::File::create(&samples).map_err(io_err(&samples))?;
        let mut csv = csv::WriterBuilder::new().from_writer(file);
        csv.write_record(&meta.columns)
            .and_then(|_| csv.flush().map_err(csv::Error::from))
            .map_err(|e| PersistenceError::Io {
                path: samples,
                source: std::io::Error::other(e),
            })?;

        Ok(SessionWriter {
            layout,
            keys: meta.series_keys(),
            csv,
            rows_since_flush: 0,
            last_flush: Instant::now(),
            failed: false,
        })
    }

    pub fn layout(&self) -> &SessionLayout {
        &self.layout
    }

    /// Append exactly one row. After an I/O failure the writer stays failed
    /// and every further append reports [`PersistenceError::WriterFailed`].
    pub fn append_tick(&mut self, tick: &Tick) -> Result<(), PersistenceError> {
        if self.failed {
            return Err(PersistenceError::WriterFailed);
        }
        let mut record = Vec::with_capacity(2 + self.keys.len());
        record.push(tick.wall_time_ms.to_string());
        record.push(format!("{}", tick.mono_elapsed_s));
        for key in &self.keys {
            match tick.values.get(key) {
                Some(v) => record.push(format!("{v}")),
                None => record.push(String::new()),
            }
        }
        let result = self.csv.write_record(&record).and_then(|_| {
            self.rows_since_flush += 1;
            if self.rows_since_flush >= FLUSH_EVERY_ROWS
                || self.last_flush.elapsed().as_secs_f64() >= FLUSH_EVERY_SECS
            {
                self.rows_since_flush = 0;
                self.last_flush = Instant::now();
                self.csv.flush().map_err(csv::Error::from)
            } else {
                Ok(())
            }
        });
        if let Err(e) = result {
            self.failed = true;
            return Err(PersistenceError::Io {
                path: self.layout.samples_path(),
                source: std::io::Error::other(e),
            });
        }
        Ok(())
    }

    /// Flush samples and store the final metadata.
    pub fn finalize(&mut self, meta: &SessionMeta) -> Result<(), PersistenceError> {
        self.csv.flush().map_err(io_err(&self.layout.samples_path()))?;
        write_meta(&self.layout, meta)
    }
}

pub fn write_meta(layout: &SessionLayout, meta: &SessionMeta) -> Result<(), PersistenceError> {
    let path = layout.meta_path();
    let mut body = serde_json::to_vec_pretty(meta).map_err(|e| PersistenceError::MetaFormat(e.to_string()))?;
    body.push(b'\n');
    let mut file = fs::File::create(&path).map_err(io_err(&path))?;
    file.write_all(&body).map_err(io_err(&path))
}

pub fn read_meta(layout: &SessionLayout) -> Result<SessionMeta, PersistenceError> {
    let path = layout.meta_path();
    let bytes = fs::read(&path).map_err(|_| PersistenceError::MetaMissing(layout.root.clone()))?;
    serde_json::from_slice(&bytes).map_err(|e| PersistenceError::MetaFormat(e.to_string()))
}

/// Side channel of [`read_session`]: rows that had to be skipped.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ReadReport {
    pub skipped_rows: usize,
    pub warnings: Vec<String>,
}

/// Reconstruct a full [`SessionData`] from a session directory.
///
/// The header must match the meta column declaration exactly. Corrupt rows
/// (truncated trailer, unparseable numbers, out-of-order timestamps) are
/// skipped and counted, never silently patched.
pub fn read_session(path: impl AsRef<Path>) -> Result<(SessionData, ReadReport), PersistenceError> {
    let layout = SessionLayout::new(path.as_ref());
    let meta = read_meta(&layout)?;

    let samples = layout.samples_path();
    let file = fs::File::open(&samples).map_err(|_| PersistenceError::SamplesMissing)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| PersistenceError::MetaFormat(format!("csv header unreadable: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != meta.columns {
        let missing = meta.columns.iter().filter(|c| !header.contains(c)).cloned().collect();
        let extra = header.iter().filter(|c| !meta.columns.contains(*c)).cloned().collect();
        return Err(PersistenceError::HeaderMismatch { missing, extra });
    }

    let keys = meta.series_keys();
    let mut report = ReadReport::default();
    let mut ticks: Vec<Tick> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after header
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.skipped_rows += 1;
                report.warnings.push(format!("row {line}: unreadable ({e})"));
                continue;
            }
        };
        match parse_row(&record, &keys) {
            Ok(tick) => {
                if let Some(last) = ticks.last() {
                    if tick.mono_elapsed_s <= last.mono_elapsed_s {
                        report.skipped_rows += 1;
                        report.warnings.push(format!("row {line}: non-increasing mono_elapsed_s"));
                        continue;
                    }
                }
                ticks.push(tick);
            }
            Err(reason) => {
                report.skipped_rows += 1;
                report.warnings.push(format!("row {line}: {reason}"));
            }
        }
    }

    let mut session = SessionData {
        id: meta.id.clone(),
        config: meta.config.clone(),
        device_inventory: meta
            .device_inventory
            .iter()
            .filter_map(|(label, model)| Some((parse_device_label(label)?, model.clone())))
            .collect(),
        ticks,
        overrun_count: meta.overrun_count,
        dropped_tick_count: meta.dropped_tick_count,
        uncollected: meta.uncollected.iter().filter_map(|c| parse_column(c)).collect(),
        dead_sources: meta.dead_sources.clone(),
        started_wall_ms: meta.started_wall_ms,
        ended_wall_ms: meta.ended_wall_ms,
        cadence: meta.cadence,
        totals: None,
    };
    if session.ticks.len() >= 2 {
        session.totals = processing::compute_totals(&session, meta.intensity.as_ref()).ok();
    }
    Ok((session, report))
}

fn parse_device_label(label: &str) -> Option<DeviceId> {
    if label == "host" {
        return Some(DeviceId::Host);
    }
    label.strip_prefix("gpu").and_then(|i| i.parse().ok()).map(DeviceId::Gpu)
}

fn parse_row(record: &csv::StringRecord, keys: &[SeriesKey]) -> Result<Tick, String> {
    if record.len() != keys.len() + TIME_COLUMNS.len() {
        return Err(format!(
            "expected {} fields, found {}",
            keys.len() + TIME_COLUMNS.len(),
            record.len()
        ));
    }
    let wall_time_ms: i64 = record[0].parse().map_err(|_| format!("bad wall_time_ms `{}`", &record[0]))?;
    let mono_elapsed_s: f64 = record[1].parse().map_err(|_| format!("bad mono_elapsed_s `{}`", &record[1]))?;
    let mut values = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        let cell = &record[i + TIME_COLUMNS.len()];
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell.parse().map_err(|_| format!("bad value `{cell}` in column {}", i + 3))?;
        if !v.is_finite() {
            return Err(format!("non-finite value in column {}", i + 3));
        }
        values.insert(key.clone(), v);
    }
    Ok(Tick { wall_time_ms, mono_elapsed_s, values })
}

/// Build the `SessionData` counterpart of a meta + tick set without touching
/// disk. Used by the collector at stop time and by tests.
pub fn assemble_session(meta: &SessionMeta, ticks: Vec<Tick>) -> SessionData {
    SessionData {
        id: meta.id.clone(),
        config: meta.config.clone(),
        device_inventory: meta
            .device_inventory
            .iter()
            .filter_map(|(label, model)| Some((parse_device_label(label)?, model.clone())))
            .collect(),
        ticks,
        overrun_count: meta.overrun_count,
        dropped_tick_count: meta.dropped_tick_count,
        uncollected: meta.uncollected.iter().filter_map(|c| parse_column(c)).collect(),
        dead_sources: meta.dead_sources.clone(),
        started_wall_ms: meta.started_wall_ms,
        ended_wall_ms: meta.ended_wall_ms,
        cadence: meta.cadence,
        totals: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceId, SamplingConfig};

    fn test_meta(dir: &Path) -> SessionMeta {
        let mut config = SamplingConfig::new(0.1, "power_draw_w,cpu_power_w,tensor_active_pct", dir).unwrap();
        config.devices = vec![DeviceId::Host, DeviceId::Gpu(0)];
        SessionMeta::new("20240101T000000Z-abcd".into(), 1_700_000_000_000, config)
    }

    fn tick(wall: i64, mono: f64, values: &[(&SeriesKey, f64)]) -> Tick {
        Tick {
            wall_time_ms: wall,
            mono_elapsed_s: mono,
            values: values.iter().map(|(k, v)| ((*k).clone(), *v)).collect(),
        }
    }

    #[test]
    fn column_names_follow_layout() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        assert_eq!(
            meta.columns,
            vec!["wall_time_ms", "mono_elapsed_s", "cpu_power_w", "g0_power_draw_w", "g0_tensor_active_pct"]
        );
    }

    #[test]
    fn parse_column_inverts_column_name() {
        for key in [
            (DeviceId::Host, "cpu_power_w".to_string()),
            (DeviceId::Gpu(0), "power_draw_w".to_string()),
            (DeviceId::Gpu(12), "nvlink_rx_bytes".to_string()),
        ] {
            assert_eq!(parse_column(&column_name(&key)), Some(key));
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        let keys = meta.series_keys();
        let mut writer = SessionWriter::create(&meta).unwrap();

        let t1 = tick(1_700_000_000_100, 0.1, &[(&keys[0], 147.625), (&keys[1], 204.12), (&keys[2], 60.0)]);
        let t2 = tick(1_700_000_000_200, 0.2, &[(&keys[1], 205.5)]);
        writer.append_tick(&t1).unwrap();
        writer.append_tick(&t2).unwrap();
        writer.finalize(&meta).unwrap();

        let (session, report) = read_session(&writer.layout().root).unwrap();
        assert_eq!(report.skipped_rows, 0);
        assert_eq!(session.ticks, vec![t1, t2]);
        assert_eq!(session.id, meta.id);
    }

    #[test]
    fn absent_cell_round_trips_as_absent() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        let keys = meta.series_keys();
        let mut writer = SessionWriter::create(&meta).unwrap();
        writer.append_tick(&tick(1, 0.1, &[(&keys[0], 1.0)])).unwrap();
        writer.finalize(&meta).unwrap();

        let raw = fs::read_to_string(writer.layout().samples_path()).unwrap();
        let second_line = raw.lines().nth(1).unwrap();
        assert_eq!(second_line, "1,0.1,1,,");
    }

    #[test]
    fn representative_power_value_lands_in_gpu_column() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        let keys = meta.series_keys();
        let mut writer = SessionWriter::create(&meta).unwrap();
        writer.append_tick(&tick(1, 0.1, &[(&keys[1], 204.12)])).unwrap();
        writer.finalize(&meta).unwrap();

        let raw = fs::read_to_string(writer.layout().samples_path()).unwrap();
        let header: Vec<&str> = raw.lines().next().unwrap().split(',').collect();
        let row: Vec<&str> = raw.lines().nth(1).unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "g0_power_draw_w").unwrap();
        assert_eq!(row[col], "204.12");
    }

    #[test]
    fn truncated_last_row_is_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        let keys = meta.series_keys();
        let mut writer = SessionWriter::create(&meta).unwrap();
        writer.append_tick(&tick(1, 0.1, &[(&keys[0], 1.0)])).unwrap();
        writer.append_tick(&tick(2, 0.2, &[(&keys[0], 2.0)])).unwrap();
        writer.finalize(&meta).unwrap();

        let path = writer.layout().samples_path();
        let mut raw = fs::read_to_string(&path).unwrap();
        raw.truncate(raw.len() - 4); // cut into the last row
        fs::write(&path, raw).unwrap();

        let (session, report) = read_session(&writer.layout().root).unwrap();
        assert_eq!(session.ticks.len(), 1);
        assert_eq!(report.skipped_rows, 1);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn missing_meta_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_session(dir.path()).unwrap_err();
        assert!(matches!(err, PersistenceError::MetaMissing(_)));
    }

    #[test]
    fn header_mismatch_lists_differing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let meta = test_meta(dir.path());
        let mut writer = SessionWriter::create(&meta).unwrap();
        writer.finalize(&meta).unwrap();

        let path = writer.layout().samples_path();
        let raw = fs::read_to_string(&path).unwrap();
        let patched = raw.replacen("g0_power_draw_w", "g0_rogue_metric", 1);
        fs::write(&path, patched).unwrap();

        match read_session(&writer.layout().root).unwrap_err() {
            PersistenceError::HeaderMismatch { missing, extra } => {
                assert_eq!(missing, vec!["g0_power_draw_w"]);
                assert_eq!(extra, vec!["g0_rogue_metric"]);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn session_id_has_timestamp_and_suffix() {
        let id = new_session_id(0);
        assert_eq!(id, format!("19700101T000000Z-{}", &id[17..]));
        assert_eq!(id.len(), "19700101T000000Z-".len() + 4);
        assert!(id[17..].chars().all(|c| c.is_ascii_hexdigit()));
    }
}
