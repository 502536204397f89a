//! Post-hoc subcommands over stored sessions: regenerate the execution
//! report, render plots, replay a trace through the pipeline, and print the
//! metric catalog.

use std::path::{Path, PathBuf};

use anyhow::Context;
use wattmon_core::model::{self, SamplingConfig};
use wattmon_core::persistence::{self, SessionLayout, SessionMeta, SessionWriter};
use wattmon_core::reporting::{self, ReportModel};
use wattmon_core::sources::resample_ticks;

use crate::validation;

fn load_session(path: &Path) -> anyhow::Result<wattmon_core::SessionData> {
    let (session, read_report) = persistence::read_session(path)
        .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
    for warning in &read_report.warnings {
        eprintln!("wattmon: warning: {warning}");
    }
    if read_report.skipped_rows > 0 {
        eprintln!("wattmon: warning: {} row(s) skipped", read_report.skipped_rows);
    }
    Ok(session)
}

/// Regenerate `report.md` for a stored session; prints the report and
/// returns its path.
pub fn report_command(path: &Path, quiet: bool) -> anyhow::Result<PathBuf> {
    let session = load_session(path)?;
    let model = reporting::build_report(&session).context("building report")?;
    let md = reporting::render_markdown(&model);
    let layout = SessionLayout::new(path);
    std::fs::write(layout.report_path(), &md)
        .with_context(|| format!("writing {}", layout.report_path().display()))?;
    if !quiet {
        print!("{md}");
    }
    Ok(layout.report_path())
}

/// Render one SVG per selected metric under `<session>/plots/`.
///
/// Category selections silently skip metrics with no samples; explicitly
/// named metrics must be present.
pub fn plot_command(path: &Path, selection: &str) -> anyhow::Result<Vec<PathBuf>> {
    let session = load_session(path)?;
    let ids = model::resolve_selection(selection)
        .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
    let explicit = !(selection.trim() == "all"
        || model::Category::from_name(selection.trim()).is_some());

    let layout = SessionLayout::new(path);
    let mut written = Vec::new();
    for id in ids {
        let out = layout.plots_dir().join(format!("{id}.svg"));
        match reporting::render_plot(&session, &[id], &out) {
            Ok(()) => written.push(out),
            Err(reporting::ReportError::MetricAbsent(name)) if !explicit => {
                log::debug!("skipping {name}: no samples");
            }
            Err(e) => return Err(anyhow::Error::new(crate::Validation(e.to_string()))),
        }
    }
    if written.is_empty() {
        return validation("no selected metric has samples in this session");
    }
    Ok(written)
}

/// Re-run the pipeline over a stored trace, resampled at `interval_s`, and
/// write the result as a new session (with its own report).
pub fn replay_command(
    path: &Path,
    interval_s: Option<f64>,
    output_dir: Option<&Path>,
) -> anyhow::Result<(PathBuf, ReportModel)> {
    let session = load_session(path)?;
    if session.ticks.is_empty() {
        return validation("trace has no ticks to replay");
    }
    let interval = interval_s.unwrap_or(session.config.interval_s);
    if !(interval > 0.0) {
        return validation("replay interval must be positive");
    }
    let ticks = resample_ticks(&session, interval);
    if ticks.len() < 2 {
        return validation(format!(
            "resampling at {interval}s leaves {} tick(s); nothing to analyze",
            ticks.len()
        ));
    }

    let mut config: SamplingConfig = session.config.clone();
    config.interval_s = interval.max(0.05);
    if let Some(dir) = output_dir {
        config.output_dir = dir.to_path_buf();
    }
    let started_wall_ms = ticks.first().map(|t| t.wall_time_ms).unwrap_or(0);
    let mut meta = SessionMeta::new(
        persistence::new_session_id(wattmon_core::sources::now_epoch_ms()),
        started_wall_ms,
        config,
    );
    meta.device_inventory = session
        .device_inventory
        .iter()
        .map(|(d, m)| (d.label(), m.clone()))
        .collect();
    meta.intensity = session.totals.as_ref().and_then(|t| t.intensity_used.clone());
    meta.ended_wall_ms = ticks.last().map(|t| t.wall_time_ms);

    let mut writer = SessionWriter::create(&meta)?;
    for tick in &ticks {
        writer.append_tick(tick)?;
    }
    writer.finalize(&meta)?;
    let root = writer.layout().root.clone();

    let (replayed, _) = persistence::read_session(&root)?;
    let model = reporting::build_report(&replayed).context("building replay report")?;
    let md = reporting::render_markdown(&model);
    std::fs::write(writer.layout().report_path(), md)?;
    Ok((root, model))
}

/// Print the 26-entry metric catalog, one line per metric.
pub fn catalog_command() -> String {
    let mut out = String::new();
    for desc in wattmon_core::metric_catalog() {
        let kind = match desc.kind {
            model::MetricKind::Gauge => "gauge",
            model::MetricKind::CumulativeCounter { .. } => "counter",
        };
        let scope = match desc.device_scope {
            model::DeviceScope::PerGpu => "per-gpu",
            model::DeviceScope::Host => "host",
        };
        out.push_str(&format!(
            "{:<24} {:<22} {:<6} {:<8} {:<14} {}\n",
            desc.id,
            desc.display_name(),
            desc.unit.symbol(),
            kind,
            desc.category.name(),
            scope
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_prints_26_lines() {
        let out = catalog_command();
        assert_eq!(out.lines().count(), 26);
        assert!(out.contains("power_draw_w"));
        assert!(out.contains("dram_usage_pct"));
    }
}
