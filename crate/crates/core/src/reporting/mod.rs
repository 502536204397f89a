//! Demonstration layer: execution report construction and rendering, SVG
//! plots, and the live exposition endpoint.
//!
//! Rendering is pure — every number in the output traces to a field computed
//! by `processing` or `analytics`, and rendering the same model twice yields
//! byte-identical documents.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics::{self, CorrelationPair, SummaryStats};
use crate::carbon::CarbonConfig;
use crate::model::{
    descriptor, Category, DeviceId, DeviceScope, MetricKind, SessionData, CATALOG,
};
use crate::processing::{self, EnergyTotals};

mod exposition;
mod plot;

pub use exposition::{serve_exposition, ExpositionServer, EXPOSITION_PREFIX};
pub use plot::render_plot;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("session has fewer than 2 ticks; nothing to report")]
    EmptySession,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("metric `{0}` has no samples in this session")]
    MetricAbsent(String),
    #[error("could not bind exposition endpoint: {0}")]
    Bind(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One statistics row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub label: String,
    pub stats: Option<SummaryStats>,
}

/// Per-GPU statistics grouped by catalog category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuBlock {
    pub gpu_index: u32,
    pub model: String,
    pub rows: Vec<(Category, StatRow)>,
}

/// Everything the renderer needs; no value is computed at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub session_id: String,
    pub started_wall_ms: i64,
    pub device_inventory: BTreeMap<String, String>,
    pub totals: EnergyTotals,
    /// Host rows: (component, metric label, stats).
    pub host_rows: Vec<(String, StatRow)>,
    pub gpu_blocks: Vec<GpuBlock>,
    pub top_positive: Vec<CorrelationPair>,
    pub top_negative: Vec<CorrelationPair>,
    /// Reason carbon is missing, when it is.
    pub carbon_unavailable: Option<String>,
    pub degradation_notes: Vec<String>,
    pub gpu_count: usize,
}

/// The analysable series of a session: gauges verbatim, byte counters as
/// GB/s rates aligned to the same ticks.
pub fn report_series(session: &SessionData) -> Vec<((DeviceId, String), Vec<Option<f64>>)> {
    let times: Vec<f64> = session.ticks.iter().map(|t| t.mono_elapsed_s).collect();
    session
        .config
        .series_keys()
        .into_iter()
        .filter_map(|key| {
            let desc = descriptor(&key.1)?;
            let aligned = session.aligned_series(key.0, &key.1);
            let series = match desc.kind {
                MetricKind::Gauge => aligned,
                MetricKind::CumulativeCounter { wrap_range } => {
                    processing::counter_series_to_rates(&times, &aligned, wrap_range)
                }
            };
            Some((key, series))
        })
        .collect()
}

/// Assemble the full report model from a completed session.
pub fn build_report(session: &SessionData) -> Result<ReportModel, ReportError> {
    if session.ticks.len() < 2 {
        return Err(ReportError::EmptySession);
    }
    let intensity = session.totals.as_ref().and_then(|t| t.intensity_used.clone());
    let totals = processing::compute_totals(session, intensity.as_ref())
        .map_err(|_| ReportError::EmptySession)?;

    let series = report_series(session);
    let stats: BTreeMap<(DeviceId, String), Option<SummaryStats>> = series
        .iter()
        .map(|(key, values)| (key.clone(), analytics::summarize(values)))
        .collect();

    let selected = |id: &str| session.config.selected_metrics.iter().any(|m| m == id);

    let mut host_rows = Vec::new();
    let host_layout = [
        ("CPU", "cpu_usage_pct", "Usage [%]"),
        ("CPU", "cpu_power_w", "Power [W]"),
        ("DRAM", "dram_usage_pct", "Usage [%]"),
        ("DRAM", "dram_power_w", "Power [W]"),
    ];
    for (component, id, label) in host_layout {
        if selected(id) && session.config.devices.contains(&DeviceId::Host) {
            host_rows.push((
                component.to_string(),
                StatRow {
                    label: label.to_string(),
                    stats: stats.get(&(DeviceId::Host, id.to_string())).cloned().flatten(),
                },
            ));
        }
    }

    let mut gpu_blocks = Vec::new();
    for device in session.gpu_devices() {
        let DeviceId::Gpu(gpu_index) = device else { continue };
        let model = session
            .device_inventory
            .get(&device)
            .cloned()
            .unwrap_or_else(|| "unknown GPU".to_string());
        let mut rows = Vec::new();
        for desc in &CATALOG {
            if desc.device_scope != DeviceScope::PerGpu || !selected(desc.id) {
                continue;
            }
            rows.push((
                desc.category,
                StatRow {
                    label: desc.report_display_name(),
                    stats: stats.get(&(device, desc.id.to_string())).cloned().flatten(),
                },
            ));
        }
        gpu_blocks.push(GpuBlock { gpu_index, model, rows });
    }

    let matrix = analytics::correlation_matrix(&series);
    let (top_positive, top_negative) = analytics::top_pairs(&matrix, 5);

    let carbon_unavailable = if totals.carbon_kg.is_some() {
        None
    } else {
        Some(match session.config.carbon {
            CarbonConfig::Off => "carbon accounting disabled".to_string(),
            _ => "no intensity record could be resolved".to_string(),
        })
    };

    let mut degradation_notes = Vec::new();
    if !session.uncollected.is_empty() {
        let names: Vec<String> = session
            .uncollected
            .iter()
            .map(crate::persistence::column_name)
            .collect();
        degradation_notes.push(format!("uncollected metrics: {}", names.join(", ")));
    }
    for dead in &session.dead_sources {
        degradation_notes.push(format!(
            "source `{}` died at tick {} ({})",
            dead.name, dead.from_tick, dead.reason
        ));
    }
    if session.dropped_tick_count > 0 {
        degradation_notes.push(format!("{} ticks dropped before persistence", session.dropped_tick_count));
    }
    if session.overrun_count > 0 {
        degradation_notes.push(format!("{} scheduled ticks skipped (overrun)", session.overrun_count));
    }
    if !totals.absent_components.is_empty() {
        degradation_notes.push(format!(
            "no energy series for: {}",
            totals.absent_components.join(", ")
        ));
    }
    if let Some(reason) = &carbon_unavailable {
        degradation_notes.push(format!("carbon unavailable ({reason})"));
    }

    Ok(ReportModel {
        session_id: session.id.clone(),
        started_wall_ms: session.started_wall_ms,
        device_inventory: session
            .device_inventory
            .iter()
            .map(|(d, m)| (d.label(), m.clone()))
            .collect(),
        totals,
        host_rows,
        gpu_blocks,
        top_positive,
        top_negative,
        carbon_unavailable,
        degradation_notes,
        gpu_count: session.gpu_devices().len(),
    })
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn stat_cells(stats: &Option<SummaryStats>) -> [String; 4] {
    match stats {
        Some(s) => [fmt2(s.avg), fmt2(s.max), fmt2(s.min), fmt2(s.mode)],
        None => ["—".into(), "—".into(), "—".into(), "—".into()],
    }
}

fn pair_metric_label(device: DeviceId, metric: &str, gpu_count: usize) -> String {
    let base = descriptor(metric)
        .map(|d| d.report_display_name())
        .unwrap_or_else(|| metric.to_string());
    match device {
        DeviceId::Gpu(i) if gpu_count > 1 => format!("GPU {i} {base}"),
        _ => base,
    }
}

/// Render the model as Markdown. Deterministic: stable ordering, fixed
/// 2-decimal statistics, 3-decimal coefficients, 4-decimal carbon.
pub fn render_markdown(model: &ReportModel) -> String {
    let mut out = String::with_capacity(8 * 1024);
    let push_line = |out: &mut String, line: &str| {
        out.push_str(line);
        out.push('\n');
    };

    push_line(&mut out, "# Execution Report");
    push_line(&mut out, "");
    let started = Utc
        .timestamp_millis_opt(model.started_wall_ms)
        .single()
        .map(|t| t.format("%Y-%m-%d %H:%M:%S UTC").to_string())
        .unwrap_or_else(|| "unknown".to_string());
    push_line(&mut out, &format!("- Session: `{}`", model.session_id));
    push_line(&mut out, &format!("- Started: {started}"));
    for (device, model_name) in &model.device_inventory {
        push_line(&mut out, &format!("- Device {device}: {model_name}"));
    }
    push_line(&mut out, "");

    push_line(&mut out, "## Overall Performance Metrics");
    push_line(&mut out, "");
    push_line(&mut out, "| Metric | Value |");
    push_line(&mut out, "| --- | --- |");
    let t = &model.totals;
    push_line(&mut out, &format!("| Total Time [s] | {} |", fmt2(t.duration_s)));
    if let Some(j) = t.cpu_energy_j {
        push_line(&mut out, &format!("| CPU Energy [J] | {} |", fmt2(j)));
    }
    if let Some(j) = t.dram_energy_j {
        push_line(&mut out, &format!("| DRAM Energy [J] | {} |", fmt2(j)));
    }
    for (gpu, j) in &t.gpu_energy_j {
        push_line(&mut out, &format!("| GPU {gpu} Energy [J] | {} |", fmt2(*j)));
    }
    push_line(&mut out, &format!("| Total Energy [J] | {} |", fmt2(t.total_energy_j)));
    push_line(&mut out, &format!("| Total Energy [Wh] | {} |", fmt2(t.total_energy_wh)));
    match (t.carbon_kg, &model.carbon_unavailable) {
        (Some(kg), _) => {
            push_line(&mut out, &format!("| Carbon Emissions [kg CO2eq] | {kg:.4} |"));
            if let Some(rec) = &t.intensity_used {
                push_line(
                    &mut out,
                    &format!(
                        "| Carbon Intensity [gCO2eq/kWh] | {} ({}, zone {}) |",
                        fmt2(rec.value),
                        rec.kind.name(),
                        rec.zone
                    ),
                );
            }
        }
        (None, Some(reason)) => {
            push_line(&mut out, &format!("| Carbon Emissions | unavailable ({reason}) |"));
        }
        (None, None) => {}
    }
    push_line(&mut out, "");

    if !model.host_rows.is_empty() {
        push_line(&mut out, "## Host Statistics");
        push_line(&mut out, "");
        push_line(&mut out, "| Component | Metric | Avg | Max | Min | Mode |");
        push_line(&mut out, "| --- | --- | --- | --- | --- | --- |");
        for (component, row) in &model.host_rows {
            let cells = stat_cells(&row.stats);
            push_line(
                &mut out,
                &format!(
                    "| {component} | {} | {} | {} | {} | {} |",
                    row.label, cells[0], cells[1], cells[2], cells[3]
                ),
            );
        }
        push_line(&mut out, "");
    }

    for block in &model.gpu_blocks {
        push_line(
            &mut out,
            &format!("## GPU {} Detailed Statistics ({})", block.gpu_index, block.model),
        );
        push_line(&mut out, "");
        push_line(&mut out, "| Category | Metric | Avg | Max | Min | Mode |");
        push_line(&mut out, "| --- | --- | --- | --- | --- | --- |");
        for (category, row) in &block.rows {
            let cells = stat_cells(&row.stats);
            let category = match category {
                Category::Energy => "Energy",
                Category::Compute => "Compute",
                Category::Memory => "Memory",
                Category::Communication => "Communication",
                Category::System => "System",
            };
            push_line(
                &mut out,
                &format!(
                    "| {category} | {} | {} | {} | {} | {} |",
                    row.label, cells[0], cells[1], cells[2], cells[3]
                ),
            );
        }
        push_line(&mut out, "");
    }

    push_line(&mut out, "## Top Positively and Negatively Correlated Metric Pairs");
    push_line(&mut out, "");
    for (title, pairs) in [("Positive", &model.top_positive), ("Negative", &model.top_negative)] {
        push_line(&mut out, &format!("### {title}"));
        push_line(&mut out, "");
        if pairs.is_empty() {
            push_line(&mut out, "(no defined pairs)");
            push_line(&mut out, "");
            continue;
        }
        push_line(&mut out, "| Metric A | Metric B | Coeff. |");
        push_line(&mut out, "| --- | --- | --- |");
        for pair in pairs.iter() {
            push_line(
                &mut out,
                &format!(
                    "| {} | {} | {:.3} |",
                    pair_metric_label(pair.device_a, &pair.metric_a, model.gpu_count),
                    pair_metric_label(pair.device_b, &pair.metric_b, model.gpu_count),
                    pair.coefficient
                ),
            );
        }
        push_line(&mut out, "");
    }

    if !model.degradation_notes.is_empty() {
        push_line(&mut out, "## Notes");
        push_line(&mut out, "");
        for note in &model.degradation_notes {
            push_line(&mut out, &format!("- {note}"));
        }
        push_line(&mut out, "");
    }

    out
}
