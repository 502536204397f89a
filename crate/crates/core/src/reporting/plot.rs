//! Line-chart rendering to SVG, without a plotting framework.
//!
//! SVG keeps the output deterministic text, so tests can assert structure
//! (polyline counts, gaps) instead of comparing raster images. Absent values
//! break the line into separate segments.

use std::fmt::Write as _;
use std::path::Path;

use crate::model::{descriptor, DeviceId, MetricKind, SessionData, Unit};
use crate::processing;

use super::ReportError;

pub const VIEW_W: f64 = 960.0;
pub const VIEW_H: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct PlotSeries {
    label: String,
    unit: Unit,
    /// (elapsed s, value) with absent entries marked None.
    points: Vec<(f64, Option<f64>)>,
}

/// Render one SVG with one line per requested metric (per device carrying
/// it), plotted against elapsed seconds, and write it to `output`.
///
/// Byte counters are plotted in their GB/s rate form.
pub fn render_plot(
    session: &SessionData,
    metric_ids: &[&str],
    output: &Path,
) -> Result<(), ReportError> {
    let svg = render_plot_svg(session, metric_ids)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(output, svg)?;
    Ok(())
}

/// Same as [`render_plot`] but returning the SVG document.
pub fn render_plot_svg(session: &SessionData, metric_ids: &[&str]) -> Result<String, ReportError> {
    if session.ticks.is_empty() {
        return Err(ReportError::EmptySession);
    }
    let t0 = session.ticks[0].mono_elapsed_s;
    let times: Vec<f64> = session.ticks.iter().map(|t| t.mono_elapsed_s).collect();

    let mut series: Vec<PlotSeries> = Vec::new();
    for id in metric_ids {
        let desc = descriptor(id).ok_or_else(|| ReportError::UnknownMetric(id.to_string()))?;
        let mut found = false;
        for device in device_order(session) {
            let aligned = session.aligned_series(device, id);
            if aligned.iter().all(Option::is_none) {
                continue;
            }
            found = true;
            let (values, unit) = match desc.kind {
                MetricKind::Gauge => (aligned, desc.unit),
                MetricKind::CumulativeCounter { wrap_range } => (
                    processing::counter_series_to_rates(&times, &aligned, wrap_range),
                    Unit::GigabytesPerSecond,
                ),
            };
            series.push(PlotSeries {
                label: format!("{} {}", device.label(), desc.display_base),
                unit,
                points: times
                    .iter()
                    .zip(values)
                    .map(|(t, v)| (t - t0, v))
                    .collect(),
            });
        }
        if !found {
            return Err(ReportError::MetricAbsent(id.to_string()));
        }
    }

    Ok(draw(&series))
}

fn device_order(session: &SessionData) -> Vec<DeviceId> {
    let mut devices = vec![DeviceId::Host];
    devices.extend(session.gpu_devices());
    devices
}

fn nice_value(v: f64) -> String {
    format!("{v:.2}")
}

fn draw(series: &[PlotSeries]) -> String {
    let plot_w = VIEW_W - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = VIEW_H - MARGIN_TOP - MARGIN_BOTTOM;

    let mut x_max: f64 = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (t, v) in &s.points {
            x_max = x_max.max(*t);
            if let Some(v) = v {
                y_min = y_min.min(*v);
                y_max = y_max.max(*v);
            }
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    } else {
        let pad = (y_max - y_min) * 0.05;
        y_min -= pad;
        y_max += pad;
    }
    if x_max <= 0.0 {
        x_max = 1.0;
    }

    let x_of = |t: f64| MARGIN_LEFT + t / x_max * plot_w;
    let y_of = |v: f64| MARGIN_TOP + (1.0 - (v - y_min) / (y_max - y_min)) * plot_h;

    let units: Vec<Unit> = {
        let mut seen = Vec::new();
        for s in series {
            if !seen.contains(&s.unit) {
                seen.push(s.unit);
            }
        }
        seen
    };
    let y_label = match units.as_slice() {
        [one] => one.symbol().to_string(),
        _ => "value".to_string(),
    };

    let mut svg = String::with_capacity(16 * 1024);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW_W} {VIEW_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{VIEW_W}" height="{VIEW_H}" fill="white"/>"#);

    // axes
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="black"/>"#,
        x0 + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.2}" y1="{:.2}" x2="{x0:.2}" y2="{y0:.2}" stroke="black"/>"#,
        MARGIN_TOP
    );

    // ticks and grid labels
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let x = x0 + frac * plot_w;
        let t = frac * x_max;
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            nice_value(t)
        );
    }
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = MARGIN_TOP + (1.0 - frac) * plot_h;
        let v = y_min + frac * (y_max - y_min);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            nice_value(v)
        );
    }

    // axis labels
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-weight="bold">elapsed [s]</text>"#,
        x0 + plot_w / 2.0,
        VIEW_H - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" font-weight="bold" transform="rotate(-90 18 {:.2})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        y_label
    );

    // series: polyline per contiguous present segment; lone points as circles
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut segment: Vec<(f64, f64)> = Vec::new();
        let flush = |segment: &mut Vec<(f64, f64)>, svg: &mut String| {
            match segment.len() {
                0 => {}
                1 => {
                    let (t, v) = segment[0];
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                        x_of(t),
                        y_of(v)
                    );
                }
                _ => {
                    let points: Vec<String> = segment
                        .iter()
                        .map(|(t, v)| format!("{:.2},{:.2}", x_of(*t), y_of(*v)))
                        .collect();
                    let _ = writeln!(
                        svg,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        points.join(" ")
                    );
                }
            }
            segment.clear();
        };
        for (t, v) in &s.points {
            match v {
                Some(v) => segment.push((*t, *v)),
                None => flush(&mut segment, &mut svg),
            }
        }
        flush(&mut segment, &mut svg);

        // legend entry
        let ly = MARGIN_TOP + 14.0 + idx as f64 * 18.0;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}">{} [{}]</text>"#,
            lx + 24.0,
            s.label,
            s.unit.symbol()
        );
    }

    svg.push_str("</svg>\n");
    svg
}
