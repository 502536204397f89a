//! Live exposition endpoint: `GET /metrics` serves the latest tick in the
//! text exposition format (v0.0.4) that scrape-based dashboards consume.
//!
//! The endpoint reads the collector's latest-tick cell and nothing else; a
//! failing or slow scraper cannot affect sampling.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::collector::SessionHandle;
use crate::model::{descriptor, MetricKind, Tick, CATALOG};

use super::ReportError;

/// Metric-name prefix on every exported sample.
pub const EXPOSITION_PREFIX: &str = "woa_";

/// Running exposition endpoint; shuts down when dropped.
pub struct ExpositionServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ExpositionServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ExpositionServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Start serving the session's latest tick at `listen`.
///
/// Fails immediately when the port is busy. The endpoint is read-only and
/// isolated from the sampling loop.
pub fn serve_exposition(handle: &SessionHandle, listen: &str) -> Result<ExpositionServer, ReportError> {
    let listener = TcpListener::bind(listen).map_err(|e| ReportError::Bind(format!("{listen}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| ReportError::Bind(e.to_string()))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| ReportError::Bind(e.to_string()))?;

    let shutdown = Arc::new(AtomicBool::new(false));
    let stop = shutdown.clone();
    let session = handle.clone();
    let thread = std::thread::Builder::new()
        .name("wattmon-exposition".into())
        .spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = handle_connection(stream, &session);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(20));
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(20)),
                }
            }
        })
        .map_err(|e| ReportError::Bind(e.to_string()))?;

    Ok(ExpositionServer { addr, shutdown, thread: Some(thread) })
}

fn handle_connection(stream: TcpStream, session: &SessionHandle) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(500)))?;
    stream.set_write_timeout(Some(Duration::from_millis(500)))?;
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    // drain headers
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    let mut stream = reader.into_inner();

    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");
    if method != "GET" {
        return respond(&mut stream, 405, "text/plain", "method not allowed\n");
    }
    if path != "/metrics" {
        return respond(&mut stream, 404, "text/plain", "not found\n");
    }
    let body = render_exposition(session.latest_tick().as_ref());
    respond(&mut stream, 200, "text/plain; version=0.0.4", &body)
}

fn respond(stream: &mut TcpStream, status: u16, content_type: &str, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
}

/// Render the latest tick as exposition text: a heartbeat gauge plus one
/// sample per present (device, metric), gauges and counters typed per the
/// catalog.
pub fn render_exposition(tick: Option<&Tick>) -> String {
    let mut out = String::with_capacity(4 * 1024);
    out.push_str("# TYPE woa_up gauge\nwoa_up 1\n");
    let Some(tick) = tick else {
        return out;
    };
    for desc in &CATALOG {
        let samples: Vec<(String, f64)> = tick
            .values
            .iter()
            .filter(|((_, metric), _)| metric == desc.id)
            .map(|((device, _), value)| (device.label(), *value))
            .collect();
        if samples.is_empty() {
            continue;
        }
        let kind = match descriptor(desc.id).map(|d| d.kind) {
            Some(MetricKind::CumulativeCounter { .. }) => "counter",
            _ => "gauge",
        };
        out.push_str(&format!("# TYPE {EXPOSITION_PREFIX}{} {kind}\n", desc.id));
        for (device, value) in samples {
            out.push_str(&format!(
                "{EXPOSITION_PREFIX}{}{{device=\"{device}\"}} {value}\n",
                desc.id
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceId;
    use std::collections::BTreeMap;

    fn tick_with(values: &[(DeviceId, &str, f64)]) -> Tick {
        let mut map = BTreeMap::new();
        for (d, m, v) in values {
            map.insert((*d, m.to_string()), *v);
        }
        Tick { wall_time_ms: 0, mono_elapsed_s: 0.0, values: map }
    }

    #[test]
    fn no_tick_yields_heartbeat_only() {
        let body = render_exposition(None);
        assert_eq!(body, "# TYPE woa_up gauge\nwoa_up 1\n");
    }

    #[test]
    fn gauge_line_format() {
        let tick = tick_with(&[(DeviceId::Gpu(0), "power_draw_w", 204.12)]);
        let body = render_exposition(Some(&tick));
        assert!(body.contains("woa_power_draw_w{device=\"gpu0\"} 204.12\n"));
        assert!(body.contains("# TYPE woa_power_draw_w gauge\n"));
    }

    #[test]
    fn counters_typed_as_counter() {
        let tick = tick_with(&[(DeviceId::Gpu(0), "pcie_tx_bytes", 1.5e9)]);
        let body = render_exposition(Some(&tick));
        assert!(body.contains("# TYPE woa_pcie_tx_bytes counter\n"));
        assert!(body.contains("woa_pcie_tx_bytes{device=\"gpu0\"} 1500000000\n"));
    }

    #[test]
    fn host_label_used_for_host_metrics() {
        let tick = tick_with(&[(DeviceId::Host, "cpu_usage_pct", 3.5)]);
        let body = render_exposition(Some(&tick));
        assert!(body.contains("woa_cpu_usage_pct{device=\"host\"} 3.5\n"));
    }
}
