//! `wattmon bench`: measure the monitor's own overhead.
//!
//! Three legs, mirroring the usual baseline / monitor-only / monitored-run
//! comparison:
//!
//! 1. *Monitor-only*: a session samples an otherwise idle process; the
//!    monitor's per-sample cost comes from process CPU accounting, which
//!    stays meaningful on hosts with noisy wall clocks.
//! 2. *Busy-loop comparison*: a calibrated busy loop runs in alternating
//!    unmonitored/monitored segments; the relative elapsed overhead is the
//!    median of paired segment ratios, so slow drift in machine speed
//!    cancels out.
//! 3. Resident-memory delta across the whole bench.
//!
//! CPU utilization reported here is the monitor's own share, not the
//! workload mix.

use std::hint::black_box;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use wattmon_core::collector::{self, CollectorOptions};
use wattmon_core::model::SamplingConfig;
use wattmon_core::sources::{Source, SyntheticSource, SyntheticTraceSpec};

use crate::run::open_hardware_sources;
use crate::validation;

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub interval_s: f64,
    /// Busy-loop time per mode; the monitor-only leg runs as long.
    pub duration_s: f64,
    /// Saturate the remaining cores with busy threads during both phases.
    pub with_load: bool,
    /// Session scratch directory; a temp dir by default.
    pub output_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub interval_s: f64,

    // monitor-only leg
    pub idle_elapsed_s: f64,
    pub idle_sample_count: usize,
    /// Monitor CPU time per sample, from process accounting (ms).
    pub per_sample_cpu_ms: f64,
    /// Monitor CPU share of the monitor-only leg, percent.
    pub monitor_cpu_pct: f64,

    // busy-loop comparison leg
    pub pairs: usize,
    pub baseline_elapsed_s: f64,
    pub monitored_elapsed_s: f64,
    /// Median of paired (monitored/baseline − 1) ratios, percent.
    pub overhead_pct: f64,
    /// (monitored − baseline)/samples over the median pair, in ms. Wall-time
    /// noise on shared hosts can push this negative; `per_sample_cpu_ms` is
    /// the robust per-sample figure.
    pub per_sample_ms: f64,
    pub busy_sample_count: usize,

    pub rss_delta_mb: f64,
    pub with_load: bool,
}

const SPIN_CHUNK_ITERS: u64 = 100_000;
const PAIRS: usize = 8;

#[inline(never)]
fn spin_chunk(seed: u64) -> u64 {
    let mut x = seed | 1;
    for _ in 0..SPIN_CHUNK_ITERS {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
    }
    black_box(x)
}

fn run_chunks(chunks: u64) -> u64 {
    let mut acc = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..chunks {
        acc = spin_chunk(acc);
    }
    acc
}

/// Chunks/second of the spin workload on this machine, measured over ~0.2s.
fn calibrate() -> f64 {
    // warm up
    black_box(run_chunks(3));
    let started = Instant::now();
    let mut chunks = 0u64;
    while started.elapsed() < Duration::from_millis(200) {
        black_box(run_chunks(1));
        chunks += 1;
    }
    chunks as f64 / started.elapsed().as_secs_f64()
}

#[cfg(unix)]
fn process_cpu_seconds() -> f64 {
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut usage) };
    if rc != 0 {
        return 0.0;
    }
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 / 1e6;
    tv(usage.ru_utime) + tv(usage.ru_stime)
}

#[cfg(not(unix))]
fn process_cpu_seconds() -> f64 {
    0.0
}

fn proc_rss_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

struct BackgroundLoad {
    stop: Arc<AtomicBool>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl BackgroundLoad {
    fn start(enabled: bool) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        if enabled {
            let workers = std::thread::available_parallelism()
                .map(|n| n.get().saturating_sub(1))
                .unwrap_or(0);
            for _ in 0..workers {
                let stop = stop.clone();
                threads.push(std::thread::spawn(move || {
                    let mut acc = 7u64;
                    while !stop.load(Ordering::Relaxed) {
                        acc = spin_chunk(acc);
                    }
                    black_box(acc);
                }));
            }
        }
        BackgroundLoad { stop, threads }
    }
}

impl Drop for BackgroundLoad {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// The source set a real `run` would use on this host, with a synthetic
/// source filling every catalog metric the hardware cannot provide, so the
/// pipeline always processes the full 26-metric width.
fn bench_sources() -> Vec<Box<dyn Source>> {
    let mut sources = open_hardware_sources();
    let covered: std::collections::BTreeSet<String> = sources
        .iter()
        .flat_map(|s| s.descriptor().provided.iter().map(|(_, m)| m.clone()))
        .collect();
    let missing: Vec<&str> = wattmon_core::metric_catalog()
        .iter()
        .map(|d| d.id)
        .filter(|id| !covered.contains(*id))
        .collect();
    if !missing.is_empty() {
        let spec = SyntheticTraceSpec::constant(86_400.0, &[("tensor_active_pct", 40.0)]);
        if let Ok(synthetic) = SyntheticSource::covering(spec, &missing) {
            sources.push(Box::new(synthetic));
        }
    }
    sources
}

pub fn bench_command(args: BenchArgs) -> anyhow::Result<BenchReport> {
    if args.duration_s < 5.0 {
        return validation(format!(
            "bench duration {}s is below the 5s minimum",
            args.duration_s
        ));
    }
    SamplingConfig::new(args.interval_s, "all", "/tmp")
        .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;

    let scratch;
    let output_dir = match &args.output_dir {
        Some(dir) => dir.clone(),
        None => {
            scratch = std::env::temp_dir().join(format!("wattmon-bench-{}", std::process::id()));
            scratch.clone()
        }
    };
    let session_config = || {
        SamplingConfig::new(args.interval_s, "all", &output_dir)
            .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))
    };

    let rss_before = proc_rss_mb().unwrap_or(0.0);
    let _load = BackgroundLoad::start(args.with_load);

    // leg 1: monitor-only over an idle wait
    let cpu0 = process_cpu_seconds();
    let t0 = Instant::now();
    let handle = collector::start_with(session_config()?, bench_sources(), CollectorOptions::default())?;
    std::thread::sleep(Duration::from_secs_f64(args.duration_s));
    let session = collector::stop(&handle)?;
    let idle_elapsed_s = t0.elapsed().as_secs_f64();
    let monitor_cpu_s = (process_cpu_seconds() - cpu0).max(0.0);
    let idle_sample_count = session.ticks.len();
    let per_sample_cpu_ms = if idle_sample_count > 0 {
        monitor_cpu_s / idle_sample_count as f64 * 1000.0
    } else {
        0.0
    };
    let monitor_cpu_pct = monitor_cpu_s / idle_elapsed_s * 100.0;

    // leg 2: busy loop, alternating unmonitored/monitored segments
    let rate = calibrate();
    let chunks_per_segment = (rate * args.duration_s / PAIRS as f64).max(1.0) as u64;
    let mut baseline_times = Vec::with_capacity(PAIRS);
    let mut monitored_times = Vec::with_capacity(PAIRS);
    let mut busy_sample_count = 0usize;
    for _ in 0..PAIRS {
        let t = Instant::now();
        black_box(run_chunks(chunks_per_segment));
        baseline_times.push(t.elapsed().as_secs_f64());

        let handle = collector::start_with(session_config()?, bench_sources(), CollectorOptions::default())?;
        let t = Instant::now();
        black_box(run_chunks(chunks_per_segment));
        monitored_times.push(t.elapsed().as_secs_f64());
        let session = collector::stop(&handle)?;
        busy_sample_count += session.ticks.len();
    }

    let mut ratios: Vec<f64> = baseline_times
        .iter()
        .zip(&monitored_times)
        .map(|(b, m)| m / b)
        .collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = ratios[ratios.len() / 2];
    let mut deltas: Vec<f64> = baseline_times
        .iter()
        .zip(&monitored_times)
        .map(|(b, m)| m - b)
        .collect();
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_delta = deltas[deltas.len() / 2];

    let samples_per_segment = busy_sample_count as f64 / PAIRS as f64;
    let per_sample_ms = if samples_per_segment > 0.0 {
        median_delta / samples_per_segment * 1000.0
    } else {
        0.0
    };

    let rss_after = proc_rss_mb().unwrap_or(0.0);

    Ok(BenchReport {
        interval_s: args.interval_s,
        idle_elapsed_s,
        idle_sample_count,
        per_sample_cpu_ms,
        monitor_cpu_pct,
        pairs: PAIRS,
        baseline_elapsed_s: baseline_times.iter().sum(),
        monitored_elapsed_s: monitored_times.iter().sum(),
        overhead_pct: (median_ratio - 1.0) * 100.0,
        per_sample_ms,
        busy_sample_count,
        rss_delta_mb: rss_after - rss_before,
        with_load: args.with_load,
    })
}

/// Plain-text table of a bench result. The header spells out that CPU
/// utilization is the monitor's own share, not the workload's.
pub fn render_bench(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str("Self-overhead bench (CPU util. below is the monitor's own share)\n");
    out.push_str(&format!(
        "busy-loop comparison over {} alternating segment pairs{}\n\n",
        report.pairs,
        if report.with_load { "; background load on all other cores" } else { "" }
    ));
    out.push_str("| Leg | Elapsed [s] | Samples | Time overhead | Time/sample [ms] | Monitor CPU |\n");
    out.push_str("| --- | --- | --- | --- | --- | --- |\n");
    out.push_str(&format!(
        "| monitor only ({}s interval) | {:.2} | {} | — | {:.3} (cpu) | {:.2}% |\n",
        report.interval_s,
        report.idle_elapsed_s,
        report.idle_sample_count,
        report.per_sample_cpu_ms,
        report.monitor_cpu_pct
    ));
    out.push_str(&format!(
        "| busy loop, unmonitored | {:.2} | — | — | — | — |\n",
        report.baseline_elapsed_s
    ));
    out.push_str(&format!(
        "| busy loop, monitored | {:.2} | {} | {:.2}% | {:.3} (wall) | — |\n",
        report.monitored_elapsed_s, report.busy_sample_count, report.overhead_pct, report.per_sample_ms
    ));
    out.push_str(&format!(
        "\nRSS delta: {:.2} MB\nwall-time per-sample figures are host-noise sensitive; the cpu figure is the monitor's measured cost\n",
        report.rss_delta_mb
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_below_minimum_is_validation_error() {
        let err = bench_command(BenchArgs {
            interval_s: 0.1,
            duration_s: 1.0,
            with_load: false,
            output_dir: None,
        })
        .unwrap_err();
        assert!(err.downcast_ref::<crate::Validation>().is_some());
    }

    #[test]
    fn spin_chunk_is_not_constant_folded() {
        assert_ne!(spin_chunk(1), spin_chunk(2));
    }

    #[test]
    fn cpu_and_rss_probes_work_on_linux() {
        if !std::path::Path::new("/proc/self/status").exists() {
            return;
        }
        let before = process_cpu_seconds();
        black_box(run_chunks(20));
        assert!(process_cpu_seconds() > before);
        assert!(proc_rss_mb().unwrap() > 0.0);
    }
}
