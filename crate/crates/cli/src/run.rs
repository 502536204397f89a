//! `wattmon run`: measure an arbitrary child process.
//!
//! The child owns the terminal (stdio is inherited) and its exit code is
//! propagated. Measurement failures degrade to warnings — they never kill or
//! fail the workload.

use std::path::PathBuf;
use std::process::{Command, Stdio};

use anyhow::Context;
use wattmon_core::carbon::{
    CarbonConfig, GeoCoordinate, IntensityKind, LookupConfig, Provider, DEFAULT_STALENESS_LIMIT_S,
};
use wattmon_core::collector;
use wattmon_core::model::SamplingConfig;
use wattmon_core::persistence::SessionLayout;
use wattmon_core::reporting;
use wattmon_core::sources::{self, Source, SourceSpec, SyntheticTraceSpec};

use crate::validation;

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub interval_s: f64,
    pub metrics: String,
    pub output_dir: PathBuf,
    pub carbon: CarbonFlags,
    /// Listen address for the live exposition endpoint, when wanted.
    pub serve: Option<String>,
    /// Replace hardware sources with a synthetic trace spec (JSON file).
    pub synthetic_spec: Option<PathBuf>,
    /// Replace hardware sources with a recorded session replay.
    pub replay_source: Option<PathBuf>,
    pub child: Vec<String>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CarbonFlags {
    pub mode: String, // off | static | lookup
    pub static_value: Option<f64>,
    pub kind: Option<String>, // marginal | average
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub provider: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub cache_path: Option<PathBuf>,
    pub staleness_s: Option<u64>,
}

impl CarbonFlags {
    pub fn into_config(self, output_dir: &std::path::Path) -> anyhow::Result<CarbonConfig> {
        let kind = match self.kind.as_deref() {
            None | Some("marginal") => IntensityKind::Marginal,
            Some("average") => IntensityKind::Average,
            Some(other) => return validation(format!("unknown carbon kind `{other}`")),
        };
        match self.mode.as_str() {
            "" | "off" => Ok(CarbonConfig::Off),
            "static" => {
                let value = match self.static_value {
                    Some(v) if v >= 0.0 && v.is_finite() => v,
                    Some(v) => return validation(format!("carbon intensity {v} must be >= 0")),
                    None => return validation("--carbon static needs --carbon-intensity"),
                };
                Ok(CarbonConfig::Static { value, kind })
            }
            "lookup" => {
                let (Some(lat), Some(lon)) = (self.lat, self.lon) else {
                    return validation("--carbon lookup needs --lat and --lon");
                };
                let coord = GeoCoordinate::new(lat, lon).map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
                let provider = match self.provider.as_deref() {
                    None => Provider::ElectricityMaps,
                    Some(name) => match Provider::from_name(name) {
                        Some(p) => p,
                        None => return validation(format!("unknown carbon provider `{name}`")),
                    },
                };
                Ok(CarbonConfig::Lookup(LookupConfig {
                    coord,
                    provider,
                    base_url: self.base_url,
                    api_key_env: self
                        .api_key_env
                        .unwrap_or_else(|| "WATTMON_CARBON_API_KEY".to_string()),
                    cache_path: self
                        .cache_path
                        .unwrap_or_else(|| output_dir.join("carbon-intensity-cache.json")),
                    staleness_limit_s: self.staleness_s.unwrap_or(DEFAULT_STALENESS_LIMIT_S),
                    kind,
                    timeout_s: 5.0,
                }))
            }
            other => validation(format!("unknown carbon mode `{other}`")),
        }
    }
}

/// Open the source set for this invocation. A synthetic or replay override
/// replaces hardware probing entirely (they claim every metric themselves);
/// otherwise every available hardware provider is opened and the rest of the
/// catalog is reported uncollected.
pub fn open_run_sources(args: &RunArgs) -> anyhow::Result<Vec<Box<dyn Source>>> {
    if let Some(spec_path) = &args.synthetic_spec {
        let raw = std::fs::read_to_string(spec_path)
            .with_context(|| format!("reading synthetic spec {}", spec_path.display()))?;
        let spec: SyntheticTraceSpec = serde_json::from_str(&raw)
            .map_err(|e| anyhow::Error::new(crate::Validation(format!("synthetic spec: {e}"))))?;
        let source = sources::open_source(SourceSpec::Synthetic(spec))
            .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
        return Ok(vec![source]);
    }
    if let Some(session_dir) = &args.replay_source {
        let source = sources::open_source(SourceSpec::Replay { session_dir: session_dir.clone() })
            .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
        return Ok(vec![source]);
    }
    Ok(open_hardware_sources())
}

/// Probe every hardware provider; unavailable ones are logged and skipped.
pub fn open_hardware_sources() -> Vec<Box<dyn Source>> {
    let mut opened = Vec::new();
    for spec in [
        SourceSpec::GpuBasic,
        SourceSpec::GpuFine,
        SourceSpec::CpuEnergy { root: None },
        SourceSpec::System { root: None },
    ] {
        let kind = spec.kind_name();
        match sources::open_source(spec) {
            Ok(source) => opened.push(source),
            Err(e) => log::info!("source {kind} not opened: {e}"),
        }
    }
    opened
}

#[cfg(unix)]
mod interrupt {
    use std::sync::atomic::{AtomicI32, Ordering};

    static CHILD_PID: AtomicI32 = AtomicI32::new(0);

    extern "C" fn forward(signal: libc::c_int) {
        let pid = CHILD_PID.load(Ordering::SeqCst);
        if pid > 0 {
            unsafe {
                libc::kill(pid, signal);
            }
        }
    }

    /// Forward SIGINT/SIGTERM to the child so it always sees the interrupt
    /// first; the supervisor keeps running to stop and flush the session.
    pub fn guard(child_pid: u32) {
        CHILD_PID.store(child_pid as i32, Ordering::SeqCst);
        unsafe {
            libc::signal(libc::SIGINT, forward as *const () as usize);
            libc::signal(libc::SIGTERM, forward as *const () as usize);
        }
    }

    pub fn clear() {
        CHILD_PID.store(0, Ordering::SeqCst);
        unsafe {
            libc::signal(libc::SIGINT, libc::SIG_DFL);
            libc::signal(libc::SIGTERM, libc::SIG_DFL);
        }
    }

    pub fn exit_code(status: &std::process::ExitStatus) -> i32 {
        use std::os::unix::process::ExitStatusExt;
        status.code().or(status.signal().map(|s| 128 + s)).unwrap_or(2)
    }
}

#[cfg(not(unix))]
mod interrupt {
    pub fn guard(_child_pid: u32) {}
    pub fn clear() {}
    pub fn exit_code(status: &std::process::ExitStatus) -> i32 {
        status.code().unwrap_or(2)
    }
}

/// Execute the child under measurement and return the exit code to use.
pub fn run_command(args: RunArgs) -> anyhow::Result<i32> {
    if args.child.is_empty() {
        return validation("no child command given (use `--` to separate it)");
    }
    // Everything user-facing validates before any side effect.
    wattmon_core::resolve_selection(&args.metrics)
        .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
    let mut config = SamplingConfig::new(args.interval_s, &args.metrics, &args.output_dir)
        .map_err(|e| anyhow::Error::new(crate::Validation(e.to_string())))?;
    config.carbon = args.carbon.clone().into_config(&args.output_dir)?;
    std::fs::create_dir_all(&args.output_dir).map_err(|e| {
        anyhow::Error::new(crate::Validation(format!(
            "output dir {}: {e}",
            args.output_dir.display()
        )))
    })?;

    let sources = open_run_sources(&args)?;
    if sources.is_empty() {
        return validation("no metric source available on this host (try --synthetic)");
    }

    let mut child = Command::new(&args.child[0])
        .args(&args.child[1..])
        .stdin(Stdio::inherit())
        .stdout(Stdio::inherit())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| {
            anyhow::Error::new(crate::Validation(format!("cannot spawn `{}`: {e}", args.child[0])))
        })?;
    interrupt::guard(child.id());

    let handle = match collector::start(config, sources) {
        Ok(handle) => Some(handle),
        Err(e) => {
            log::warn!("measurement disabled: {e}");
            eprintln!("wattmon: warning: measurement disabled: {e}");
            None
        }
    };

    let _server = match (&handle, &args.serve) {
        (Some(handle), Some(addr)) => match reporting::serve_exposition(handle, addr) {
            Ok(server) => {
                if !args.quiet {
                    eprintln!("wattmon: exposition at http://{}/metrics", server.addr());
                }
                Some(server)
            }
            Err(e) => {
                eprintln!("wattmon: warning: exposition endpoint failed: {e}");
                None
            }
        },
        _ => None,
    };

    let status = child.wait().context("waiting for child")?;
    interrupt::clear();
    let child_code = interrupt::exit_code(&status);

    let mut measurement_failed = handle.is_none();
    if let Some(handle) = handle {
        match collector::stop(&handle) {
            Ok(session) => {
                let layout = SessionLayout::new(handle.session_dir());
                match reporting::build_report(&session) {
                    Ok(model) => {
                        let md = reporting::render_markdown(&model);
                        if let Err(e) = std::fs::write(layout.report_path(), &md) {
                            eprintln!("wattmon: warning: report not written: {e}");
                            measurement_failed = true;
                        }
                        if !args.quiet {
                            print_summary(&session, &model, &layout);
                        }
                    }
                    Err(e) => {
                        eprintln!("wattmon: warning: report unavailable: {e}");
                        measurement_failed = true;
                    }
                }
            }
            Err(e) => {
                eprintln!("wattmon: warning: session not stopped cleanly: {e}");
                measurement_failed = true;
            }
        }
    }

    // the workload's outcome wins; measurement failure alone never fails a
    // successful child
    if child_code == 0 && measurement_failed {
        eprintln!("wattmon: warning: workload succeeded but measurement degraded");
    }
    Ok(child_code)
}

fn print_summary(
    session: &wattmon_core::SessionData,
    model: &reporting::ReportModel,
    layout: &SessionLayout,
) {
    println!("wattmon: session {} ({} ticks)", session.id, session.ticks.len());
    println!("wattmon: total energy {:.2} J ({:.2} Wh)", model.totals.total_energy_j, model.totals.total_energy_wh);
    match (model.totals.carbon_kg, &model.carbon_unavailable) {
        (Some(kg), _) => println!("wattmon: carbon {:.4} kg CO2eq", kg),
        (None, Some(reason)) => println!("wattmon: carbon unavailable ({reason})"),
        (None, None) => {}
    }
    println!("wattmon: report {}", layout.report_path().display());
}
