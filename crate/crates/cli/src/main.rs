use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wattmon_cli::{
    bench_command, catalog_command, plot_command, render_bench, replay_command, report_command,
    run_command, BenchArgs, RunArgs, Validation,
};

/// Workload power, energy, and carbon telemetry.
#[derive(Parser)]
#[command(name = "wattmon", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Measure a child process: sample metrics around its execution, then
    /// write the session and its report.
    Run(RunCli),
    /// Regenerate the execution report of a stored session.
    Report {
        /// Session directory (contains meta.json and samples.csv).
        session: PathBuf,
        /// Write report.md without printing it.
        #[arg(long)]
        quiet: bool,
    },
    /// Render SVG line charts from a stored session.
    Plot {
        session: PathBuf,
        /// Metric selection: `all`, a category, or a comma list of ids.
        #[arg(long, default_value = "all")]
        metrics: String,
    },
    /// Re-run the pipeline over a stored trace, optionally resampled.
    Replay {
        session: PathBuf,
        /// Resampling interval in seconds (defaults to the trace's own).
        #[arg(long)]
        interval: Option<f64>,
        /// Where to write the replayed session (defaults next to the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the monitor's own overhead with a calibrated busy loop.
    Bench {
        /// Sampling interval in seconds.
        #[arg(long, default_value_t = 0.1)]
        interval: f64,
        /// Busy-loop duration per phase, seconds (minimum 5).
        #[arg(long, default_value_t = 15.0)]
        duration: f64,
        /// Saturate the remaining cores during both phases.
        #[arg(long)]
        with_load: bool,
    },
    /// Print the 26-entry metric catalog.
    Catalog,
}

#[derive(Args)]
struct RunCli {
    /// Sampling interval in seconds.
    #[arg(long, default_value_t = 0.1)]
    interval: f64,
    /// Metric selection: `all`, a category, or a comma list of ids.
    #[arg(long, default_value = "all")]
    metrics: String,
    /// Directory that receives one subdirectory per session.
    #[arg(long, default_value = "./wattmon-sessions")]
    out: PathBuf,
    /// Carbon accounting mode: off, static, or lookup.
    #[arg(long, default_value = "off")]
    carbon: String,
    /// Static carbon intensity in gCO2eq/kWh (with --carbon static).
    #[arg(long)]
    carbon_intensity: Option<f64>,
    /// Intensity kind: marginal (default) or average.
    #[arg(long)]
    carbon_kind: Option<String>,
    /// Latitude for provider lookup.
    #[arg(long)]
    lat: Option<f64>,
    /// Longitude for provider lookup.
    #[arg(long)]
    lon: Option<f64>,
    /// Intensity provider: electricity-maps, watttime, or custom.
    #[arg(long)]
    carbon_provider: Option<String>,
    /// Provider endpoint override (stubs, gateways).
    #[arg(long)]
    carbon_base_url: Option<String>,
    /// Environment variable holding the provider API key.
    #[arg(long)]
    carbon_api_key_env: Option<String>,
    /// Intensity cache file path.
    #[arg(long)]
    carbon_cache: Option<PathBuf>,
    /// Cache staleness limit in seconds.
    #[arg(long)]
    carbon_staleness_s: Option<u64>,
    /// Serve the latest tick at this address (e.g. 127.0.0.1:9184).
    #[arg(long)]
    serve: Option<String>,
    /// Use a synthetic trace spec (JSON) instead of hardware sources.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Use a recorded session as the metric source instead of hardware.
    #[arg(long)]
    replay_source: Option<PathBuf>,
    /// Suppress the summary banner (plain output).
    #[arg(long)]
    quiet: bool,
    /// The workload to measure, after `--`.
    #[arg(last = true, required = true)]
    child: Vec<String>,
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        CliCommand::Run(args) => {
            let quiet = args.quiet || std::env::var_os("NO_COLOR").is_some();
            run_command(RunArgs {
                interval_s: args.interval,
                metrics: args.metrics,
                output_dir: args.out,
                carbon: wattmon_cli::run::CarbonFlags {
                    mode: args.carbon,
                    static_value: args.carbon_intensity,
                    kind: args.carbon_kind,
                    lat: args.lat,
                    lon: args.lon,
                    provider: args.carbon_provider,
                    base_url: args.carbon_base_url,
                    api_key_env: args.carbon_api_key_env,
                    cache_path: args.carbon_cache,
                    staleness_s: args.carbon_staleness_s,
                },
                serve: args.serve,
                synthetic_spec: args.synthetic,
                replay_source: args.replay_source,
                child: args.child,
                quiet,
            })
        }
        CliCommand::Report { session, quiet } => {
            let path = report_command(&session, quiet)?;
            if quiet {
                println!("{}", path.display());
            }
            Ok(0)
        }
        CliCommand::Plot { session, metrics } => {
            let written = plot_command(&session, &metrics)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(0)
        }
        CliCommand::Replay { session, interval, out } => {
            let (root, _model) = replay_command(&session, interval, out.as_deref())?;
            println!("{}", root.display());
            Ok(0)
        }
        CliCommand::Bench { interval, duration, with_load } => {
            let report = bench_command(BenchArgs {
                interval_s: interval,
                duration_s: duration,
                with_load,
                output_dir: None,
            })?;
            print!("{}", render_bench(&report));
            Ok(0)
        }
        CliCommand::Catalog => {
            print!("{}", catalog_command());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("wattmon: error: {e:#}");
            if e.downcast_ref::<Validation>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
