//! `tid` command line: `serve`, `send`, `monitor` and `bench`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use signal_hook::consts::{SIGINT, SIGTERM};
use signal_hook::iterator::Signals;

use crate::acqsim::{SimAcquisition, DEFAULT_BLOCK_SIZE_SAMPLES, DEFAULT_SAMPLING_RATE_HZ};
use crate::bench::{
    export_csv, frequency_grid, histogram, jitter_transfer_function, run_latency_test, summarize,
    BenchConfig, BenchMode, DEFAULT_WARMUP_COUNT,
};
use crate::client::TidClient;
use crate::message::{TidMessage, FAMILY_CUSTOM};
use crate::server::{DispatchHub, ServerConfig, DEFAULT_PORT};

#[derive(Debug, Parser)]
#[command(
    name = "tid",
    version,
    about = "TiD event bus: server, ad-hoc client, monitor and latency bench"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Server host (for `serve`: the address to bind)
    #[arg(long, global = true, default_value = "127.0.0.1")]
    pub host: String,
    /// Server TCP port
    #[arg(long, global = true, env = "TID_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the bus with a simulated acquisition block clock
    Serve(ServeArgs),
    /// Send one event and exit
    Send(SendArgs),
    /// Print every event seen on the bus, one canonical line each
    Monitor(MonitorArgs),
    /// Measure per-message latency and write CSV reports
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Simulated sampling rate
    #[arg(long, default_value_t = DEFAULT_SAMPLING_RATE_HZ)]
    pub rate_hz: f64,
    /// Samples per acquisition block
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE_SAMPLES)]
    pub block_size: u32,
    /// Write all recorded events here on shutdown
    #[arg(long)]
    pub save_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SendArgs {
    #[arg(long, default_value = "event")]
    pub description: String,
    #[arg(long, default_value = FAMILY_CUSTOM)]
    pub family: String,
    /// Integer event code
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub event: i64,
    /// Optional value; `,` or `.` as decimal separator
    #[arg(long, value_parser = parse_decimal, allow_negative_numbers = true)]
    pub value: Option<f64>,
    #[arg(long)]
    pub source: Option<String>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Human-readable output instead of canonical XML
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Measured messages per payload length
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Comma-separated description lengths in bytes
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub lengths: Vec<usize>,
    /// `dispatch` (through the bus) or `loopback` (send-call duration)
    #[arg(long, default_value_t = BenchMode::Dispatch)]
    pub mode: BenchMode,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Unmeasured messages sent before each payload length
    #[arg(long, default_value_t = DEFAULT_WARMUP_COUNT)]
    pub warmup: usize,
    /// Run against an in-process server (always the case for loopback)
    #[arg(long)]
    pub self_hosted: bool,
    #[arg(long, default_value_t = 10.0)]
    pub bin_width_micros: f64,
    #[arg(long, default_value_t = 250.0)]
    pub max_freq_hz: f64,
    #[arg(long, default_value_t = 1.0)]
    pub freq_step_hz: f64,
}

fn parse_decimal(s: &str) -> Result<f64, String> {
    match s.replace(',', ".").parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite decimal number")),
    }
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    match cli.command {
        Command::Serve(args) => serve(&common, &args),
        Command::Send(args) => send(&common, &args),
        Command::Monitor(args) => monitor(&common, &args),
        Command::Bench(args) => bench(&common, &args),
    }
}

fn serve(common: &CommonArgs, args: &ServeArgs) -> Result<()> {
    let acquisition = SimAcquisition::new(args.rate_hz, args.block_size)?;
    let config = ServerConfig {
        host: common.host.clone(),
        port: common.port,
        ..ServerConfig::default()
    };
    let hub = DispatchHub::new(config, acquisition);
    // Registered before announcing the port so an early signal is not lost.
    let mut signals = Signals::new([SIGTERM, SIGINT]).context("installing signal handlers")?;
    let server = hub.start()?;

    let mut stdout = io::stdout();
    writeln!(
        stdout,
        "listening on {} ({} Hz, {} samples/block)",
        server.local_addr(),
        args.rate_hz,
        args.block_size
    )?;
    stdout.flush()?;

    if let Some(signal) = signals.forever().next() {
        log::info!("received signal {signal}, shutting down");
    }
    server.shutdown();

    if let Some(path) = &args.save_path {
        let n = hub
            .save_events_to(path)
            .with_context(|| format!("saving events to {}", path.display()))?;
        writeln!(stdout, "saved {n} events to {}", path.display())?;
    }
    Ok(())
}

fn send(common: &CommonArgs, args: &SendArgs) -> Result<()> {
    let client = TidClient::connect(&common.host, common.port)?;
    let mut msg: TidMessage = client.new_event(&args.description, &args.family, args.event)?;
    if let Some(source) = &args.source {
        msg = msg.with_source(source.clone());
    }
    if let Some(value) = args.value {
        msg = msg.with_value(value)?;
    }
    client.send(&msg)?;
    println!("{msg}");
    client.close();
    Ok(())
}

fn monitor(common: &CommonArgs, args: &MonitorArgs) -> Result<()> {
    let pretty = args.pretty;
    let client =
        TidClient::connect_with_sink(&common.host, common.port, Default::default(), move |msg| {
            let line = if pretty {
                pretty_line(&msg)
            } else {
                msg.to_string()
            };
            let mut out = io::stdout().lock();
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        })?;
    client.wait_closed();
    bail!("disconnected from server")
}

fn pretty_line(msg: &TidMessage) -> String {
    let mut line = format!(
        "[block {:>8}] {}:{} \"{}\"",
        msg.block(),
        msg.family(),
        msg.event(),
        msg.description()
    );
    if let Some(abs) = msg.absolute() {
        line.push_str(&format!(" abs={abs}"));
    }
    if let Some(rel) = msg.relative() {
        line.push_str(&format!(" rel={rel}"));
    }
    if let Some(source) = msg.source() {
        line.push_str(&format!(" source=\"{source}\""));
    }
    if let Some(value) = msg.value() {
        line.push_str(&format!(" value={value}"));
    }
    line
}

fn bench(common: &CommonArgs, args: &BenchArgs) -> Result<()> {
    let positive = |x: f64| x > 0.0;
    if !positive(args.bin_width_micros) || !positive(args.freq_step_hz) {
        bail!("--bin-width-micros and --freq-step-hz must be positive");
    }
    let mut config = BenchConfig {
        message_count: args.count,
        payload_lengths: args.lengths.clone(),
        mode: args.mode,
        host: common.host.clone(),
        port: common.port,
        warmup_count: args.warmup,
        ..BenchConfig::default()
    };
    config.validate()?;

    let internal = if args.self_hosted || args.mode == BenchMode::Loopback {
        let server_config = ServerConfig {
            host: "127.0.0.1".into(),
            port: 0,
            ..ServerConfig::default()
        };
        let server = DispatchHub::new(server_config, SimAcquisition::default()).start()?;
        config.host = "127.0.0.1".into();
        config.port = server.port();
        Some(server)
    } else {
        None
    };

    let samples = run_latency_test(&config)?;
    drop(internal);

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let latencies: Vec<f64> = samples.iter().map(|s| s.latency_micros).collect();
    export_csv(samples.as_slice(), args.out_dir.join("latency.csv"))?;
    export_csv(
        histogram(&latencies, args.bin_width_micros).as_slice(),
        args.out_dir.join("histogram.csv"),
    )?;
    let curve = jitter_transfer_function(
        &latencies,
        &frequency_grid(args.max_freq_hz, args.freq_step_hz),
    )?;
    export_csv(&curve, args.out_dir.join("transfer.csv"))?;

    println!(
        "{} mode, {} messages per length, results in {}",
        config.mode,
        config.message_count,
        args.out_dir.display()
    );
    for summary in summarize(&samples) {
        println!("{summary}");
    }
    Ok(())
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("tid").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn serve_defaults() {
        let cli = parse(&["serve"]);
        assert_eq!(cli.common.host, "127.0.0.1");
        if std::env::var_os("TID_PORT").is_none() {
            assert_eq!(cli.common.port, 9001);
        }
        let Command::Serve(s) = cli.command else {
            panic!()
        };
        assert_eq!(s.rate_hz, 500.0);
        assert_eq!(s.block_size, 10);
        assert!(s.save_path.is_none());
    }

    #[test]
    fn send_flags() {
        let cli = parse(&[
            "send",
            "--description",
            "beep",
            "--family",
            "biosig",
            "--event",
            "785",
            "--value",
            "3,14159",
        ]);
        let Command::Send(s) = cli.command else {
            panic!()
        };
        assert_eq!(
            (s.description.as_str(), s.family.as_str(), s.event),
            ("beep", "biosig", 785)
        );
        assert_eq!(s.value, Some(3.14159));

        let d = parse(&["send"]);
        let Command::Send(s) = d.command else {
            panic!()
        };
        assert_eq!(s.family, "custom");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_with_args(["tid", "send", "--event", "notanumber"]), 2);
        assert_eq!(run_with_args(["tid", "bench", "--mode", "sideways"]), 2);
        assert_eq!(run_with_args(["tid", "frobnicate"]), 2);
    }

    #[test]
    fn bench_lengths_list() {
        let cli = parse(&[
            "bench",
            "--lengths",
            "32,512,4096",
            "--count",
            "500",
            "--mode",
            "loopback",
        ]);
        let Command::Bench(b) = cli.command else {
            panic!()
        };
        assert_eq!(b.lengths, vec![32, 512, 4096]);
        assert_eq!(b.count, 500);
        assert_eq!(b.mode, BenchMode::Loopback);
        assert_eq!(b.warmup, 100);
    }

    #[test]
    fn port_flag_after_subcommand() {
        let cli = parse(&["monitor", "--port", "4242", "--pretty"]);
        assert_eq!(cli.common.port, 4242);
    }

    #[test]
    fn decimal_parser() {
        assert_eq!(parse_decimal("1,5"), Ok(1.5));
        assert_eq!(parse_decimal("-2.25"), Ok(-2.25));
        assert!(parse_decimal("nan").is_err());
        assert!(parse_decimal("abc").is_err());
    }
}
