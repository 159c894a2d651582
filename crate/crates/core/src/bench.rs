//! Latency benchmarking and jitter analysis.
//!
//! Two measurement modes:
//!
//! * `Dispatch`: a sender and a receiver client both live in this process and
//!   talk through the bus. Latency is receive instant minus send instant on
//!   the same monotonic clock. This is the full client→server→client path
//!   even when the server runs on another host, and needs no clock sync.
//! * `Loopback`: a single client, latency is the duration of the send call.
//!
//! Messages are paced: the next one is sent only after the previous one was
//! observed (dispatch) or handed to the transport (loopback), so queueing
//! does not leak into the numbers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::client::{ClientError, ClientOptions, TidClient};
use crate::message::{serialize_message, MicroDuration, MicroTime, TidMessage, FAMILY_CUSTOM};
use crate::server::DEFAULT_PORT;
use crate::wire::DEFAULT_MAX_FRAME_BYTES;

pub const DEFAULT_WARMUP_COUNT: usize = 100;
pub const LATENCY_CSV_HEADER: [&str; 3] = ["sequence", "payload_length", "latency_micros"];
pub const HISTOGRAM_CSV_HEADER: [&str; 2] = ["bin_start_micros", "count"];
pub const TRANSFER_CSV_HEADER: [&str; 2] = ["frequency_hz", "attenuation"];

const SYNC_EVENT: i64 = i64::MIN;
const SYNC_INTERVAL: Duration = Duration::from_millis(20);
const SYNC_DEADLINE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench configuration: {0}")]
    InvalidConfig(String),
    #[error("server unreachable: {0}")]
    ServerUnreachable(#[source] ClientError),
    #[error("measured message {0} was not received")]
    MessageLost(u64),
    #[error("warmup message {0} was not received")]
    WarmupLost(u64),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("jitter analysis needs at least one sample")]
    EmptySamples,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Loopback,
    Dispatch,
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::Loopback => "loopback",
            BenchMode::Dispatch => "dispatch",
        })
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loopback" => Ok(BenchMode::Loopback),
            "dispatch" => Ok(BenchMode::Dispatch),
            other => Err(format!(
                "unknown bench mode `{other}` (expected loopback or dispatch)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub message_count: usize,
    /// Description lengths in bytes; one run per entry.
    pub payload_lengths: Vec<usize>,
    pub mode: BenchMode,
    pub host: String,
    pub port: u16,
    pub warmup_count: usize,
    pub max_frame_bytes: usize,
    /// How long the receiver waits for each message before declaring it lost.
    pub receive_timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            message_count: 1000,
            payload_lengths: vec![32],
            mode: BenchMode::Dispatch,
            host: "127.0.0.1".to_owned(),
            port: DEFAULT_PORT,
            warmup_count: DEFAULT_WARMUP_COUNT,
            max_frame_bytes: DEFAULT_MAX_FRAME_BYTES,
            receive_timeout: Duration::from_secs(2),
        }
    }
}

impl BenchConfig {
    /// Largest payload that still fits one frame after the server stamps it.
    pub fn max_payload_length(&self) -> usize {
        let overhead = worst_case_stamped(1).to_xml().len() - 1;
        self.max_frame_bytes.saturating_sub(overhead)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.message_count == 0 {
            return Err(BenchError::InvalidConfig(
                "message count must be positive".into(),
            ));
        }
        if self.payload_lengths.is_empty() {
            return Err(BenchError::InvalidConfig("no payload lengths given".into()));
        }
        let max = self.max_payload_length();
        for &len in &self.payload_lengths {
            if len == 0 || len > max {
                return Err(BenchError::InvalidConfig(format!(
                    "payload length {len} outside 1..={max}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub sequence: u64,
    pub payload_length: usize,
    pub latency_micros: f64,
}

/// Bench message whose description is exactly `payload_length` bytes of 'x'.
pub fn bench_message(event: i64, payload_length: usize) -> TidMessage {
    TidMessage::new("x".repeat(payload_length.max(1)), FAMILY_CUSTOM, event)
        .expect("non-empty description and family")
}

fn worst_case_stamped(payload_length: usize) -> TidMessage {
    bench_message(i64::MIN, payload_length)
        .with_block(i64::MAX)
        .expect("valid block")
        .with_absolute(MicroTime::new(u64::MAX / 1_000_000 - 1, 999_999))
        .with_relative(MicroDuration::new(u64::MAX / 1_000_000 - 1, 999_999))
}

/// Runs the configured benchmark against a live server.
///
/// Each payload length gets `warmup_count` unmeasured messages followed by
/// `message_count` measured ones. Samples come back in measurement order.
pub fn run_latency_test(config: &BenchConfig) -> Result<Vec<LatencySample>, BenchError> {
    config.validate()?;
    let options = ClientOptions {
        max_frame_bytes: config.max_frame_bytes,
        ..ClientOptions::default()
    };
    match config.mode {
        BenchMode::Loopback => run_loopback(config, options),
        BenchMode::Dispatch => run_dispatch(config, options),
    }
}

fn connect(config: &BenchConfig, options: ClientOptions) -> Result<TidClient, BenchError> {
    TidClient::connect_with(&config.host, config.port, options)
        .map_err(BenchError::ServerUnreachable)
}

fn run_loopback(
    config: &BenchConfig,
    options: ClientOptions,
) -> Result<Vec<LatencySample>, BenchError> {
    let sender = connect(config, options)?;
    let mut samples = Vec::with_capacity(config.message_count * config.payload_lengths.len());
    let mut sequence = 0u64;
    for &len in &config.payload_lengths {
        for i in 0..config.warmup_count {
            sender.send(&bench_message(-(i as i64) - 1, len))?;
        }
        for _ in 0..config.message_count {
            let msg = bench_message(sequence as i64, len);
            let start = Instant::now();
            sender.send(&msg)?;
            let elapsed = start.elapsed();
            samples.push(LatencySample {
                sequence,
                payload_length: len,
                latency_micros: micros_f64(elapsed),
            });
            sequence += 1;
        }
    }
    Ok(samples)
}

fn run_dispatch(
    config: &BenchConfig,
    options: ClientOptions,
) -> Result<Vec<LatencySample>, BenchError> {
    let (arrivals, observed) = mpsc::channel::<(i64, usize, Instant)>();
    let _receiver =
        TidClient::connect_with_sink(&config.host, config.port, options.clone(), move |m| {
            let _ = arrivals.send((m.event(), m.description().len(), Instant::now()));
        })
        .map_err(BenchError::ServerUnreachable)?;
    let sender = connect(config, options)?;

    sync_path(&sender, &observed)?;

    // Other traffic on the bus (late sync probes, other clients) is skipped.
    let wait_for = |code: i64, len: usize| -> Option<Instant> {
        let deadline = Instant::now() + config.receive_timeout;
        loop {
            let left = deadline.checked_duration_since(Instant::now())?;
            match observed.recv_timeout(left) {
                Ok((c, l, at)) if c == code && l == len => return Some(at),
                Ok(_) => continue,
                Err(_) => return None,
            }
        }
    };

    let mut samples = Vec::with_capacity(config.message_count * config.payload_lengths.len());
    let mut sequence = 0u64;
    let mut warmup = 0u64;
    for &len in &config.payload_lengths {
        for _ in 0..config.warmup_count {
            let code = -(warmup as i64) - 1;
            sender.send(&bench_message(code, len))?;
            wait_for(code, len).ok_or(BenchError::WarmupLost(warmup))?;
            warmup += 1;
        }
        for _ in 0..config.message_count {
            let msg = bench_message(sequence as i64, len);
            let sent = Instant::now();
            sender.send(&msg)?;
            let arrived =
                wait_for(sequence as i64, len).ok_or(BenchError::MessageLost(sequence))?;
            samples.push(LatencySample {
                sequence,
                payload_length: len,
                latency_micros: micros_f64(arrived.saturating_duration_since(sent)),
            });
            sequence += 1;
        }
    }
    Ok(samples)
}

/// Sends sync probes until the receiver sees one, so the server has
/// registered both ends before anything is measured.
fn sync_path(
    sender: &TidClient,
    observed: &mpsc::Receiver<(i64, usize, Instant)>,
) -> Result<(), BenchError> {
    let probe = bench_message(SYNC_EVENT, 4);
    let deadline = Instant::now() + SYNC_DEADLINE;
    while Instant::now() < deadline {
        sender.send(&probe)?;
        let retry_at = Instant::now() + SYNC_INTERVAL;
        while let Some(left) = retry_at.checked_duration_since(Instant::now()) {
            match observed.recv_timeout(left) {
                Ok((SYNC_EVENT, _, _)) => return Ok(()),
                Ok(_) => continue,
                Err(_) => break,
            }
        }
    }
    Err(BenchError::ServerUnreachable(ClientError::Timeout(
        "no sync probe came back through the bus".into(),
    )))
}

fn micros_f64(d: Duration) -> f64 {
    d.as_nanos() as f64 / 1_000.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub bin_start_micros: f64,
    pub count: u64,
}

/// Fixed-width histogram. Bin `k` covers `[k·w, (k+1)·w)`; every bin between
/// the minimum and the maximum sample is present, including empty ones.
///
/// Panics if `bin_width_micros` is not positive.
pub fn histogram(latencies: &[f64], bin_width_micros: f64) -> Vec<HistogramBin> {
    assert!(
        bin_width_micros > 0.0 && bin_width_micros.is_finite(),
        "bin width must be positive"
    );
    let bin_of = |x: f64| (x / bin_width_micros).floor() as i64;
    let Some(lo) = latencies.iter().map(|&x| bin_of(x)).min() else {
        return Vec::new();
    };
    let hi = latencies.iter().map(|&x| bin_of(x)).max().unwrap_or(lo);
    let mut counts = vec![0u64; (hi - lo) as usize + 1];
    for &x in latencies {
        counts[(bin_of(x) - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_start_micros: (lo + i as i64) as f64 * bin_width_micros,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    pub frequencies_hz: Vec<f64>,
    /// Amplitude factor in `[0, 1]`, one per frequency.
    pub attenuation: Vec<f64>,
}

/// Attenuation of a sinusoid at each frequency when epochs aligned on events
/// with the given latencies are averaged:
///
/// `H(f) = | (1/N) Σ exp(-i·2π·f·τ_k) |`
///
/// with `τ_k` the latency minus the mean latency, in seconds. A constant
/// delay only rotates the phasor sum, so it has no effect on `H`.
pub fn jitter_transfer_function(
    latencies_micros: &[f64],
    frequencies_hz: &[f64],
) -> Result<TransferCurve, BenchError> {
    if latencies_micros.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    let n = latencies_micros.len() as f64;
    let mean = latencies_micros.iter().sum::<f64>() / n;
    let offsets_s: Vec<f64> = latencies_micros
        .iter()
        .map(|&t| (t - mean) * 1e-6)
        .collect();

    let attenuation = frequencies_hz
        .iter()
        .map(|&f| {
            let (re, im) = offsets_s.iter().fold((0.0, 0.0), |(re, im), &tau| {
                let phase = -2.0 * PI * f * tau;
                (re + phase.cos(), im + phase.sin())
            });
            ((re / n).hypot(im / n)).min(1.0)
        })
        .collect();
    Ok(TransferCurve {
        frequencies_hz: frequencies_hz.to_vec(),
        attenuation,
    })
}

/// `0, step, 2·step, … ≤ max_hz`.
pub fn frequency_grid(max_hz: f64, step_hz: f64) -> Vec<f64> {
    assert!(step_hz > 0.0, "frequency step must be positive");
    let steps = (max_hz / step_hz).floor().max(0.0) as usize;
    (0..=steps).map(|k| k as f64 * step_hz).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub payload_length: usize,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub p99: f64,
    pub max: f64,
}

impl fmt::Display for LatencySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "payload {:>6} B  n={:<6} min {:>10.3} µs  median {:>10.3} µs  p99 {:>10.3} µs  max {:>10.3} µs",
            self.payload_length, self.count, self.min, self.median, self.p99, self.max
        )
    }
}

/// Median of the values; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Nearest-rank percentile, `p` in `(0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Per payload length, in order of first appearance.
pub fn summarize(samples: &[LatencySample]) -> Vec<LatencySummary> {
    let mut order = Vec::new();
    let mut groups: HashMap<usize, Vec<f64>> = HashMap::new();
    for s in samples {
        groups
            .entry(s.payload_length)
            .or_insert_with(|| {
                order.push(s.payload_length);
                Vec::new()
            })
            .push(s.latency_micros);
    }
    order
        .into_iter()
        .map(|len| {
            let values = &groups[&len];
            LatencySummary {
                payload_length: len,
                count: values.len(),
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                median: median(values).unwrap_or(f64::NAN),
                p99: percentile(values, 99.0).unwrap_or(f64::NAN),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Data that can be written as one of the bench CSV files.
pub trait CsvExport {
    /// Writes a header row plus one row per record; returns the record count.
    fn write_csv<W: Write>(&self, destination: W) -> Result<usize, BenchError>;
}

impl CsvExport for [LatencySample] {
    fn write_csv<W: Write>(&self, destination: W) -> Result<usize, BenchError> {
        let mut w = csv::Writer::from_writer(destination);
        w.write_record(LATENCY_CSV_HEADER)?;
        for s in self {
            w.write_record([
                s.sequence.to_string(),
                s.payload_length.to_string(),
                s.latency_micros.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(self.len())
    }
}

impl CsvExport for [HistogramBin] {
    fn write_csv<W: Write>(&self, destination: W) -> Result<usize, BenchError> {
        let mut w = csv::Writer::from_writer(destination);
        w.write_record(HISTOGRAM_CSV_HEADER)?;
        for b in self {
            w.write_record([b.bin_start_micros.to_string(), b.count.to_string()])?;
        }
        w.flush()?;
        Ok(self.len())
    }
}

impl CsvExport for TransferCurve {
    fn write_csv<W: Write>(&self, destination: W) -> Result<usize, BenchError> {
        let mut w = csv::Writer::from_writer(destination);
        w.write_record(TRANSFER_CSV_HEADER)?;
        for (f, h) in self.frequencies_hz.iter().zip(&self.attenuation) {
            w.write_record([f.to_string(), h.to_string()])?;
        }
        w.flush()?;
        Ok(self.frequencies_hz.len())
    }
}

pub fn export_csv<T: CsvExport + ?Sized>(
    data: &T,
    path: impl AsRef<Path>,
) -> Result<usize, BenchError> {
    let file = BufWriter::new(File::create(path)?);
    data.write_csv(file)
}

/// Reads back a `latency.csv`.
pub fn read_latency_csv<R: Read>(source: R) -> Result<Vec<LatencySample>, BenchError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let bad = |what: &str| BenchError::InvalidConfig(format!("bad {what} in latency csv"));
        samples.push(LatencySample {
            sequence: field(0).parse().map_err(|_| bad("sequence"))?,
            payload_length: field(1).parse().map_err(|_| bad("payload_length"))?,
            latency_micros: field(2).parse().map_err(|_| bad("latency_micros"))?,
        });
    }
    Ok(samples)
}

/// Serialized size of a bench message with the given payload, as the
/// sender puts it on the wire (frame terminator excluded).
pub fn bench_frame_length(payload_length: usize) -> usize {
    serialize_message(&bench_message(0, payload_length)).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_basic() {
        let h = histogram(&[5.0, 15.0, 25.0], 10.0);
        let pairs: Vec<_> = h.iter().map(|b| (b.bin_start_micros, b.count)).collect();
        assert_eq!(pairs, vec![(0.0, 1), (10.0, 1), (20.0, 1)]);
        assert!(histogram(&[], 10.0).is_empty());
    }

    #[test]
    fn histogram_includes_empty_bins_and_edges() {
        let h = histogram(&[10.0, 10.0, 49.999, 50.0], 10.0);
        let pairs: Vec<_> = h.iter().map(|b| (b.bin_start_micros, b.count)).collect();
        assert_eq!(
            pairs,
            vec![(10.0, 2), (20.0, 0), (30.0, 0), (40.0, 1), (50.0, 1)]
        );
        let neg = histogram(&[-5.0, 5.0], 10.0);
        assert_eq!(neg[0].bin_start_micros, -10.0);
    }

    #[test]
    #[should_panic(expected = "bin width")]
    fn histogram_rejects_zero_width() {
        histogram(&[1.0], 0.0);
    }

    #[test]
    fn transfer_function_anchor_values() {
        let curve = jitter_transfer_function(&[3.0, 17.0, 250.0], &[0.0]).unwrap();
        assert_eq!(curve.attenuation, vec![1.0]);

        let same = jitter_transfer_function(&[123.0; 8], &[0.0, 10.0, 125.0, 1000.0]).unwrap();
        assert!(same.attenuation.iter().all(|&h| h == 1.0), "{same:?}");

        // ±1000 µs at 125 Hz: two phasors at ±π/4
        let pm = jitter_transfer_function(&[1000.0, -1000.0], &[125.0]).unwrap();
        let oracle = {
            let a = (-2.0 * PI * 125.0 * 0.001_f64).cos() + (2.0 * PI * 125.0 * 0.001_f64).cos();
            (a / 2.0).abs()
        };
        assert!((pm.attenuation[0] - oracle).abs() < 1e-12);
        assert!((pm.attenuation[0] - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn transfer_function_rejects_empty() {
        assert!(matches!(
            jitter_transfer_function(&[], &[1.0]),
            Err(BenchError::EmptySamples)
        ));
    }

    #[test]
    fn constant_delay_does_not_change_attenuation() {
        let jitter = [0.0, 400.0, 1300.0, 2000.0];
        let shifted: Vec<f64> = jitter.iter().map(|t| t + 50_000.0).collect();
        let f = [7.0, 60.0, 333.0];
        let a = jitter_transfer_function(&jitter, &f).unwrap();
        let b = jitter_transfer_function(&shifted, &f).unwrap();
        for (x, y) in a.attenuation.iter().zip(&b.attenuation) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 99.0), Some(99.0));
        assert_eq!(percentile(&hundred, 100.0), Some(100.0));
        assert_eq!(percentile(&[5.0], 99.0), Some(5.0));
    }

    #[test]
    fn summary_groups_by_length() {
        let samples: Vec<_> = (0..6)
            .map(|i| LatencySample {
                sequence: i,
                payload_length: if i < 3 { 32 } else { 512 },
                latency_micros: (i + 1) as f64,
            })
            .collect();
        let s = summarize(&samples);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].payload_length, s[0].count, s[0].median), (32, 3, 2.0));
        assert_eq!((s[1].min, s[1].max), (4.0, 6.0));
    }

    #[test]
    fn csv_export_counts_and_header() {
        let samples: Vec<_> = (0..1000)
            .map(|i| LatencySample {
                sequence: i,
                payload_length: 32,
                latency_micros: 10.0 + i as f64 / 7.0,
            })
            .collect();
        let mut out = Vec::new();
        assert_eq!(samples.write_csv(&mut out).unwrap(), 1000);
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(text.lines().count(), 1001);
        assert_eq!(
            text.lines().next(),
            Some("sequence,payload_length,latency_micros")
        );
        let back = read_latency_csv(&out[..]).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.sequence, b.sequence);
            assert!(((a.latency_micros - b.latency_micros) / a.latency_micros).abs() < 1e-6);
        }

        let mut empty = Vec::new();
        assert_eq!(
            Vec::<LatencySample>::new().write_csv(&mut empty).unwrap(),
            0
        );
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "sequence,payload_length,latency_micros\n"
        );

        let mut h = Vec::new();
        histogram(&[1.0], 1.0).write_csv(&mut h).unwrap();
        assert!(String::from_utf8(h)
            .unwrap()
            .starts_with("bin_start_micros,count\n"));
        let mut t = Vec::new();
        jitter_transfer_function(&[1.0], &[0.0])
            .unwrap()
            .write_csv(&mut t)
            .unwrap();
        assert_eq!(
            String::from_utf8(t).unwrap(),
            "frequency_hz,attenuation\n0,1\n"
        );
    }

    #[test]
    fn config_validation() {
        let ok = BenchConfig::default();
        ok.validate().unwrap();
        let max = ok.max_payload_length();
        assert!(max > 60_000 && max < DEFAULT_MAX_FRAME_BYTES);
        let stamped = worst_case_stamped(max).to_xml().len();
        assert_eq!(stamped, ok.max_frame_bytes);

        for bad in [
            BenchConfig {
                message_count: 0,
                ..BenchConfig::default()
            },
            BenchConfig {
                payload_lengths: vec![],
                ..BenchConfig::default()
            },
            BenchConfig {
                payload_lengths: vec![0],
                ..BenchConfig::default()
            },
            BenchConfig {
                payload_lengths: vec![max + 1],
                ..BenchConfig::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(BenchError::InvalidConfig(_))));
        }
    }

    #[test]
    fn payload_length_controls_description() {
        let m = bench_message(5, 32);
        assert_eq!(m.description().len(), 32);
        assert_eq!(bench_frame_length(64) - bench_frame_length(32), 32);
    }

    #[test]
    fn frequency_grid_inclusive() {
        assert_eq!(frequency_grid(2.0, 0.5), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(frequency_grid(0.0, 1.0), vec![0.0]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("loopback".parse::<BenchMode>(), Ok(BenchMode::Loopback));
        assert_eq!("dispatch".parse::<BenchMode>(), Ok(BenchMode::Dispatch));
        assert!("Dispatch".parse::<BenchMode>().is_err());
    }
}
