#![allow(dead_code)]

use std::f64::consts::PI;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use tid::message::{MicroDuration, MicroTime, ProtocolVersion, TidMessage};
use tid::server::{BlockSource, DispatchHub, ServerConfig, ServerHandle};

pub const GOLDEN_MESSAGE: &str = r#"<tid version="0.3.0.0" description="beep" block="1732" family="biosig" event="785" absolute="1330691458,821096" relative="34687,761248" source="P300 detector" value="3,14159"/>"#;

const ALPHABET: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '9', ' ', '_', '-', '.', ',', '<', '>', '&', '"', '\'', '=', '/',
    '\n', '\r', '\t', 'µ', 'ß', 'é', '漢', '😀', ';', '#',
];

pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Arbitrary valid message, including unset timestamps and optionals.
///
/// Values are drawn as whole multiples of 10⁻⁶ below 10⁹ in magnitude, the
/// precision the wire format carries.
pub fn random_message<R: Rng>(rng: &mut R) -> TidMessage {
    let family = match rng.random_range(0..3) {
        0 => "biosig".to_owned(),
        1 => "custom".to_owned(),
        _ => random_text(rng, 12),
    };
    let mut m = TidMessage::new(random_text(rng, 40), family, rng.random())
        .unwrap()
        .with_version(ProtocolVersion::new(
            rng.random(),
            rng.random(),
            rng.random(),
            rng.random(),
        ));
    if rng.random_bool(0.8) {
        let block = if rng.random_bool(0.2) {
            -1
        } else {
            rng.random_range(0..i64::MAX)
        };
        m = m.with_block(block).unwrap();
    }
    if rng.random_bool(0.8) {
        m = m.with_absolute(MicroTime::new(
            rng.random_range(0..u64::MAX / 2_000_000),
            rng.random_range(0..1_000_000),
        ));
    }
    if rng.random_bool(0.8) {
        m = m.with_relative(MicroDuration::new(
            rng.random_range(0..u64::MAX / 2_000_000),
            rng.random_range(0..1_000_000),
        ));
    }
    if rng.random_bool(0.5) {
        m = m.with_source(random_text(rng, 20));
    }
    if rng.random_bool(0.5) {
        let units: i64 = rng.random_range(-999_999_999_999_999..=999_999_999_999_999);
        m = m.with_value(units as f64 / 1e6).unwrap();
    }
    m
}

pub fn start_server(block_source: impl BlockSource + 'static) -> ServerHandle {
    let config = ServerConfig {
        port: 0,
        ..ServerConfig::default()
    };
    DispatchHub::new(config, block_source)
        .start()
        .expect("start server")
}

pub fn wait_clients(server: &ServerHandle, n: usize) {
    assert!(
        server.hub().wait_for_clients(n, Duration::from_secs(5)),
        "only {} of {n} clients registered",
        server.hub().client_count()
    );
}

/// Counts whole blocks by exact integer comparison: the largest `k` with
/// `k · block_size · 10⁶ · scale ≤ micros · rate_scaled`, where the rate is
/// `rate_scaled / scale`.
pub fn oracle_block_count(rate_scaled: u128, scale: u128, block_size: u128, micros: u128) -> u128 {
    let fits = |k: u128| k * block_size * 1_000_000 * scale <= micros * rate_scaled;
    let (mut lo, mut hi) = (0u128, 1u128);
    while fits(hi) {
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Averages `sin(2πf(t − τ_k))` over all epochs, sampled densely across one
/// full period, and recovers the amplitude from the mean square power.
pub fn brute_force_attenuation(jitter_micros: &[f64], frequency_hz: f64) -> f64 {
    const SAMPLES: usize = 2000;
    let period = 1.0 / frequency_hz;
    let n = jitter_micros.len() as f64;
    let mut power = 0.0;
    for i in 0..SAMPLES {
        let t = period * i as f64 / SAMPLES as f64;
        let avg: f64 = jitter_micros
            .iter()
            .map(|tau| (2.0 * PI * frequency_hz * (t - tau * 1e-6)).sin())
            .sum::<f64>()
            / n;
        power += avg * avg;
    }
    (2.0 * power / SAMPLES as f64).sqrt()
}

/// Reference framing: split on LF and drop the unterminated tail.
pub fn lf_split(stream: &[u8]) -> Vec<String> {
    let mut parts: Vec<&[u8]> = stream.split(|&b| b == b'\n').collect();
    parts.pop();
    parts
        .into_iter()
        .map(|p| String::from_utf8(p.to_vec()).unwrap())
        .collect()
}
