//! Simulated data acquisition clock.
//!
//! Stands in for an acquisition system that delivers samples in fixed-size
//! blocks: at 500 Hz with blocks of 10 samples it advances 50 blocks per
//! second. Block counting starts at 0 when the simulator is created.

use std::time::Instant;

use thiserror::Error;

use crate::message::MicroDuration;
use crate::server::BlockSource;

pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 500.0;
pub const DEFAULT_BLOCK_SIZE_SAMPLES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcqSimError {
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("block size must be at least one sample")]
    InvalidBlockSize,
}

#[derive(Debug, Clone)]
pub struct SimAcquisition {
    sampling_rate_hz: f64,
    block_size_samples: u32,
    start: Instant,
}

impl Default for SimAcquisition {
    fn default() -> Self {
        Self::new(DEFAULT_SAMPLING_RATE_HZ, DEFAULT_BLOCK_SIZE_SAMPLES)
            .expect("default acquisition parameters are valid")
    }
}

impl SimAcquisition {
    /// Starts the block clock now.
    pub fn new(sampling_rate_hz: f64, block_size_samples: u32) -> Result<Self, AcqSimError> {
        Self::starting_at(sampling_rate_hz, block_size_samples, Instant::now())
    }

    pub fn starting_at(
        sampling_rate_hz: f64,
        block_size_samples: u32,
        start: Instant,
    ) -> Result<Self, AcqSimError> {
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(AcqSimError::InvalidRate(sampling_rate_hz));
        }
        if block_size_samples == 0 {
            return Err(AcqSimError::InvalidBlockSize);
        }
        Ok(Self {
            sampling_rate_hz,
            block_size_samples,
            start,
        })
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn block_size_samples(&self) -> u32 {
        self.block_size_samples
    }

    pub fn blocks_per_second(&self) -> f64 {
        self.sampling_rate_hz / f64::from(self.block_size_samples)
    }

    /// `floor(elapsed * rate / block_size)` for an explicit elapsed time.
    pub fn current_block_at(&self, elapsed: MicroDuration) -> u64 {
        blocks_elapsed(self.sampling_rate_hz, self.block_size_samples, elapsed)
    }
}

impl BlockSource for SimAcquisition {
    fn current_block(&self) -> u64 {
        self.current_block_at(self.start.elapsed().into())
    }
}

/// Exact floor of `micros · rate / (block_size · 10⁶)`.
///
/// A finite `f64` is `mantissa · 2^exponent`, so the quotient is a ratio of
/// integers and needs no rounding. Only elapsed times beyond ~10¹⁸ s fall
/// back to floating point.
fn blocks_elapsed(rate_hz: f64, block_size: u32, elapsed: MicroDuration) -> u64 {
    let micros = elapsed.as_micros();
    let denominator = u128::from(block_size) * 1_000_000;
    let (mantissa, exponent) = decompose(rate_hz);

    let Some(numerator) = micros.checked_mul(u128::from(mantissa)) else {
        return (micros as f64 * rate_hz / denominator as f64).floor() as u64;
    };
    let quotient = if exponent >= 0 {
        let shift = exponent as u32;
        if shift >= numerator.leading_zeros() {
            return u64::MAX;
        }
        (numerator << shift) / denominator
    } else {
        let shift = exponent.unsigned_abs();
        if shift >= denominator.leading_zeros() {
            // denominator · 2^shift ≥ 2^128 > numerator
            0
        } else {
            numerator / (denominator << shift)
        }
    };
    u64::try_from(quotient).unwrap_or(u64::MAX)
}

/// `value == mantissa · 2^exponent` for positive finite `value`, with the
/// mantissa odd.
fn decompose(value: f64) -> (u64, i32) {
    let bits = value.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1 << 52) - 1);
    let (mantissa, exponent) = if biased == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1 << 52), biased - 1075)
    };
    let tz = mantissa.trailing_zeros();
    (mantissa >> tz, exponent + tz as i32)
}
