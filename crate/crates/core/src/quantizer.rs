//! `l`-bit mid-rise quantizer with a geometrically shrinking cell width,
//! subtractive dithering and the differential encode/decode pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSchedule {
    pub delta0: f64,
    pub gamma: f64,
    pub delta_min: f64,
    pub bits: u32,
}

impl QuantizerSchedule {
    pub fn new(delta0: f64, gamma: f64, delta_min: f64, bits: u32) -> Result<Self, ProtocolError> {
        let sched = Self {
            delta0,
            gamma,
            delta_min,
            bits,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |field, reason: String| Err(ProtocolError::InvalidConfig { field, reason });
        if !(self.delta0 > 0.0) || !self.delta0.is_finite() {
            return bad(
                "adqsp.delta0",
                format!("must be positive, got {}", self.delta0),
            );
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(
                "adqsp.gamma",
                format!("must lie in (0, 1), got {}", self.gamma),
            );
        }
        if !(self.delta_min >= 0.0) || !self.delta_min.is_finite() {
            return bad(
                "adqsp.delta_min",
                format!("must be >= 0, got {}", self.delta_min),
            );
        }
        if !(1..=62).contains(&self.bits) {
            return bad(
                "adqsp.bits",
                format!("must lie in 1..=62, got {}", self.bits),
            );
        }
        Ok(())
    }

    /// `max(gamma^t delta0, delta_min)`.
    pub fn cell_width(&self, t: usize) -> f64 {
        let decayed = self.delta0 * self.gamma.powf(t as f64);
        decayed.max(self.delta_min)
    }

    /// Smallest and largest level index `a`; levels are `delta (a + 1/2)`.
    pub fn level_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.bits - 1);
        (-half, half - 1)
    }

    /// Representation levels at iteration `t`, ascending.
    pub fn levels(&self, t: usize) -> Vec<f64> {
        let (lo, hi) = self.level_range();
        let width = self.cell_width(t);
        (lo..=hi).map(|a| width * (a as f64 + 0.5)).collect()
    }
}

/// Result of quantizing one value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    /// `q - dither`.
    pub output: f64,
    pub level: i64,
    pub saturated: bool,
}

/// Nearest level index for `v / width`, ties rounded away from zero.
fn nearest_level(scaled: f64) -> i64 {
    let scaled = scaled.clamp(-4.0e18, 4.0e18);
    let floor = scaled.floor();
    if scaled < 0.0 && scaled == floor {
        floor as i64 - 1
    } else {
        floor as i64
    }
}

/// Subtractive-dithered quantization of `value` with cell width `delta^(t)`.
pub fn quantize(value: f64, sched: &QuantizerSchedule, t: usize, dither: f64) -> Quantized {
    quantize_width(value, sched, sched.cell_width(t), dither)
}

fn quantize_width(value: f64, sched: &QuantizerSchedule, width: f64, dither: f64) -> Quantized {
    debug_assert!(
        dither.abs() <= width / 2.0 + 1e-12 * width,
        "dither outside cell"
    );
    let (lo, hi) = sched.level_range();
    let raw = nearest_level((value + dither) / width);
    let level = raw.clamp(lo, hi);
    let q = width * (level as f64 + 0.5);
    Quantized {
        output: q - dither,
        level,
        saturated: level != raw,
    }
}

/// Per-directed-edge dither source. Sender and receiver build it from the
/// same `(seed, slot)` pair and draw in lockstep.
#[derive(Debug, Clone)]
pub struct DitherStream {
    rng: ChaCha8Rng,
}

impl DitherStream {
    pub fn new(global_seed: u64, slot: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(global_seed, &[0x6469_7468, slot as u64])),
        }
    }

    /// Next dither, uniform on `[-width/2, width/2)`.
    pub fn next(&mut self, width: f64) -> f64 {
        (self.rng.random::<f64>() - 0.5) * width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoded {
    /// Transmitted quantized difference.
    pub delta_hat: f64,
    pub level: i64,
    /// `delta_hat - (z_new - zhat_prev)`, equal to `zhat_new - z_new`.
    pub noise: f64,
    pub saturated: bool,
}

/// Quantizes `z_new - zhat_prev` at iteration `t`.
pub fn diff_encode(
    z_new: f64,
    zhat_prev: f64,
    t: usize,
    sched: &QuantizerSchedule,
    stream: &mut DitherStream,
) -> Encoded {
    diff_encode_width(z_new, zhat_prev, sched.cell_width(t), sched, stream)
}

/// [`diff_encode`] with the cell width of the current step precomputed.
pub fn diff_encode_width(
    z_new: f64,
    zhat_prev: f64,
    width: f64,
    sched: &QuantizerSchedule,
    stream: &mut DitherStream,
) -> Encoded {
    let diff = z_new - zhat_prev;
    let dither = stream.next(width);
    let q = quantize_width(diff, sched, width, dither);
    Encoded {
        delta_hat: q.output,
        level: q.level,
        noise: q.output - diff,
        saturated: q.saturated,
    }
}

/// Receiver side: rebuilds `delta_hat` from the level index with its own
/// dither copy. Bit-identical to the sender's value.
pub fn decode_level(
    level: i64,
    t: usize,
    sched: &QuantizerSchedule,
    stream: &mut DitherStream,
) -> f64 {
    decode_level_width(level, sched.cell_width(t), stream)
}

pub fn decode_level_width(level: i64, width: f64, stream: &mut DitherStream) -> f64 {
    let dither = stream.next(width);
    width * (level as f64 + 0.5) - dither
}

pub fn diff_decode(zhat_prev: f64, delta_hat: f64) -> f64 {
    zhat_prev + delta_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched(delta0: f64, gamma: f64, delta_min: f64, bits: u32) -> QuantizerSchedule {
        QuantizerSchedule::new(delta0, gamma, delta_min, bits).unwrap()
    }

    #[test]
    fn cell_width_examples() {
        let s = sched(1.0, 0.5, 0.2, 2);
        assert_eq!(s.cell_width(3), 0.2);
        assert_eq!(s.cell_width(0), 1.0);
        let s0 = sched(1.0, 0.5, 0.0, 2);
        let widths: Vec<f64> = (0..60).map(|t| s0.cell_width(t)).collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]));
        assert!(widths[59] < 1e-17);
    }

    #[test]
    fn two_bit_levels() {
        let s = sched(1.0, 0.5, 0.0, 2);
        assert_eq!(s.levels(0), vec![-1.5, -0.5, 0.5, 1.5]);
        let q = quantize(0.3, &s, 0, 0.0);
        assert_eq!((q.output, q.level, q.saturated), (0.5, 0, false));
        let q = quantize(10.0, &s, 0, 0.0);
        assert_eq!((q.output, q.level, q.saturated), (1.5, 1, true));
        let q = quantize(-10.0, &s, 0, 0.0);
        assert_eq!((q.output, q.saturated), (-1.5, true));
    }

    #[test]
    fn ties_round_away_from_zero() {
        let s = sched(1.0, 0.5, 0.0, 3);
        assert_eq!(quantize(1.0, &s, 0, 0.0).output, 1.5);
        assert_eq!(quantize(-1.0, &s, 0, 0.0).output, -1.5);
    }

    #[test]
    fn validation() {
        assert!(QuantizerSchedule::new(0.0, 0.5, 0.0, 2).is_err());
        assert!(QuantizerSchedule::new(1.0, 1.0, 0.0, 2).is_err());
        assert!(QuantizerSchedule::new(1.0, 0.5, -1.0, 2).is_err());
        assert!(QuantizerSchedule::new(1.0, 0.5, 0.0, 0).is_err());
    }

    #[test]
    fn zero_difference_is_dithered_zero() {
        let s = sched(2.0, 0.9, 0.0, 2);
        let mut stream = DitherStream::new(1, 0);
        for t in 0..50 {
            let e = diff_encode(3.0, 3.0, t, &s, &mut stream);
            let half = s.cell_width(t) / 2.0;
            assert!(e.delta_hat.abs() <= half && e.noise.abs() <= half);
        }
    }

    #[test]
    fn sender_and_receiver_agree() {
        let s = sched(4.0, 0.8, 0.01, 2);
        let mut tx = DitherStream::new(77, 5);
        let mut rx = DitherStream::new(77, 5);
        let (mut z_tx, mut z_rx) = (0.0, 0.0);
        for t in 0..100 {
            let target = 2.0 * (t as f64 * 0.3).cos() * 0.8f64.powi(t as i32);
            let e = diff_encode(target, z_tx, t, &s, &mut tx);
            z_tx = diff_decode(z_tx, e.delta_hat);
            z_rx = diff_decode(z_rx, decode_level(e.level, t, &s, &mut rx));
            assert_eq!(z_tx.to_bits(), z_rx.to_bits());
            assert!((z_tx - target - e.noise).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_slots_draw_distinct_dithers() {
        let mut a = DitherStream::new(3, 0);
        let mut b = DitherStream::new(3, 1);
        let da: Vec<f64> = (0..8).map(|_| a.next(1.0)).collect();
        let db: Vec<f64> = (0..8).map(|_| b.next(1.0)).collect();
        assert_ne!(da, db);
    }

    #[test]
    fn huge_inputs_saturate_without_overflow() {
        let s = sched(1e-300, 0.5, 0.0, 2);
        assert!(quantize(-1e300, &s, 0, 0.0).saturated);
        assert!(quantize(1e300, &s, 0, 0.0).saturated);
    }

    proptest! {
        #[test]
        fn in_range_error_is_bounded(value in -1.4f64..1.4, u in -0.5f64..0.5, bits in 2u32..6) {
            let s = sched(1.0, 0.5, 0.0, bits);
            let q = quantize(value, &s, 0, u);
            prop_assert!(!q.saturated);
            prop_assert!((q.output - value).abs() <= 0.5 + 1e-12);
        }

        #[test]
        fn output_sits_on_a_shifted_level(value in -10.0f64..10.0, u in -0.5f64..0.5) {
            let s = sched(1.0, 0.5, 0.0, 2);
            let q = quantize(value, &s, 0, u);
            let level = q.output + u;
            prop_assert!(s.levels(0).iter().any(|l| (l - level).abs() < 1e-12));
        }
    }
}
