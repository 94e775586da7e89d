//! Laplace noise at the scales the tuning loop uses, and reproducible
//! randomness streams.
//!
//! A [`RandomStream`] is a ChaCha8 generator keyed by a 64-bit seed and a
//! 64-bit stream id. ChaCha's stream parameter gives independent sequences
//! for distinct ids under the same seed, so every consumer (one utility
//! cell, one tuning run, one simulation seed) can own its stream without
//! coupling to the draw order of the others.

use rand::distributions::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Scale `b` of a zero-mean Laplace distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LaplaceScale(f64);

impl LaplaceScale {
    pub fn new(b: f64) -> Result<Self> {
        if !b.is_finite() || b <= 0.0 {
            return Err(invalid(
                "scale",
                format!("must be positive and finite, got {b}"),
            ));
        }
        Ok(Self(b))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_noise_args(k: usize, eps0: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if !eps0.is_finite() || eps0 <= 0.0 {
        return Err(invalid(
            "eps0",
            format!("must be positive and finite, got {eps0}"),
        ));
    }
    Ok(())
}

/// Scale of the noise added to the proposed threshold: `2 / (k * eps0)`.
pub fn threshold_noise_scale(k: usize, eps0: f64) -> Result<LaplaceScale> {
    check_noise_args(k, eps0)?;
    LaplaceScale::new(2.0 / (k as f64 * eps0))
}

/// Scale of the per-candidate query noise: `4 / (k * eps0)`.
pub fn query_noise_scale(k: usize, eps0: f64) -> Result<LaplaceScale> {
    check_noise_args(k, eps0)?;
    LaplaceScale::new(4.0 / (k as f64 * eps0))
}

/// Inverse CDF of Laplace(0, b) evaluated at `u` in (0, 1).
pub fn laplace_inverse_cdf(scale: LaplaceScale, u: f64) -> f64 {
    let b = scale.value();
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else if u > 0.5 {
        -b * (2.0 * (1.0 - u)).ln()
    } else {
        0.0
    }
}

/// One Laplace(0, b) draw from `stream`.
pub fn laplace_sample(scale: LaplaceScale, stream: &mut RandomStream) -> f64 {
    laplace_inverse_cdf(scale, stream.uniform_open01())
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream under the same seed whose id is derived from this
    /// stream's id and `index`. Does not consume from `self`.
    pub fn substream(&self, index: u64) -> Self {
        Self::new(
            self.seed,
            mix64(self.stream_id.rotate_left(23) ^ mix64(index)),
        )
    }

    /// Uniform draw from the open interval (0, 1); never exactly 0 or 1.
    pub fn uniform_open01(&mut self) -> f64 {
        self.rng.sample(Open01)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Source of Laplace noise for the tuning loop.
pub trait NoiseSource {
    fn laplace(&mut self, scale: LaplaceScale) -> f64;
}

impl NoiseSource for RandomStream {
    fn laplace(&mut self, scale: LaplaceScale) -> f64 {
        laplace_sample(scale, self)
    }
}

/// Noise source that always returns 0. Turns the tuning loop into its
/// noise-free state machine; for tests and reference traces only.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn laplace(&mut self, _scale: LaplaceScale) -> f64 {
        0.0
    }
}
