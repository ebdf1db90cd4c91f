//! Counter-based normal variates.
//!
//! Each path owns a ChaCha8 keystream keyed by `(seed, path_id)`. Every step
//! consumes a fixed number of 32-bit words, so the draws for step `k` sit at
//! a known word position and can be regenerated in isolation with
//! [`NormalStream::seek`]. Results never depend on scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_PI: f64 = std::f64::consts::TAU;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    dim: usize,
    words_per_step: u128,
}

impl NormalStream {
    pub fn new(seed: u64, path_id: u64, dim: usize) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&path_id.to_le_bytes());
        key[16..].copy_from_slice(b"stokolmo-normals");
        // Box–Muller pairs, two u64 (four words) per pair.
        let pairs = dim.div_ceil(2) as u128;
        NormalStream {
            rng: ChaCha8Rng::from_seed(key),
            dim,
            words_per_step: 4 * pairs,
        }
    }

    /// Positions the stream at the start of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * self.words_per_step);
    }

    /// Fills `out` (length `dim`) with independent standard normals and
    /// advances exactly one step.
    pub fn next_step(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut i = 0;
        while i < self.dim {
            // u1 in (0, 1], u2 in [0, 1).
            let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
            let u2 = (self.rng.next_u64() >> 11) as f64 * INV_2_53;
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (TWO_PI * u2).sin_cos();
            out[i] = r * c;
            if i + 1 < self.dim {
                out[i + 1] = r * s;
            }
            i += 2;
        }
    }
}
