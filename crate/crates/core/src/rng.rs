//! Seeded random streams with a fully pinned algorithm.
//!
//! Every random draw in the crate goes through [`Stream`]:
//!
//! * Generator: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), seeded via
//!   `SeedableRng::seed_from_u64`, whose key expansion is PCG32 as documented by
//!   `rand_core`. ChaCha is counter based, so its output is identical on every
//!   platform and endianness.
//! * Stream derivation: a purpose key and a list of integers are folded into
//!   the 64-bit seed with the SplitMix64 finalizer (constants
//!   `0x9E3779B97F4A7C15`, `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`).
//! * Uniform `[0, 1)`: `(next_u64() >> 11) * 2^-53`.
//! * Gaussian: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; the sine branch
//!   is discarded so each normal consumes exactly two uniforms.
//! * Index in `[0, n)`: `(next_u64() as u128 * n) >> 64`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose keys keep independent consumers from sharing a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Transcript = 1,
    Template = 2,
    Noise = 3,
    Init = 4,
    Shuffle = 5,
    Dropout = 6,
}

pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, purpose: Purpose, path: &[u64]) -> Self {
        let mut s = splitmix(seed ^ splitmix(purpose as u64));
        for &p in path {
            s = splitmix(s ^ splitmix(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
        }
        Stream {
            inner: ChaCha8Rng::seed_from_u64(s),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
