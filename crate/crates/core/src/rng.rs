//! Seeded, portable pseudo-randomness.
//!
//! The generator is xoshiro256** seeded through SplitMix64, the reference
//! seeding procedure published with xoshiro. Every derived quantity uses a
//! fixed, integer-exact recipe so a seed reproduces the same stream in any
//! language:
//!
//! * `next_f64`: top 53 bits of `next_u64`, times 2⁻⁵³, giving `[0, 1)`.
//! * `normal`: Box–Muller cosine branch, `sqrt(-2 ln(1 - u1)) · cos(2π u2)`,
//!   consuming two uniforms per sample.
//! * `below(n)`: rejection sampling of `next_u64` against the largest multiple
//!   of `n`, then `x % n`.
//! * `shuffle`: Fisher–Yates from the last index down, swapping `i` with
//!   `below(i + 1)`.
//! * `split(k)`: a child seeded with `mix64(seed + (k + 1) · 0x9E3779B97F4A7C15)`
//!   (wrapping arithmetic, `mix64` the SplitMix64 finalizer). The child depends
//!   only on the parent seed and `k`, never on how far the parent has advanced.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `stream`; see module docs for the rule.
    pub fn split(&self, stream: u64) -> Rng {
        let child = mix64(
            self.seed
                .wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        );
        Rng::new(child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
