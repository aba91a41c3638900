//! Deterministic random number generation.
//!
//! Every stochastic feature of this crate draws from [`Rng`], which pins its
//! algorithms in this file rather than delegating to an external crate, so
//! that a seed identifies one exact stream forever:
//!
//! * state initialisation: splitmix64 (Steele, Lea & Flood's mixer),
//! * generator: xoshiro256++ (Blackman & Vigna's public-domain design),
//! * uniform doubles: top 53 bits scaled by 2⁻⁵³, giving values in [0, 1),
//! * Gaussians: the Box–Muller transform, pairs cached.
//!
//! Independent streams for different components of a pipeline are derived
//! from one root seed with [`Rng::split`]: the child seed is
//! `root XOR fnv1a64(label)`, then mixed through splitmix64 by the
//! constructor. Distinct labels give uncorrelated streams under the same
//! root seed.

use std::f64::consts::TAU;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seedable xoshiro256++ generator with Box–Muller Gaussian sampling.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    spare_gaussian: Option<f64>,
}

impl Rng {
    /// Expand `seed` into the 256-bit state through splitmix64.
    pub fn new(seed: u64) -> Rng {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s, spare_gaussian: None }
    }

    /// Derive the child stream for one named component of a pipeline.
    pub fn split(root_seed: u64, label: &str) -> Rng {
        Rng::new(root_seed ^ fnv1a64(label.as_bytes()))
    }

    /// The seed a [`Rng::split`] call would construct its stream from.
    pub fn split_seed(root_seed: u64, label: &str) -> u64 {
        root_seed ^ fnv1a64(label.as_bytes())
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n), rejection-sampled so every value is
    /// equally likely.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal deviate. Box–Muller produces pairs; the second value
    /// is cached and returned by the following call.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        // 1 - u keeps the logarithm's argument in (0, 1].
        let r = (-2.0 * (1.0 - self.next_f64()).ln()).sqrt();
        let theta = TAU * self.next_f64();
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `n` independent draws from N(0, sigma²).
    pub fn gaussian_vec(&mut self, n: usize, sigma: f64) -> Vec<f64> {
        (0..n).map(|_| sigma * self.next_gaussian()).collect()
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}
