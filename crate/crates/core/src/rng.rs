//! Deterministic, platform-independent random streams.
//!
//! Every stochastic operation takes a [`Seed`]. A seed is a base value plus a
//! derivation path; the 64-bit state of a seed is computed as
//!
//! ```text
//! state(base, [])        = mix64(base)
//! state(base, path ++ i) = mix64(state(base, path) + GOLDEN * (i + 1))   (mod 2^64)
//! ```
//!
//! where `mix64` is the SplitMix64 finalizer and `GOLDEN = 0x9E3779B97F4A7C15`.
//! Multiplication by an odd constant and `mix64` are both bijections on
//! 64-bit integers, so children of the same parent never collide.
//!
//! The stream itself is SplitMix64: a counter advanced by `GOLDEN` and passed
//! through `mix64`. Uniform doubles take the top 53 bits. Gaussian samples use
//! the Marsaglia polar method; the second value of each accepted pair is
//! cached and returned by the next call.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Seed {
    base: u64,
    path: Vec<u64>,
    state: u64,
}

impl Seed {
    pub fn new(base: u64) -> Self {
        Self {
            base,
            path: Vec::new(),
            state: mix64(base),
        }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// The 64-bit state this seed starts its stream from.
    pub fn state(&self) -> u64 {
        self.state
    }

    /// Child seed for `index`.
    pub fn derive(&self, index: u64) -> Seed {
        let mut path = self.path.clone();
        path.push(index);
        Seed {
            base: self.base,
            path,
            state: mix64(
                self.state
                    .wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))),
            ),
        }
    }

    pub fn rng(&self) -> SplitMix64 {
        SplitMix64::new(self.state)
    }
}

/// Derives the child of `seed` at `index`.
pub fn derive_seed(seed: &Seed, index: u64) -> Seed {
    seed.derive(index)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    counter: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self {
            counter: state,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN);
        mix64(self.counter)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Rejection keeps the result unbiased.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * m);
                return u * m;
            }
        }
    }

    pub fn gaussian(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
