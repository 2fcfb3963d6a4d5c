//! Seeded pseudo-random number generation.
//!
//! Every source of randomness in the crate (weight init, shuffling, split
//! assignment, augmentation draws) flows from a single `u64` seed through
//! this splitmix64 generator, so runs are reproducible bit-for-bit.

/// splitmix64 finalizer. Good avalanche, trivially seedable.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Minimal splitmix64 stream generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derive an independent generator from `(seed, a, b)`.
    ///
    /// Used for per-sample augmentation streams: the stream for sample `i`
    /// of epoch `e` depends only on `(seed, e, i)`, never on evaluation
    /// order, so parallel data loading cannot change outcomes.
    pub fn derive(seed: u64, a: u64, b: u64) -> Self {
        let h = mix64(seed ^ mix64(a ^ mix64(b)));
        Self { state: h }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`. Returns exactly `lo` when `lo == hi`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Bernoulli draw. Always consumes one value, even for p = 0 or 1, so
    /// downstream draws stay aligned regardless of parameters.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
