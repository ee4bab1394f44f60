//! Counter-based random streams.
//!
//! Each stream is identified by (seed, stream_id); the i-th output is a
//! pure function of that pair plus the counter i, so replication r /
//! resample m can draw from stream_id = r * 2^20 + m in any execution
//! order and still reproduce byte-identical results.

use super::dist::normal_quantile_lower;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream of pseudo-random draws.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    base: u64,
    counter: u64,
}

impl RandomStream {
    /// Stream identified by a user seed and a substream index.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        // Decorrelate the (seed, stream_id) pair before counting.
        let base = mix64(seed ^ mix64(stream_id.wrapping_mul(GOLDEN_GAMMA) ^ 0x5851_F42D_4C95_7F2D));
        RandomStream {
            seed,
            stream_id,
            base,
            counter: 0,
        }
    }

    /// Convention for replication-level substreams: r * 2^20 + idx.
    /// Holds as long as idx < 2^20 (resample counts are far below that).
    pub fn substream(seed: u64, rep: u64, idx: u64) -> Self {
        debug_assert!(idx < 1 << 20);
        Self::new(seed, rep * (1 << 20) + idx)
    }

    /// Fresh stream at stream_id + offset, counter reset. Resample draw m
    /// derives from the replication stream with offset m.
    pub fn derive(&self, offset: u64) -> Self {
        Self::new(self.seed, self.stream_id.wrapping_add(offset))
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via the inverse CDF.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        // u is strictly inside (0,1) so the quantile cannot fail.
        normal_quantile_lower(u).expect("uniform draw in (0,1)")
    }

    /// Unbiased-enough index draw in [0, n) via widening multiply.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Bernoulli(p) draw.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
