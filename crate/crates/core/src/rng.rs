//! Deterministic, splittable random streams.
//!
//! Every consumer (environment noise, bootstrap resampling, CEM sampling, ...)
//! owns its own [`SeededRng`] derived from the experiment seed and a stream
//! label. Streams are ChaCha8 keystreams: the experiment seed selects the key
//! and the stream label selects the ChaCha stream, so two labels never share
//! output and a consumer that changes its draw count does not perturb others.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Named stream labels handed to each consumer.
pub mod streams {
    pub const ENV_NOISE: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const CEM: u64 = 3;
    pub const ENSEMBLE_INIT: u64 = 4;
    pub const TRAJECTORY: u64 = 5;
    pub const NEGATIVES: u64 = 6;
    pub const EVAL: u64 = 7;
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Independent deterministic stream for `(seed, stream_id)`.
pub fn derive_rng(seed: u64, stream_id: u64) -> SeededRng {
    let mut inner = ChaCha8Rng::seed_from_u64(seed);
    inner.set_stream(stream_id);
    SeededRng {
        seed,
        stream_id,
        inner,
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream keyed by `key`. Depends only on this stream's identity
    /// (seed, stream id) and the key, never on how many draws were taken, so
    /// children can be created in any order or in parallel.
    pub fn substream(&self, key: &[u64]) -> SeededRng {
        let mut h = splitmix64(self.seed ^ 0xA076_1D64_78BD_642F);
        h = splitmix64(h ^ self.stream_id);
        for &k in key {
            h = splitmix64(h ^ k);
        }
        derive_rng(h, splitmix64(h ^ self.stream_id))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        if n == 1 {
            0
        } else {
            self.inner.random_range(0..n)
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
