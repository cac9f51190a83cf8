//! Reproducible Gaussian streams.
//!
//! Each stream is a ChaCha8 generator seeded from `seed` with its stream
//! word set to `stream_id`, so independent trajectories draw from disjoint
//! keystreams and can be simulated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn normals(&self) -> NormalSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        NormalSource { rng }
    }
}

/// Standard normal draws from one stream.
#[derive(Debug, Clone)]
pub struct NormalSource {
    rng: ChaCha8Rng,
}

impl NormalSource {
    #[inline]
    pub fn next(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Two independent draws, one per Brownian component.
    #[inline]
    pub fn pair(&mut self) -> (f64, f64) {
        let a = self.next();
        (a, self.next())
    }
}
