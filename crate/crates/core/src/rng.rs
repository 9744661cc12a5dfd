//! Counter-based normal streams keyed by `(seed, particle, mode)`.
//!
//! Each `(particle, mode)` pair owns an independent ChaCha stream, and the
//! step index is the position within that stream, so the draw for
//! `(seed, particle, mode, step)` never depends on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Bits reserved for the mode index inside the 64-bit stream id.
const MODE_BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub particle: u64,
    pub mode: u64,
}

impl StreamKey {
    pub fn new(seed: u64, particle: usize, mode: usize) -> Self {
        Self {
            seed,
            particle: particle as u64,
            mode: mode as u64,
        }
    }

    fn stream_id(&self) -> u64 {
        debug_assert!(self.mode < (1 << MODE_BITS));
        (self.particle << MODE_BITS) | self.mode
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng
    }

    /// Fills `out` with standard normals for steps `0..out.len()`.
    pub fn fill_normals(&self, out: &mut [f64]) {
        let mut rng = self.rng();
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }
}

/// Uniform stream for auxiliary sampling (subsampling, resampling).
pub fn aux_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(tag);
    rng
}
