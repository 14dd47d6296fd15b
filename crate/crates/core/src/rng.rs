//! Counter-based random streams.
//!
//! Every random draw in a run is addressed by `(seed, domain, a, b)` rather than
//! by position in one shared generator. The four words are whitened and used as
//! a ChaCha12 key, so the same address always yields the same numbers no matter
//! which thread asks or in what order, and a resumed run sees exactly the noise
//! it would have seen had it never stopped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Separates the streams used by different parts of the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseDomain {
    ModelWeights,
    LangevinInit,
    LangevinNoise,
    VariationInit,
    DispersionNoise,
    MixingWeights,
    Reject,
    /// Synthetic stand-in for a generator's training set.
    TrainingSet,
    /// Free for callers (tests, synthetic data generators).
    Custom(u32),
}

impl NoiseDomain {
    fn code(self) -> u64 {
        match self {
            NoiseDomain::ModelWeights => 1,
            NoiseDomain::LangevinInit => 2,
            NoiseDomain::LangevinNoise => 3,
            NoiseDomain::VariationInit => 4,
            NoiseDomain::DispersionNoise => 5,
            NoiseDomain::MixingWeights => 6,
            NoiseDomain::Reject => 7,
            NoiseDomain::TrainingSet => 8,
            NoiseDomain::Custom(n) => (1 << 32) | u64::from(n),
        }
    }
}

/// splitmix64 output function; a bijection on `u64`.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    domain: NoiseDomain,
}

impl NoiseStream {
    pub fn new(seed: u64, domain: NoiseDomain) -> Self {
        Self { seed, domain }
    }

    /// Generator for one address. Distinct addresses give distinct keys.
    pub fn rng(&self, a: u64, b: u64) -> ChaCha12Rng {
        let words = [self.seed, self.domain.code(), a, b];
        let mut key = [0u8; 32];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&splitmix64(w).to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }

    pub fn normal_vector(&self, a: u64, b: u64, dim: usize) -> Vec<f64> {
        let mut rng = self.rng(a, b);
        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Uniform draws on `[-half_width, half_width]`.
    pub fn symmetric_uniform_vector(&self, a: u64, b: u64, dim: usize, half_width: f64) -> Vec<f64> {
        let mut rng = self.rng(a, b);
        (0..dim)
            .map(|_| {
                let u: f64 = rng.random();
                half_width * (2.0 * u - 1.0)
            })
            .collect()
    }
}
