//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`RandomStream`] keyed by a
//! 64-bit run seed, a purpose label and an index (trajectory or run number).
//! The key material is expanded with SplitMix64 into a ChaCha8 key and the
//! index selects the ChaCha stream, so streams are independent of execution
//! order and can be created in any thread.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share random numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Trajectory,
    Detection,
    Readout,
    FastRun,
    Scan,
    Shuffle,
    Test,
}

impl Purpose {
    fn label(self) -> u64 {
        match self {
            Purpose::Trajectory => 0x7472_616a,
            Purpose::Detection => 0x6465_7465,
            Purpose::Readout => 0x7265_6164,
            Purpose::FastRun => 0x6661_7374,
            Purpose::Scan => 0x7363_616e,
            Purpose::Shuffle => 0x7368_7566,
            Purpose::Test => 0x7465_7374,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifier of a random stream: `(seed, purpose, index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        let mut state = seed ^ purpose.label().rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Self {
            id: StreamId {
                seed,
                purpose,
                index,
            },
            rng,
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform sample in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform sample in `(0, 1]`, safe to pass to `ln`.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std_dev * z
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform_open().ln() / rate
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        use rand_distr::{Distribution, Poisson};
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).map(|d| d.sample(&mut self.rng) as u64).unwrap_or(0)
    }

    /// Index drawn from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return i;
            }
            target -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
