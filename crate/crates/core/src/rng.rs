//! Labeled, counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream addressed by
//! `(master seed, label, stream index)`. ChaCha is a counter-mode cipher, so a
//! substream is fully determined by its address and never depends on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A 64-bit seed with deterministic derivation of child seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    /// Child seed for a named stage or purpose.
    pub fn derive(self, label: &str) -> Seed {
        let mut h = splitmix(self.0);
        for chunk in label.as_bytes().chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            h = splitmix(h ^ u64::from_le_bytes(buf));
        }
        Seed(splitmix(h ^ label.len() as u64))
    }

    /// Child seed for an integer index (replication, iteration, ...).
    pub fn derive_index(self, index: u64) -> Seed {
        Seed(splitmix(splitmix(self.0) ^ splitmix(index.wrapping_mul(GOLDEN))))
    }

    /// Generator for substream `stream` of this seed.
    pub fn stream(self, stream: u64) -> NormalStream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.0.to_le_bytes());
        key[8..16].copy_from_slice(&splitmix(self.0).to_le_bytes());
        key[16..24].copy_from_slice(&splitmix(self.0 ^ GOLDEN).to_le_bytes());
        key[24..].copy_from_slice(&0x5241_4e4b_4d46_4721u64.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        NormalStream { rng }
    }
}

/// Sequential standard normal draws from one substream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn index_below(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.rng.random_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = Seed(7);
        let a: Vec<f64> = {
            let mut g = s.stream(3);
            (0..5).map(|_| g.normal()).collect()
        };
        let b: Vec<f64> = {
            let mut g = s.stream(3);
            (0..5).map(|_| g.normal()).collect()
        };
        let c: Vec<f64> = {
            let mut g = s.stream(4);
            (0..5).map(|_| g.normal()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        let s = Seed(1);
        assert_ne!(s.derive("solve"), s.derive("nash"));
        assert_eq!(s.derive("solve"), s.derive("solve"));
        assert_ne!(s.derive_index(0), s.derive_index(1));
        assert_ne!(s.derive("ab"), s.derive("ab\0"));
    }
}
