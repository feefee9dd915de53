//! Seeded random streams.
//!
//! Every random quantity comes from a ChaCha8 stream keyed by a 64-bit seed.
//! The 64-bit stream id is split into a [`Phase`] tag (high 32 bits) and an
//! index (low 32 bits), so quantization, sampling, initialization and
//! splitting never share randomness even when they share a seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Phase {
    Target = 1,
    Quantize = 2,
    Sample = 3,
    SolverInit = 4,
    WarmStart = 5,
    Split = 6,
    Trial = 7,
}

/// Independent generator for `(seed, phase, index)`.
pub fn substream(seed: u64, phase: Phase, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((phase as u64) << 32) | index as u64);
    rng
}

/// Derives a child seed, e.g. the seed of trial `index` under a master seed.
pub fn derive_seed(seed: u64, phase: Phase, index: u32) -> u64 {
    substream(seed, phase, index).next_u64()
}

/// Uniform `[0, 1)` value from the top 53 bits of one 64-bit word.
#[inline]
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_independent_streams() {
        let a = substream(7, Phase::Quantize, 0).next_u64();
        let b = substream(7, Phase::Sample, 0).next_u64();
        let c = substream(7, Phase::Quantize, 1).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, substream(7, Phase::Quantize, 0).next_u64());
    }

    #[test]
    fn unit_range() {
        let mut rng = substream(1, Phase::Target, 0);
        for _ in 0..1000 {
            let u = unit_f64(&mut rng);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
