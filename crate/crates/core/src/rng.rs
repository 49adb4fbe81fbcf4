//! Deterministic stream derivation for parallel Monte Carlo.
//!
//! Every Gaussian draw in a run is addressed by `(master seed, path, channel,
//! step)`. The address is stretched into a 256-bit ChaCha8 key with a
//! SplitMix64 chain, so a stream depends only on its address: paths can run
//! on any worker in any order, a truncation extension appends draws without
//! disturbing existing ones, and splitting a run into several calls yields
//! the same increments as one call. Within a stream, draws are consumed in a
//! fixed documented order (see `noise`).
//!
//! Bit-exact reproducibility is promised within this implementation only;
//! ports can match statistics by reproducing the derivation below.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Channel identifiers, part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Scalar point-force Brownian motion and its time-weighted companion.
    PointDriver = 1,
    /// Per-mode conditional remainders of the point-channel convolution.
    PointRemainder = 2,
    /// Distributed-channel coefficient Brownian motions (and companions).
    Distributed = 3,
    /// Monte-Carlo batches outside the integrator (gamma norms etc).
    MonteCarlo = 4,
    /// Per-mode conditional remainders of the distributed convolution.
    DistributedRemainder = 5,
}

/// SplitMix64 finalizer: a bijective 64-bit mix.
#[inline]
fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// ChaCha8 generator for the stream `(seed, path, channel, step)`.
///
/// Address words are absorbed sequentially, each through the bijective mix,
/// so no two field changes can cancel; the key is then squeezed with a
/// counter.
pub fn stream(seed: u64, path: u64, channel: Channel, step: u64) -> ChaCha8Rng {
    let mut acc = 0xa0761d6478bd642fu64;
    for word in [seed, path, channel as u64, step] {
        acc = mix(acc ^ word);
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(acc.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
