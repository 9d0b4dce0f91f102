//! Reproducible random streams.
//!
//! Every draw in the crate comes from a ChaCha8 generator keyed by
//! `(seed, stream)`. ChaCha is counter based, so a stream can be opened
//! independently on any worker and always yields the same sequence, which
//! keeps parallel runs bit-identical to serial ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StandardUniform};

pub type StreamRng = ChaCha8Rng;

/// Stream namespaces. The high 16 bits of a stream id carry the purpose so
/// that, e.g., trajectory 3 and sample block 3 never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sample = 1,
    Trajectory = 2,
    TrajectoryIndependent = 3,
    Init = 4,
    MonteCarlo = 5,
    Replicate = 6,
}

pub fn stream_id(purpose: Purpose, index: u64) -> u64 {
    ((purpose as u64) << 48) | (index & ((1 << 48) - 1))
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, index));
    rng
}

/// Derive a child seed, e.g. for replicate batches.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fill_normal(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// Uniform draw in the open interval (0, 1).
pub fn open_uniform(rng: &mut StreamRng) -> f64 {
    loop {
        let u: f64 = StandardUniform.sample(rng);
        if u > 0.0 {
            return u;
        }
    }
}
