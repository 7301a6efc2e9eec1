//! Counter-based random streams.
//!
//! A stream is keyed by `(seed, purpose, index)`. Data generation, truth
//! integration and bootstrap resampling draw from disjoint streams, so adding
//! an estimator or a bootstrap to a run never perturbs the simulated data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Calibration = 1,
    Data = 2,
    Truth = 3,
    Bootstrap = 4,
    Quadrature = 5,
}

const INDEX_BITS: u32 = 56;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Returns the generator for stream `index` of `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    assert!(index < (1 << INDEX_BITS), "stream index out of range");
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | index);
    rng
}

/// Derives an independent child seed, e.g. for the bootstrap inside replicate `index`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut state)
}
