//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere randomness is needed.
pub type SeededRng = ChaCha8Rng;

/// Builds a generator from a 64-bit seed.
pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of
/// coordinates (epoch, example index, ...). Each coordinate is folded in
/// through a splitmix round, so `(1, 0)` and `(0, 1)` do not collide.
pub fn stream_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for one coordinate tuple, see [`stream_seed`].
pub fn stream(base: u64, coords: &[u64]) -> SeededRng {
    seeded(stream_seed(base, coords))
}
