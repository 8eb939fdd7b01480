use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ stream) ^ index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named seed streams so unrelated consumers of one master seed never collide.
pub mod stream {
    pub const TRAIN_EPISODE: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const EVALUATION: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SHUFFLE: u64 = 6;
}
