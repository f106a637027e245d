//! Counter-style random streams: every (seed, index) pair owns an independent
//! ChaCha8 stream, so draws never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const JUMP_DOMAIN: u64 = 0x6a09_e667_f3bc_c908;
const REPLICATE_DOMAIN: u64 = 0xbb67_ae85_84ca_a73b;

/// Stream `index` under master `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Diffusion and jump streams for one path. P and Q ensembles built from the
/// same seed consume identical diffusion shocks.
pub fn path_streams(seed: u64, path: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    (substream(seed, path), substream(seed ^ JUMP_DOMAIN, path))
}

/// Stream for bootstrap replicate `index`.
pub fn replicate_stream(seed: u64, index: u64) -> ChaCha8Rng {
    substream(seed ^ REPLICATE_DOMAIN, index)
}
