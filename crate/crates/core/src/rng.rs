use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible stream for `(seed, a, b)`; used to give every
/// frame (and every series within a run) its own generator so results do not
/// depend on evaluation order.
pub(crate) fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&a.to_le_bytes());
    key[16..24].copy_from_slice(&b.to_le_bytes());
    key[24..].copy_from_slice(b"pgrappa\0");
    ChaCha8Rng::from_seed(key)
}
