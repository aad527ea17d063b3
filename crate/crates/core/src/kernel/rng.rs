//! Per-entity random streams derived from the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EntityId;

/// Counter-based generator used for every random draw in a run.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for one entity. Depends only on `(seed, entity)`, so registering
/// further entities leaves existing streams untouched.
pub fn entity_stream(seed: u64, entity: EntityId) -> SimRng {
    let key = splitmix64(seed ^ splitmix64(u64::from(entity.0).wrapping_add(1)));
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
