//! Reproducible random streams.
//!
//! A [`SeedSpec`] names one replica. Each replica owns several independent
//! ChaCha8 streams, one per [`Purpose`]: the key is derived from the master
//! seed and the purpose, and the replica index selects the ChaCha stream, so
//! replicas can be generated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Diagonal,
    OffDiagonal,
    Resample,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Diagonal => 0x6469_6167,
            Purpose::OffDiagonal => 0x6f66_6664,
            Purpose::Resample => 0x7265_7361,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix two words into one.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(29))
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream for a replica of an experiment at size `n`; distinct `n` get unrelated keys.
    pub fn for_replica(master_seed: u64, n: usize, replica: u64) -> Self {
        Self { master_seed: mix(master_seed, n as u64), stream_id: replica }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = mix(self.master_seed, purpose.tag());
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}
