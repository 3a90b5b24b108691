//! Counter-based seed derivation.
//!
//! Every random stream in a run is addressed by a path of labels hanging off
//! the master seed, e.g. `(master, replicate, EDGE, edge id)`. A stream never
//! depends on how many numbers another stream consumed, so lazily created
//! edges and replicates scheduled on different workers reproduce exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags. Distinct tags keep e.g. the walker's jump draws separate
/// from the thinning uniforms of the coupled walk.
pub mod purpose {
    pub const REPLICATE: u64 = 0x7265_706c;
    pub const LADDER: u64 = 0x6c61_6464;
    pub const EDGE: u64 = 0x6564_6765;
    pub const WALKER: u64 = 0x7761_6c6b;
    pub const THINNING: u64 = 0x7468_696e;
    pub const REFERENCE: u64 = 0x7372_7721;
    pub const DIFF_TAIL: u64 = 0x6469_6666;
    pub const ANCHOR: u64 = 0x616e_6368;
}

/// A node in the seed tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey(pub u64);

impl SeedKey {
    pub fn new(master: u64) -> Self {
        SeedKey(mix64(master ^ 0x243F_6A88_85A3_08D3))
    }

    /// Child key for `label`. Pure function of `(self, label)`.
    pub fn child(self, label: u64) -> Self {
        SeedKey(mix64(self.0 ^ mix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    /// Child key addressed by a purpose tag and an index.
    pub fn stream(self, purpose: u64, index: u64) -> Self {
        self.child(purpose).child(index)
    }

    pub fn rng(self) -> StreamRng {
        StreamRng::seed_from_u64(self.0)
    }
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
