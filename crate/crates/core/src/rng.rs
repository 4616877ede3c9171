//! Deterministic random substreams.
//!
//! Every random draw in a simulation comes from a stream addressed by a
//! path of labels below a master seed, e.g. `(cell, trial, user, role)`.
//! Streams are derived by hashing the path, so any task can rebuild its
//! generator without coordination and any interleaving of tasks yields the
//! same samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to every sampling routine.
pub type SimRng = ChaCha8Rng;

/// What a stream is used for inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Params = 1,
    Training = 2,
    Actual = 3,
    Permutation = 4,
    TimeIndex = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the stream tree. Cheap to copy; `child` descends one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(master_seed: u64) -> Self {
        StreamKey(splitmix64(master_seed))
    }

    pub fn child(self, label: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    pub fn role(self, role: Role) -> Self {
        self.child(role as u64)
    }

    pub fn rng(self) -> SimRng {
        let mut seed = [0u8; 32];
        let mut h = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
