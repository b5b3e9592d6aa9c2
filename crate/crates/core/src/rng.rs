//! Deterministic random streams.
//!
//! Every draw in the crate comes from a ChaCha8 stream whose key is derived
//! from a master seed and a path of labels (purpose, system size, disorder
//! index, chain index, ...). Two computations that share a path see the same
//! numbers no matter which thread runs them or in which order, which is what
//! makes sweeps reproducible across worker counts and lets the `t = 0` and
//! `t = 1` runs share common random numbers.
//!
//! Inside a chain the generator is addressed by `(lane, tick)`: lane is the
//! ChaCha stream id (a site index for coordinate updates) and tick selects a
//! disjoint window of the keystream (one per sweep).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Labels used as the first element of a lineage path.
pub mod purpose {
    pub const DISORDER: u64 = 0x01;
    pub const PERTURBATION: u64 = 0x02;
    pub const CHAIN: u64 = 0x03;
    pub const BOOTSTRAP: u64 = 0x04;
    pub const GATE: u64 = 0x05;
    pub const LAMBDA_GRID: u64 = 0x06;
    pub const SITE_DRAW: u64 = 0x07;
}

/// Words of keystream reserved for one `(lane, tick)` window.
const WINDOW_WORDS_LOG2: u32 = 24;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed plus the labels that lead to one stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master: u64,
    pub path: Vec<u64>,
}

impl SeedLineage {
    pub fn new(master: u64) -> Self {
        SeedLineage {
            master,
            path: Vec::new(),
        }
    }

    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        SeedLineage {
            master: self.master,
            path,
        }
    }

    pub fn descend(&self, labels: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(labels);
        SeedLineage {
            master: self.master,
            path,
        }
    }

    /// 64-bit key of this lineage.
    pub fn key(&self) -> u64 {
        self.path
            .iter()
            .fold(splitmix64(self.master), |h, &label| {
                splitmix64(h ^ splitmix64(label.wrapping_add(GOLDEN)))
            })
    }

    /// A fresh sequential generator for this lineage.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key())
    }

    pub fn addressed(&self) -> AddressedRng {
        AddressedRng::new(self.key())
    }
}

/// Generator that can jump to a `(lane, tick)` window in O(1).
#[derive(Clone, Debug)]
pub struct AddressedRng {
    inner: ChaCha8Rng,
}

impl AddressedRng {
    pub fn new(key: u64) -> Self {
        AddressedRng {
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn at(&mut self, lane: u64, tick: u64) -> &mut ChaCha8Rng {
        self.inner.set_stream(lane);
        self.inner
            .set_word_pos(u128::from(tick) << WINDOW_WORDS_LOG2);
        &mut self.inner
    }
}
