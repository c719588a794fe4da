//! Deterministic random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named consumers of randomness. Each gets an independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    BackboneInit = 1,
    MvpHeadInit = 2,
    EmotionHeadInit = 3,
    FusionHeadInit = 4,
    Mask = 5,
    Dropout = 6,
    Shuffle = 7,
    Folds = 8,
    Synthetic = 9,
    LabelSubset = 10,
    Split = 11,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a stream tag and any number of indices.
pub fn derive_seed(root: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut s = splitmix(root ^ splitmix(stream as u64));
    for &p in path {
        s = splitmix(s ^ splitmix(p.wrapping_add(0x1234_5678)));
    }
    s
}

pub fn stream(root: u64, stream: Stream, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stream, path))
}
