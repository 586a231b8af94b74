//! Seed derivation. Every random stream in a run comes from a named seed,
//! and named seeds derive from a single base through [`mix_seed`].

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `h(base, index) = splitmix64(splitmix64(base) ^ index)`.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

/// The five run seeds derived from a base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunSeeds {
    pub model1: u64,
    pub model2: u64,
    pub shuffle1: u64,
    pub shuffle2: u64,
    pub eval: u64,
}

impl RunSeeds {
    /// `model1 = h(base, 1)`, `model2 = h(base, 2)`, `shuffle1 = h(base, 3)`,
    /// `shuffle2 = h(base, 4)`, `eval = h(base, 5)`.
    pub fn from_base(base: u64) -> Self {
        RunSeeds {
            model1: mix_seed(base, 1),
            model2: mix_seed(base, 2),
            shuffle1: mix_seed(base, 3),
            shuffle2: mix_seed(base, 4),
            eval: mix_seed(base, 5),
        }
    }

    /// Both models and both data streams identical: the twin control.
    pub fn twins(base: u64) -> Self {
        let s = Self::from_base(base);
        RunSeeds {
            model2: s.model1,
            shuffle2: s.shuffle1,
            ..s
        }
    }
}
