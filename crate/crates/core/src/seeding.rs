//! Deterministic seed derivation: one global seed, split per pipeline stage.
//!
//! Every source of randomness in the crate takes a seed derived here, so a run
//! is reproducible from the single seed recorded in its provenance.

/// splitmix64 finalizer; good avalanche, stable across platforms.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive the seed for a named pipeline stage from the global seed.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    splitmix64(global ^ fnv1a64(stage.as_bytes()))
}

/// Derive a seed for the k-th replicate of a stage.
pub fn replicate_seed(stage: u64, index: u64) -> u64 {
    splitmix64(stage ^ splitmix64(index))
}
