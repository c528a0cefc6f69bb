//! Seed derivation.
//!
//! Child seeds are derived with SplitMix64 over an FNV-1a hash of each label,
//! so adding a new cell or stream never shifts the seeds of existing ones.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// One SplitMix64 finalization round.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Mix a labelled component into a parent seed.
pub fn derive(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label)))
}

/// Mix an integer component into a parent seed.
pub fn derive_index(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(FNV_OFFSET)))
}
