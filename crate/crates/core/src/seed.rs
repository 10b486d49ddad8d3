//! Named sub-seeds derived from one master seed.

/// Derives an independent seed for the stream named `name`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer over the mix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

/// Sub-seed indexed by a counter, e.g. a fold or an epoch.
pub fn indexed_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(sub_seed(seed, name).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_indices_separate_streams() {
        assert_ne!(sub_seed(1, "init"), sub_seed(1, "sampling"));
        assert_ne!(sub_seed(1, "init"), sub_seed(2, "init"));
        assert_ne!(indexed_seed(1, "epoch", 0), indexed_seed(1, "epoch", 1));
        assert_eq!(sub_seed(7, "assembly"), sub_seed(7, "assembly"));
    }
}
