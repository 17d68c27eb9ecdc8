/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for a point in a grid: folds each coordinate into the base
/// seed. Independent of platform and thread scheduling.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(base), |acc, &c| {
        splitmix64(acc ^ splitmix64(c.wrapping_add(0x51_7cc1_b727_220a)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_order_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2, 3]), derive_seed(7, &[1, 2, 3]));
        assert_ne!(derive_seed(7, &[1, 2, 3]), derive_seed(7, &[3, 2, 1]));
        assert_ne!(derive_seed(7, &[0]), derive_seed(8, &[0]));
        // Reference value of the SplitMix64 finalizer.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
