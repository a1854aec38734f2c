//! Deterministic seeding and shuffling.
//!
//! Every random decision in the crate flows through [`SplitMix64`] so results
//! are reproducible bit-for-bit across platforms, runs, and worker counts.
//! The generator is the reference SplitMix64 (Steele, Lea & Flood): a 64-bit
//! counter advanced by the golden-ratio increment and passed through a
//! two-round multiply-xorshift finaliser.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        finalize(self.state)
    }

    /// Uniform draw in `[0, bound)` by modulo reduction.
    ///
    /// The modulo bias is below 2^-40 for any `bound` under 2^24, which is
    /// orders of magnitude beyond the line counts shuffled here; accepting it
    /// keeps the draw a single deterministic step.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below requires a positive bound");
        self.next_u64() % bound
    }
}

fn finalize(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// Seed for work unit `index` under `master`: the `index`-th output of the
/// SplitMix64 stream seeded with `master`, computed in O(1).
///
/// Work units (attack runs, shuffle repeats) draw their seeds through this so
/// unit `i` sees the same stream no matter which worker executes it or in
/// what order units complete.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    finalize(master.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Fisher–Yates permutation of `0..n`, driven by a fresh SplitMix64 stream.
///
/// The classic backward walk: position `i` swaps with a draw from `[0, i]`.
/// Output is a bijection on `0..n` and depends only on `(n, seed)`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut items: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn test_stream_is_deterministic() {
        let a: Vec<u64> = {
            let mut r = SplitMix64::new(12345);
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SplitMix64::new(12345);
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let c = SplitMix64::new(12346).next_u64();
        assert_ne!(a[0], c);
    }

    #[test]
    fn test_reference_first_outputs_for_seed_zero() {
        // First outputs of SplitMix64 seeded with 0, from the reference
        // implementation; pins the exact constants and finaliser wiring.
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn test_derive_seed_matches_stream_position() {
        let master = 0xDEAD_BEEF_u64;
        let mut r = SplitMix64::new(master);
        for i in 0..20 {
            assert_eq!(derive_seed(master, i), r.next_u64(), "index {i}");
        }
    }

    #[test]
    fn test_derive_seed_distinct_across_indices() {
        let seeds: Vec<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
    }

    #[test]
    fn test_permutation_small_cases() {
        assert_eq!(permutation(0, 7), Vec::<usize>::new());
        assert_eq!(permutation(1, 7), vec![0]);
        // Same (n, seed) twice -> same order; different seed -> usually not.
        assert_eq!(permutation(10, 3), permutation(10, 3));
        assert_ne!(permutation(10, 3), permutation(10, 4));
    }

    proptest! {
        #[test]
        fn prop_permutation_is_bijection(n in 0usize..200, seed in any::<u64>()) {
            let p = permutation(n, seed);
            let mut seen = vec![false; n];
            for &v in &p {
                prop_assert!(v < n);
                prop_assert!(!seen[v], "duplicate {v}");
                seen[v] = true;
            }
            prop_assert_eq!(p.len(), n);
        }
    }
}
