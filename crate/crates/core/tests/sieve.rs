//! Divisor sieve and tile lattice against brute force.

use proptest::prelude::*;
use tilewise_core::candgen::{filter_by_multiples, lattice};
use tilewise_core::TileShape;

fn tiles(dims: usize, max: usize) -> impl Strategy<Value = Vec<TileShape>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec![1u64, 2, 3, 4, 6, 8, 12, 16]), dims).prop_map(TileShape),
        0..max,
    )
}

proptest! {
    #[test]
    fn sieve_matches_brute_force(
        (cands, prev) in (1usize..5).prop_flat_map(|d| (tiles(d, 120), tiles(d, 12)))
    ) {
        let (kept, map) = filter_by_multiples(&cands, &prev);
        let mut want_kept = Vec::new();
        let mut want_map = Vec::new();
        for c in &cands {
            let entries: Vec<usize> = (0..prev.len())
                .filter(|&p| c.0.iter().zip(&prev[p].0).all(|(a, b)| a % b == 0))
                .collect();
            if !entries.is_empty() {
                want_kept.push(c.clone());
                want_map.push(entries);
            }
        }
        prop_assert_eq!(kept, want_kept);
        prop_assert_eq!(map.0, want_map);
    }

    #[test]
    fn lattice_is_the_sorted_two_three_ladder(multiple in 1u64..64, max in 0u64..100_000) {
        let values = lattice(multiple, max);
        let mut want = Vec::new();
        for v in 1..=max / multiple {
            let mut r = v;
            while r % 2 == 0 {
                r /= 2;
            }
            if r == 1 || r == 3 {
                want.push(v * multiple);
            }
        }
        prop_assert_eq!(values, want);
    }
}
