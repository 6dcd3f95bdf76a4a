//! Closed-form cost model and pipeline simulator, cross-checked.

use proptest::prelude::*;
use tilewise_core::cost::sim::{simulate_exhaustive, Fragment, Run, Step};
use tilewise_core::cost::{analytical_loop, empirical_loop, parallel_factor, simulate, temporal_cost, LevelLoop};
use tilewise_core::{find_preset, HardwareDescriptor, SimOptions};

fn hw() -> HardwareDescriptor {
    find_preset("gpu-vector").unwrap().descriptor
}

fn level_loop() -> impl Strategy<Value = LevelLoop> {
    (0usize..3, 1u64..300, 1u64..6, 1u64..6, 0u64..5000, 0u64..3000).prop_map(
        |(level, parallel_extent, spatial_trips, reduction_trips, load_bytes, store_group_bytes)| LevelLoop {
            level,
            parallel_extent,
            spatial_trips,
            reduction_trips,
            load_bytes,
            store_group_bytes,
        },
    )
}

proptest! {
    #[test]
    fn temporal_cost_is_the_unrolled_pipeline(load in 0u64..500, trips in 1u64..200, inner in 0u64..500, store in 0u64..500) {
        let mut t = load;
        for _ in 1..trips {
            t += load.max(inner);
        }
        prop_assert_eq!(temporal_cost(load, trips, inner, store), t + inner + store);
    }

    #[test]
    fn waves_are_a_ceiling(extent in 1u64..10_000, units in 1u64..200) {
        let f = parallel_factor(extent, units);
        prop_assert!(f * units >= extent && (f - 1) * units < extent);
    }

    /// A double-buffered pipeline of whole chunks reproduces the closed form.
    #[test]
    fn double_buffered_pipeline_matches_closed_form(
        n in 1u64..400, load in 0u64..300, compute in 0u64..300, store in 0u64..300
    ) {
        let frag = Fragment::pipeline(n, load, compute, store, true);
        prop_assert_eq!(simulate(&frag), temporal_cost(load, n, compute, store));
    }

    #[test]
    fn periodic_skip_is_exact(
        groups in prop::collection::vec(
            (prop::collection::vec((0u64..40, 0u64..40, 0u64..40), 1..4), 1u64..60), 1..4),
        buffers in 1usize..3,
        store_overlap in any::<bool>(),
    ) {
        let frag = Fragment {
            runs: groups
                .into_iter()
                .map(|(steps, repeat)| Run {
                    group: steps.into_iter().map(|(load, compute, store)| Step { load, compute, store }).collect(),
                    repeat,
                })
                .collect(),
            buffers,
            store_overlap,
        };
        prop_assert_eq!(simulate(&frag), simulate_exhaustive(&frag));
    }

    #[test]
    fn whole_chunk_simulation_equals_closed_form(lp in level_loop(), inner in 0u64..5000) {
        let hw = hw();
        let sim = SimOptions { overlap: false, store_overlap: false };
        prop_assert_eq!(empirical_loop(&hw, &lp, inner, 1, &sim).total_cycles, analytical_loop(&hw, &lp, inner).total_cycles);
    }

    #[test]
    fn overlap_never_costs_more(lp in level_loop(), inner in 0u64..5000, slices in 1u64..16, store_overlap in any::<bool>()) {
        let hw = hw();
        let sim = SimOptions { overlap: true, store_overlap };
        let emp = empirical_loop(&hw, &lp, inner, slices, &sim);
        let ana = analytical_loop(&hw, &lp, inner);
        prop_assert!(emp.total_cycles <= ana.total_cycles);
        prop_assert_eq!(emp.total_cycles, emp.f_parallel * emp.temporal_cycles);
        prop_assert_eq!(ana.total_cycles, ana.f_parallel * ana.temporal_cycles);
    }
}
