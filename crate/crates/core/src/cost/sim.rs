//! Deterministic cycle-counting pipeline simulator.
//!
//! A fragment is a sequence of buffer groups; each group is one or more steps
//! of `load → compute → store`. Three engines (load, compute, store) each run
//! their own events in order:
//!
//! - a group's loads wait for the group `buffers` positions earlier to finish,
//! - a compute waits for its load and for the previous compute,
//! - a store waits for its compute and the previous store,
//! - with store overlap off, a compute also waits for every earlier store and
//!   a group only finishes once its stores have drained.
//!
//! All updates are `max` and `+`, so the schedule is shift-equivariant: once a
//! run of identical groups advances every engine by the same amount, the rest
//! of the run is skipped in one step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Simulator switches recorded in every bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOptions {
    /// Split each level-0 chunk into instruction-sized slices along its first
    /// reduction axis, so loading later slices overlaps computing earlier ones.
    pub overlap: bool,
    /// Let stores drain while later groups compute.
    pub store_overlap: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            overlap: true,
            store_overlap: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Step {
    pub load: u64,
    pub compute: u64,
    pub store: u64,
}

/// `repeat` consecutive copies of one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub group: Vec<Step>,
    pub repeat: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub runs: Vec<Run>,
    /// Buffer slots: 2 for double buffering, 1 otherwise.
    pub buffers: usize,
    pub store_overlap: bool,
}

impl Fragment {
    /// `iterations` single-step groups of `(load, compute)` followed by one
    /// store of `store` cycles after the last compute.
    pub fn pipeline(iterations: u64, load: u64, compute: u64, store: u64, double_buffered: bool) -> Self {
        let step = Step {
            load,
            compute,
            store: 0,
        };
        let last = Step { store, ..step };
        let mut runs = Vec::new();
        if iterations > 1 {
            runs.push(Run {
                group: vec![step],
                repeat: iterations - 1,
            });
        }
        if iterations > 0 {
            runs.push(Run {
                group: vec![last],
                repeat: 1,
            });
        }
        Fragment {
            runs,
            buffers: if double_buffered { 2 } else { 1 },
            store_overlap: false,
        }
    }

    pub fn group_count(&self) -> u64 {
        self.runs.iter().map(|r| r.repeat).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Engines {
    load_free: u64,
    compute_free: u64,
    store_free: u64,
    /// Finish times of the last `buffers` groups, oldest first.
    done: VecDeque<u64>,
}

impl Engines {
    fn new(buffers: usize) -> Self {
        Self {
            load_free: 0,
            compute_free: 0,
            store_free: 0,
            done: std::iter::repeat(0).take(buffers.max(1)).collect(),
        }
    }

    fn group(&mut self, steps: &[Step], store_overlap: bool) {
        let slot = *self.done.front().expect("at least one buffer");
        for s in steps {
            let load_end = self.load_free.max(slot) + s.load;
            self.load_free = load_end;
            let mut start = load_end.max(self.compute_free);
            if !store_overlap {
                start = start.max(self.store_free);
            }
            self.compute_free = start + s.compute;
            if s.store > 0 {
                self.store_free = self.store_free.max(self.compute_free) + s.store;
            }
        }
        let finished = if store_overlap {
            self.compute_free
        } else {
            self.compute_free.max(self.store_free)
        };
        self.done.pop_front();
        self.done.push_back(finished);
    }

    /// Raises every component to at least `load_free`.
    ///
    /// Any later event reading a component also reads a value that is at
    /// least `load_free`, so the schedule is unchanged.
    fn normalize(&mut self) {
        let floor = self.load_free;
        self.compute_free = self.compute_free.max(floor);
        self.store_free = self.store_free.max(floor);
        for d in &mut self.done {
            *d = (*d).max(floor);
        }
    }

    fn relative(&self) -> Vec<u64> {
        let base = self.load_free;
        let mut v = vec![self.compute_free - base, self.store_free - base];
        v.extend(self.done.iter().map(|d| d - base));
        v
    }

    fn shift(&mut self, by: u64) {
        self.load_free += by;
        self.compute_free += by;
        self.store_free += by;
        for d in &mut self.done {
            *d += by;
        }
    }

    fn makespan(&self) -> u64 {
        self.load_free.max(self.compute_free).max(self.store_free)
    }
}

/// Makespan of `fragment` in cycles.
pub fn simulate(fragment: &Fragment) -> u64 {
    let mut e = Engines::new(fragment.buffers);
    for run in &fragment.runs {
        let mut remaining = run.repeat;
        let mut previous: Option<(u64, Vec<u64>)> = None;
        while remaining > 0 {
            e.group(&run.group, fragment.store_overlap);
            e.normalize();
            remaining -= 1;
            let rel = e.relative();
            if let Some((prev_base, prev_rel)) = &previous {
                if *prev_rel == rel {
                    e.shift((e.load_free - prev_base) * remaining);
                    break;
                }
            }
            previous = Some((e.load_free, rel));
        }
    }
    e.makespan()
}

/// Event-by-event reference without the periodic skip.
pub fn simulate_exhaustive(fragment: &Fragment) -> u64 {
    let mut e = Engines::new(fragment.buffers);
    for run in &fragment.runs {
        for _ in 0..run.repeat {
            e.group(&run.group, fragment.store_overlap);
        }
    }
    e.makespan()
}

/// Splits `total` into `parts` nonnegative shares of cumulative-ceiling
/// differences; the shares sum to `ceil(total / divisor)`.
pub fn ceil_shares(total: u64, divisor: u64, parts: u64) -> Vec<u64> {
    let denom = u128::from(divisor) * u128::from(parts);
    let cumulative = |j: u64| -> u64 { (u128::from(total) * u128::from(j)).div_ceil(denom) as u64 };
    (0..parts).map(|j| cumulative(j + 1) - cumulative(j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_iteration_is_a_sum() {
        assert_eq!(simulate(&Fragment::pipeline(1, 16, 20, 4, false)), 40);
    }

    #[test]
    fn load_bound_pipeline() {
        let store = 5;
        assert_eq!(
            simulate(&Fragment::pipeline(4, 10, 8, store, true)),
            10 + 3 * 10 + 8 + store
        );
    }

    #[test]
    fn single_buffer_serializes() {
        assert_eq!(simulate(&Fragment::pipeline(4, 10, 8, 5, false)), 4 * 18 + 5);
    }

    #[test]
    fn shares_sum_to_ceiling() {
        assert_eq!(ceil_shares(100, 64, 1), vec![2]);
        let s = ceil_shares(1000, 7, 9);
        assert_eq!(s.iter().sum::<u64>(), 1000u64.div_ceil(7));
        assert_eq!(ceil_shares(0, 3, 4), vec![0; 4]);
    }

    fn step() -> impl Strategy<Value = Step> {
        (0u64..40, 0u64..40, 0u64..10).prop_map(|(load, compute, store)| Step { load, compute, store })
    }

    fn fragment() -> impl Strategy<Value = Fragment> {
        (
            prop::collection::vec((prop::collection::vec(step(), 1..4), 1u64..60), 1..4),
            1usize..3,
            any::<bool>(),
        )
            .prop_map(|(runs, buffers, store_overlap)| Fragment {
                runs: runs.into_iter().map(|(group, repeat)| Run { group, repeat }).collect(),
                buffers,
                store_overlap,
            })
    }

    proptest! {
        #[test]
        fn skip_matches_exhaustive(f in fragment()) {
            prop_assert_eq!(simulate(&f), simulate_exhaustive(&f));
        }

        #[test]
        fn uniform_double_buffered_pipeline_is_eq2(n in 1u64..500, l in 0u64..50, c in 0u64..50, s in 0u64..50) {
            let expected = l + (n - 1) * l.max(c) + c + s;
            prop_assert_eq!(simulate(&Fragment::pipeline(n, l, c, s, true)), expected);
        }

        #[test]
        fn durations_are_monotone(f in fragment(), run in 0usize..4, idx in 0usize..4, which in 0usize..3, extra in 1u64..20) {
            let mut g = f.clone();
            let r = run % g.runs.len();
            let i = idx % g.runs[r].group.len();
            let s = &mut g.runs[r].group[i];
            match which { 0 => s.load += extra, 1 => s.compute += extra, _ => s.store += extra }
            prop_assert!(simulate(&g) >= simulate(&f));
        }
    }
}
