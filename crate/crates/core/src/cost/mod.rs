//! Hybrid analytical–empirical cost model.
//!
//! A level-L loop walks a region in chunks of the level's tile: PL trips are
//! spread over the level's units, TSL and TRL trips run serially and overlap
//! each chunk's load with the previous chunk's lower-level work:
//!
//! ```text
//! temporal = load + (trips − 1) · max(load, inner) + inner + store
//! waves    = ⌈parallel extent / units⌉
//! cost     = waves · temporal
//! ```
//!
//! `inner` is the level L−1 loop over one chunk; at level 0 it is the base
//! instruction time `⌈ops / throughput⌉`. Empirical levels replace the closed
//! form with the pipeline simulator in [`sim`].

pub mod sim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sim::{simulate, Fragment, Run, SimOptions, Step};

use crate::candgen::{axis_multiple, CompatibilityMap, MicroKernelCandidate, TileShape};
use crate::error::{Error, Result};
use crate::hwmodel::{HardwareDescriptor, LevelSpec};
use crate::program::{AnalyzerKind, LoopClass, TensorProgramSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSource {
    Analytical,
    Empirical,
}

/// Cycle breakdown of one level loop.
///
/// Analytical estimates satisfy `total = f_parallel · temporal` and
/// `temporal ≥ t_load + inner + t_store`. Empirical estimates keep the first
/// identity; overlap may take them below the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEstimate {
    /// Load of one chunk.
    pub t_load_cycles: u64,
    /// Stores of one parallel entity, charged once.
    pub t_store_cycles: u64,
    /// Cost of the level below on one chunk.
    pub inner_cost_cycles: u64,
    pub temporal_cycles: u64,
    pub f_parallel: u64,
    pub total_cycles: u64,
    pub source: CostSource,
}

/// `⌈bytes / load bandwidth⌉`.
pub fn t_load(level: &LevelSpec, bytes_moved: u64) -> u64 {
    bytes_moved.div_ceil(level.load_bandwidth_bytes_per_cycle)
}

/// `⌈bytes / store bandwidth⌉`.
pub fn t_store(level: &LevelSpec, bytes_moved: u64) -> u64 {
    bytes_moved.div_ceil(level.store_bandwidth_bytes_per_cycle)
}

/// Serial pipeline time of `trip ≥ 1` chunks.
pub fn temporal_cost(t_load: u64, trip: u64, inner: u64, t_store: u64) -> u64 {
    assert!(trip >= 1, "temporal loop needs at least one trip");
    t_load + (trip - 1) * t_load.max(inner) + inner + t_store
}

/// Waves needed to run `parallel_extent` parallel chunks on `unit_count` units.
pub fn parallel_factor(parallel_extent: u64, unit_count: u64) -> u64 {
    assert!(
        parallel_extent >= 1 && unit_count >= 1,
        "parallel extent and unit count are >= 1"
    );
    parallel_extent.div_ceil(unit_count)
}

/// Trip structure and traffic of one level loop over one region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelLoop {
    pub level: usize,
    /// Product of PL trips.
    pub parallel_extent: u64,
    /// Product of TSL trips; one output store group each.
    pub spatial_trips: u64,
    /// Product of TRL trips.
    pub reduction_trips: u64,
    /// Bytes loaded per chunk.
    pub load_bytes: u64,
    /// Bytes stored per spatial group.
    pub store_group_bytes: u64,
}

impl LevelLoop {
    /// Trip count of the temporal pipeline (TSL × TRL).
    pub fn serial_trips(&self) -> u64 {
        self.spatial_trips * self.reduction_trips
    }

    /// Bytes stored by one parallel entity.
    pub fn store_bytes(&self) -> u64 {
        self.spatial_trips * self.store_group_bytes
    }
}

/// Describes level `level` walking `region` in chunks of `chunk`.
pub fn level_loop(
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    level: usize,
    region: &[u64],
    chunk: &[u64],
) -> Result<LevelLoop> {
    if region.len() != prog.axes.len() || chunk.len() != prog.axes.len() {
        return Err(Error::InconsistentChain(format!(
            "level {level}: expected {} extents",
            prog.axes.len()
        )));
    }
    let mut trips = [1u64; 3];
    for ((a, class), (&r, &c)) in prog.classes(level).iter().enumerate().zip(region.iter().zip(chunk)) {
        if c == 0 || r % c != 0 {
            return Err(Error::InconsistentChain(format!(
                "level {level}: tile extent {c} does not divide {r} on axis '{}'",
                prog.axes[a].name
            )));
        }
        let slot = match class {
            LoopClass::PL => 0,
            LoopClass::TSL => 1,
            LoopClass::TRL => 2,
        };
        trips[slot] *= r / c;
    }
    let stages = &prog.layers[level].stages;
    let elem = hw.element_size_bytes;
    let bytes = |ops: &std::collections::BTreeSet<usize>| -> u64 {
        ops.iter().map(|&o| prog.operands[o].elements(chunk)).sum::<u64>() * elem
    };
    Ok(LevelLoop {
        level,
        parallel_extent: trips[0],
        spatial_trips: trips[1],
        reduction_trips: trips[2],
        load_bytes: bytes(&stages.load),
        store_group_bytes: bytes(&stages.store),
    })
}

/// Cycles of the base instruction on one level-0 tile.
pub fn base_compute_cycles(prog: &TensorProgramSpec, hw: &HardwareDescriptor, tile: &[u64]) -> u64 {
    prog.ops(tile).div_ceil(hw.isa.throughput_ops_per_cycle)
}

/// Closed-form cost of a level loop given the cost of one lower-level chunk.
pub fn analytical_loop(hw: &HardwareDescriptor, lp: &LevelLoop, inner: u64) -> CostEstimate {
    let spec = &hw.levels[lp.level];
    let load = t_load(spec, lp.load_bytes);
    let store = t_store(spec, lp.store_bytes());
    let temporal = temporal_cost(load, lp.serial_trips(), inner, store);
    let f = parallel_factor(lp.parallel_extent, spec.unit_count);
    CostEstimate {
        t_load_cycles: load,
        t_store_cycles: store,
        inner_cost_cycles: inner,
        temporal_cycles: temporal,
        f_parallel: f,
        total_cycles: f * temporal,
        source: CostSource::Analytical,
    }
}

/// Pipeline fragment of one parallel entity of a level loop.
///
/// `slices` splits every chunk into that many load/compute steps.
pub fn loop_fragment(hw: &HardwareDescriptor, lp: &LevelLoop, inner: u64, slices: u64, opts: &SimOptions) -> Fragment {
    let spec = &hw.levels[lp.level];
    let slices = slices.max(1);
    let loads = sim::ceil_shares(lp.load_bytes, spec.load_bandwidth_bytes_per_cycle, slices);
    let computes = sim::ceil_shares(inner, 1, slices);
    let group: Vec<Step> = loads
        .iter()
        .zip(&computes)
        .map(|(&load, &compute)| Step {
            load,
            compute,
            store: 0,
        })
        .collect();
    let with_store = |store: u64| {
        let mut g = group.clone();
        g.last_mut().expect("non-empty group").store = store;
        g
    };
    let mut runs = Vec::new();
    let mut push = |group: Vec<Step>, repeat: u64| {
        if repeat > 0 {
            runs.push(Run { group, repeat });
        }
    };
    if opts.store_overlap && lp.store_group_bytes > 0 {
        let shares = sim::ceil_shares(lp.store_bytes(), spec.store_bandwidth_bytes_per_cycle, lp.spatial_trips);
        for share in shares {
            push(group.clone(), lp.reduction_trips - 1);
            push(with_store(share), 1);
        }
    } else {
        push(group.clone(), lp.serial_trips() - 1);
        push(with_store(t_store(spec, lp.store_bytes())), 1);
    }
    Fragment {
        runs,
        buffers: 2,
        store_overlap: opts.store_overlap,
    }
}

/// Simulated cost of a level loop given the cost of one lower-level chunk.
pub fn empirical_loop(
    hw: &HardwareDescriptor,
    lp: &LevelLoop,
    inner: u64,
    slices: u64,
    opts: &SimOptions,
) -> CostEstimate {
    let spec = &hw.levels[lp.level];
    let temporal = simulate(&loop_fragment(hw, lp, inner, slices, opts));
    let f = parallel_factor(lp.parallel_extent, spec.unit_count);
    CostEstimate {
        t_load_cycles: t_load(spec, lp.load_bytes),
        t_store_cycles: t_store(spec, lp.store_bytes()),
        inner_cost_cycles: inner,
        temporal_cycles: temporal,
        f_parallel: f,
        total_cycles: f * temporal,
        source: CostSource::Empirical,
    }
}

/// Instruction-sized slices of a level-0 chunk along its first reduction axis.
pub fn level0_slices(prog: &TensorProgramSpec, hw: &HardwareDescriptor, tile: &[u64]) -> u64 {
    prog.classes(0)
        .iter()
        .position(|&c| c == LoopClass::TRL)
        .map(|a| tile[a] / axis_multiple(prog, hw, a))
        .unwrap_or(1)
        .max(1)
}

/// Evaluates level loops with a fixed analyzer per level.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub prog: &'a TensorProgramSpec,
    pub hw: &'a HardwareDescriptor,
    pub sim: SimOptions,
    pub kinds: Vec<AnalyzerKind>,
}

impl<'a> Evaluator<'a> {
    /// Analyzer per level as assigned in the program.
    pub fn hybrid(prog: &'a TensorProgramSpec, hw: &'a HardwareDescriptor, sim: SimOptions) -> Self {
        Self {
            prog,
            hw,
            sim,
            kinds: prog.analyzers(),
        }
    }

    pub fn analytical(prog: &'a TensorProgramSpec, hw: &'a HardwareDescriptor) -> Self {
        Self {
            prog,
            hw,
            sim: SimOptions::default(),
            kinds: vec![AnalyzerKind::Analytical; prog.depth()],
        }
    }

    pub fn empirical(prog: &'a TensorProgramSpec, hw: &'a HardwareDescriptor, sim: SimOptions) -> Self {
        Self {
            prog,
            hw,
            sim,
            kinds: vec![AnalyzerKind::Empirical; prog.depth()],
        }
    }

    /// Same evaluator with the top level analytical, as used at runtime.
    pub fn runtime(mut self) -> Self {
        if let Some(top) = self.kinds.last_mut() {
            *top = AnalyzerKind::Analytical;
        }
        self
    }

    pub fn with_kind(mut self, level: usize, kind: AnalyzerKind) -> Self {
        self.kinds[level] = kind;
        self
    }

    /// Cost of level `level` walking `region` in chunks of `chunk`, given the
    /// lower-level cost `inner` of one chunk.
    pub fn loop_cost(&self, level: usize, region: &[u64], chunk: &[u64], inner: u64) -> Result<CostEstimate> {
        let lp = level_loop(self.prog, self.hw, level, region, chunk)?;
        Ok(match self.kinds[level] {
            AnalyzerKind::Analytical => analytical_loop(self.hw, &lp, inner),
            AnalyzerKind::Empirical => {
                let slices = if level == 0 && self.sim.overlap {
                    level0_slices(self.prog, self.hw, chunk)
                } else {
                    1
                };
                empirical_loop(self.hw, &lp, inner, slices, &self.sim)
            }
        })
    }

    /// Cost of level `level` over `region`, with `chain[l]` the tile of level `l`.
    pub fn level_cost(&self, level: usize, region: &[u64], chain: &[TileShape]) -> Result<CostEstimate> {
        let chunk = &chain[level].0;
        let inner = if level == 0 {
            base_compute_cycles(self.prog, self.hw, chunk)
        } else {
            self.level_cost(level - 1, chunk, chain)?.total_cycles
        };
        self.loop_cost(level, region, chunk, inner)
    }

    /// Cost of level `level` over every region of a chain: `regions[l]` is the
    /// region walked by level `l`. Returned bottom-up.
    pub fn chain_costs(&self, chain: &[TileShape], top_region: &[u64]) -> Result<Vec<CostEstimate>> {
        let top = chain.len() - 1;
        let mut out: Vec<CostEstimate> = Vec::with_capacity(chain.len());
        for l in 0..=top {
            let region: &[u64] = if l == top { top_region } else { &chain[l + 1].0 };
            let inner = match out.last() {
                None => base_compute_cycles(self.prog, self.hw, &chain[0].0),
                Some(below) => below.total_cycles,
            };
            out.push(self.loop_cost(l, region, &chain[l].0, inner)?);
        }
        Ok(out)
    }
}

/// Checks that `chain` (bottom-up) has one tile per level and divides exactly.
pub fn check_chain(prog: &TensorProgramSpec, chain: &[TileShape]) -> Result<()> {
    if chain.len() != prog.depth() {
        return Err(Error::InconsistentChain(format!(
            "chain has {} tiles for {} levels",
            chain.len(),
            prog.depth()
        )));
    }
    for (l, t) in chain.iter().enumerate() {
        if t.0.len() != prog.axes.len() || t.0.contains(&0) {
            return Err(Error::InconsistentChain(format!("level {l} tile {t} is malformed")));
        }
    }
    for l in 1..chain.len() {
        if !chain[l].is_multiple_of(&chain[l - 1]) {
            return Err(Error::InconsistentChain(format!(
                "level {l} tile {} is not a multiple of level {} tile {}",
                chain[l],
                l - 1,
                chain[l - 1]
            )));
        }
    }
    Ok(())
}

/// Extents rounded up to multiples of `tile`.
pub fn padded_shape(shape: &[u64], tile: &[u64]) -> Vec<u64> {
    shape.iter().zip(tile).map(|(&s, &t)| s.div_ceil(t) * t).collect()
}

/// Closed-form cost of a chain (bottom-up), over `runtime_shape` padded to the
/// top tile when given, else over one top-level tile.
pub fn analytical_cost(
    chain: &[TileShape],
    runtime_shape: Option<&[u64]>,
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
) -> Result<CostEstimate> {
    check_chain(prog, chain)?;
    let top = chain.last().expect("non-empty chain");
    let region = match runtime_shape {
        Some(shape) => {
            if shape.len() != prog.axes.len() || shape.contains(&0) {
                return Err(Error::ShapeMismatch(format!(
                    "runtime shape needs {} extents >= 1",
                    prog.axes.len()
                )));
            }
            padded_shape(shape, &top.0)
        }
        None => top.0.clone(),
    };
    Evaluator::analytical(prog, hw).level_cost(chain.len() - 1, &region, chain)
}

/// Simulated cost of `candidate` over one of its own tiles; levels below use
/// their assigned analyzers. `chain_below` lists the lower tiles bottom-up.
pub fn empirical_cost(
    candidate: &MicroKernelCandidate,
    chain_below: &[TileShape],
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
    sim: &SimOptions,
) -> Result<CostEstimate> {
    let level = candidate.level_index;
    if chain_below.len() != level {
        return Err(Error::InconsistentChain(format!(
            "level {level} candidate needs {level} lower tiles, got {}",
            chain_below.len()
        )));
    }
    let mut chain = chain_below.to_vec();
    chain.push(candidate.tile.clone());
    for l in 1..chain.len() {
        if !chain[l].is_multiple_of(&chain[l - 1]) {
            return Err(Error::InconsistentChain(format!("level {l} does not divide")));
        }
    }
    Evaluator::hybrid(prog, hw, *sim)
        .with_kind(level, AnalyzerKind::Empirical)
        .level_cost(level, &candidate.tile.0, &chain)
}

/// A candidate with its chosen child and cost over one of its own tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzedCandidate {
    pub candidate: MicroKernelCandidate,
    /// Index into the level below; absent at level 0.
    pub best_child: Option<usize>,
    pub cost: CostEstimate,
}

/// Cost of the level-(L−1) loop over `parent`'s tile when the child is `child`.
pub fn child_loop_cost(eval: &Evaluator<'_>, parent: &TileShape, child: &AnalyzedCandidate) -> Result<CostEstimate> {
    eval.loop_cost(
        child.candidate.level_index,
        &parent.0,
        &child.candidate.tile.0,
        child.cost.inner_cost_cycles,
    )
}

/// Bottom-up annotation: each candidate's cost over one tile, with the best
/// map-compatible child (ties go to the lexicographically smallest tile).
pub fn analyze(
    levels: &[Vec<MicroKernelCandidate>],
    maps: &[CompatibilityMap],
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    sim: &SimOptions,
) -> Result<Vec<Vec<AnalyzedCandidate>>> {
    if levels.len() != prog.depth() || maps.len() + 1 != levels.len() {
        return Err(Error::CorruptBank(
            "level and map counts do not match the program".into(),
        ));
    }
    let eval = Evaluator::hybrid(prog, hw, *sim);
    let mut out: Vec<Vec<AnalyzedCandidate>> = Vec::with_capacity(levels.len());
    for (l, cands) in levels.iter().enumerate() {
        let analyzed: Result<Vec<AnalyzedCandidate>> = if l == 0 {
            cands
                .par_iter()
                .map(|c| {
                    let inner = base_compute_cycles(prog, hw, &c.tile.0);
                    Ok(AnalyzedCandidate {
                        candidate: c.clone(),
                        best_child: None,
                        cost: eval.loop_cost(0, &c.tile.0, &c.tile.0, inner)?,
                    })
                })
                .collect()
        } else {
            let below = &out[l - 1];
            let map = &maps[l - 1];
            if map.len() != cands.len() {
                return Err(Error::CorruptBank(format!("map {l} does not cover level {l}")));
            }
            cands
                .par_iter()
                .zip(map.0.par_iter())
                .map(|(c, entries)| {
                    let mut best: Option<(u64, usize)> = None;
                    for &j in entries {
                        let child = below
                            .get(j)
                            .ok_or_else(|| Error::CorruptBank(format!("level {l} map entry {j} is out of range")))?;
                        let inner = child_loop_cost(&eval, &c.tile, child)?.total_cycles;
                        if best.map_or(true, |(b, _)| inner < b) {
                            best = Some((inner, j));
                        }
                    }
                    let (inner, j) = best
                        .ok_or_else(|| Error::CorruptBank(format!("level {l} candidate {} has no children", c.tile)))?;
                    Ok(AnalyzedCandidate {
                        candidate: c.clone(),
                        best_child: Some(j),
                        cost: eval.loop_cost(l, &c.tile.0, &c.tile.0, inner)?,
                    })
                })
                .collect()
        };
        out.push(analyzed?);
    }
    Ok(out)
}

/// Bytes moved and operations performed by one level over a whole execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LevelTraffic {
    pub load_bytes: u64,
    pub store_bytes: u64,
    pub ops: u64,
}

/// Traffic implied by the loop structure of `chain` (bottom-up) over `padded`.
pub fn model_traffic(
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    chain: &[TileShape],
    padded: &[u64],
) -> Result<Vec<LevelTraffic>> {
    check_chain(prog, chain)?;
    let top = chain.len() - 1;
    let padded_volume: u64 = padded.iter().product();
    (0..=top)
        .map(|l| {
            let region: &[u64] = if l == top { padded } else { &chain[l + 1].0 };
            let lp = level_loop(prog, hw, l, region, &chain[l].0)?;
            let invocations = padded_volume / region.iter().product::<u64>();
            let per = invocations * lp.parallel_extent;
            Ok(LevelTraffic {
                load_bytes: per * lp.serial_trips() * lp.load_bytes,
                store_bytes: per * lp.store_bytes(),
                ops: if l == 0 { prog.ops(padded) } else { 0 },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwmodel::find_preset;
    use crate::program::gemm_program;
    use proptest::prelude::*;

    fn spec(load: u64, store: u64) -> LevelSpec {
        LevelSpec {
            level_index: 0,
            unit_count: 1,
            memory_capacity_bytes: 1,
            load_bandwidth_bytes_per_cycle: load,
            store_bandwidth_bytes_per_cycle: store,
            max_parallel_binding: None,
        }
    }

    #[test]
    fn transfer_times() {
        assert_eq!(t_load(&spec(64, 1), 1024), 16);
        assert_eq!(t_load(&spec(64, 1), 0), 0);
        assert_eq!(t_load(&spec(64, 1), 100), 2);
        assert_eq!(t_store(&spec(1, 64), 100), 2);
    }

    #[test]
    fn temporal_examples() {
        assert_eq!(temporal_cost(10, 4, 8, 5), 53);
        assert_eq!(temporal_cost(10, 1, 8, 5), 23);
        assert_eq!(temporal_cost(4, 3, 9, 2), 33);
    }

    #[test]
    fn wave_examples() {
        assert_eq!(parallel_factor(216, 108), 2);
        assert_eq!(parallel_factor(1, 108), 1);
        assert_eq!(parallel_factor(109, 108), 2);
        for k in 1..=8 {
            assert_eq!(parallel_factor(k * 108, 108), k);
        }
    }

    #[test]
    fn degenerate_chain_collapses_to_base_cost() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let mut prog = gemm_program(3);
        for layer in &mut prog.layers {
            layer.stages.load.clear();
            layer.stages.store.clear();
        }
        let t = TileShape(vec![16, 8, 16]);
        let chain = vec![t.clone(), t.clone(), t.clone()];
        let c = analytical_cost(&chain, Some(&[16, 8, 16]), &hw, &prog).unwrap();
        assert_eq!(c.total_cycles, base_compute_cycles(&prog, &hw, &t.0));
    }

    #[test]
    fn level0_base_case() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let prog = gemm_program(3);
        let t = TileShape(vec![32, 16, 64]);
        let got = Evaluator::analytical(&prog, &hw)
            .level_cost(0, &t.0, std::slice::from_ref(&t))
            .unwrap();
        let bytes_in: u64 = (32 * 64 + 64 * 16) * 2;
        let bytes_out: u64 = 32 * 16 * 2;
        let expected = (2u64 * 32 * 16 * 64).div_ceil(512) + bytes_in.div_ceil(32) + bytes_out.div_ceil(32);
        assert_eq!(got.total_cycles, expected);
        let sim_off = SimOptions {
            overlap: false,
            store_overlap: false,
        };
        let c = MicroKernelCandidate {
            level_index: 0,
            tile: t.clone(),
            footprint_bytes: 0,
            parallel_degree: 1,
        };
        assert_eq!(
            empirical_cost(&c, &[], &hw, &prog, &sim_off).unwrap().total_cycles,
            expected
        );
        let on = empirical_cost(&c, &[], &hw, &prog, &SimOptions::default()).unwrap();
        assert!(on.total_cycles <= expected);
        assert_eq!(on, empirical_cost(&c, &[], &hw, &prog, &SimOptions::default()).unwrap());
    }

    #[test]
    fn doubling_parallel_extent_across_units() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let prog = gemm_program(3);
        let chain = vec![
            TileShape(vec![16, 8, 16]),
            TileShape(vec![64, 64, 32]),
            TileShape(vec![64, 64, 32]),
        ];
        // 108 PL chunks fill one wave; 216 need two.
        let one = analytical_cost(&chain, Some(&[64 * 108, 64, 32]), &hw, &prog).unwrap();
        let two = analytical_cost(&chain, Some(&[64 * 216, 64, 32]), &hw, &prog).unwrap();
        assert_eq!((one.f_parallel, two.f_parallel), (1, 2));
        assert_eq!(two.total_cycles, 2 * one.total_cycles);
        assert_eq!(one.temporal_cycles, two.temporal_cycles);
    }

    #[test]
    fn inconsistent_chain_is_rejected() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let prog = gemm_program(3);
        let chain = vec![
            TileShape(vec![16, 8, 16]),
            TileShape(vec![24, 8, 16]),
            TileShape(vec![48, 8, 16]),
        ];
        assert!(matches!(
            analytical_cost(&chain, None, &hw, &prog),
            Err(Error::InconsistentChain(_))
        ));
    }

    proptest! {
        #[test]
        fn total_is_monotone(load in 0u64..1000, store in 0u64..1000, inner in 0u64..1000, trip in 1u64..100, par in 1u64..500, units in 1u64..128, d in 1u64..50) {
            let total = |l: u64, s: u64, i: u64, t: u64, p: u64| parallel_factor(p, units) * temporal_cost(l, t, i, s);
            let base = total(load, store, inner, trip, par);
            prop_assert!(total(load + d, store, inner, trip, par) >= base);
            prop_assert!(total(load, store + d, inner, trip, par) >= base);
            prop_assert!(total(load, store, inner + d, trip, par) >= base);
            prop_assert!(total(load, store, inner, trip + d, par) >= base);
            prop_assert!(total(load, store, inner, trip, par + d) >= base);
        }
    }
}
