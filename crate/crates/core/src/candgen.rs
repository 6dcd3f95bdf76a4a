//! Bottom-up, hardware-aware micro-kernel candidate generation.
//!
//! Level 0 enumerates the tile lattice inside the utilization window and keeps
//! ISA-aligned shapes. Every higher level enumerates its own lattice and keeps
//! the shapes that are exact per-axis multiples of at least one candidate
//! below, recording those links in a [`CompatibilityMap`].

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::KernelBank;
use crate::cost::{analyze, SimOptions};
use crate::error::{Error, Result};
use crate::hwmodel::{HardwareDescriptor, IsaGranularity, LevelSpec};
use crate::program::{validate_binding, ExtentKind, LoopClass, TensorProgramSpec, TilePolicy};

/// Per-axis tile extents, ordered like the program's axes.
///
/// Ordering is lexicographic over extents; banks are sorted by it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TileShape(pub Vec<u64>);

impl TileShape {
    pub fn extents(&self) -> &[u64] {
        &self.0
    }

    pub fn volume(&self) -> u64 {
        self.0.iter().product()
    }

    /// Whether `self` is an exact per-axis multiple of `other`.
    pub fn is_multiple_of(&self, other: &TileShape) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| b != 0 && a % b == 0)
    }
}

impl AsRef<TileShape> for TileShape {
    fn as_ref(&self) -> &TileShape {
        self
    }
}

impl fmt::Display for TileShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroKernelCandidate {
    pub level_index: usize,
    pub tile: TileShape,
    /// Bytes held by one unit of this level while executing the tile.
    pub footprint_bytes: u64,
    /// Parallel sub-tiles of the level below bound inside this tile, minimised
    /// over compatible children; 1 when the level below has no PL axes.
    pub parallel_degree: u64,
}

impl AsRef<TileShape> for MicroKernelCandidate {
    fn as_ref(&self) -> &TileShape {
        &self.tile
    }
}

/// For every level-L candidate, the indices of the level L−1 candidates that divide it.
///
/// Entry lists are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompatibilityMap(pub Vec<Vec<usize>>);

impl CompatibilityMap {
    pub fn entries(&self, candidate: usize) -> &[usize] {
        &self.0[candidate]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }
}

/// Knobs of an offline build besides the descriptor and the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Levels without a buffer tier admit tiles whose input staging would fit
    /// in `top_span` units of the level below.
    pub top_span: u64,
    pub sim: SimOptions,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            top_span: 4,
            sim: SimOptions::default(),
        }
    }
}

/// Bytes one unit of `level` holds for `tile`.
///
/// Level 0 holds every operand fragment in registers. A staging level holds
/// its loaded and stored operands, double-buffered when it loads. A level
/// without stages owns no buffer.
pub fn footprint_bytes(prog: &TensorProgramSpec, hw: &HardwareDescriptor, level: usize, tile: &[u64]) -> u64 {
    let elem = hw.element_size_bytes;
    let stages = &prog.layers[level].stages;
    if level == 0 {
        return prog.operands.iter().map(|o| o.elements(tile)).sum::<u64>() * elem;
    }
    if !stages.is_staging() {
        return 0;
    }
    let factor = if stages.load.is_empty() { 1 } else { 2 };
    let staged: u64 = stages
        .load
        .iter()
        .chain(&stages.store)
        .map(|&o| prog.operands[o].elements(tile))
        .sum();
    staged * elem * factor
}

/// Double-buffered input staging bytes, the measure bounding unstaged levels.
fn span_bytes(prog: &TensorProgramSpec, hw: &HardwareDescriptor, tile: &[u64]) -> u64 {
    prog.inputs()
        .iter()
        .map(|&o| prog.operands[o].elements(tile))
        .sum::<u64>()
        * hw.element_size_bytes
        * 2
}

/// Admissible range of one level.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Admission {
    /// Footprint inside the utilization window of the level's own capacity.
    Window { capacity: u64 },
    /// No buffer tier: input staging bounded by a span of the level below.
    Span { limit: u64 },
}

fn admission(prog: &TensorProgramSpec, hw: &HardwareDescriptor, level: usize, cfg: &BuildConfig) -> Admission {
    if level == 0 || prog.layers[level].stages.is_staging() {
        Admission::Window {
            capacity: hw.levels[level].memory_capacity_bytes,
        }
    } else {
        let below = hw.levels[level - 1].memory_capacity_bytes;
        Admission::Span {
            limit: cfg
                .top_span
                .max(1)
                .saturating_mul(hw.utilization_window.upper_bytes(below)),
        }
    }
}

impl Admission {
    fn measure(&self, prog: &TensorProgramSpec, hw: &HardwareDescriptor, level: usize, tile: &[u64]) -> u64 {
        match self {
            Admission::Window { .. } => footprint_bytes(prog, hw, level, tile),
            Admission::Span { .. } => span_bytes(prog, hw, tile),
        }
    }

    fn upper(&self, hw: &HardwareDescriptor) -> u64 {
        match *self {
            Admission::Window { capacity } => hw.utilization_window.upper_bytes(capacity),
            Admission::Span { limit } => limit,
        }
    }

    fn admits(&self, hw: &HardwareDescriptor, measure: u64) -> bool {
        match *self {
            Admission::Window { capacity } => hw.utilization_window.admits(measure, capacity),
            Admission::Span { limit } => measure <= limit,
        }
    }
}

/// Lattice multiple of an axis: its instruction multiple, or 1.
pub fn axis_multiple(prog: &TensorProgramSpec, hw: &HardwareDescriptor, axis: usize) -> u64 {
    prog.axes[axis]
        .isa_dim
        .as_deref()
        .map(|d| hw.isa.multiple(d))
        .unwrap_or(1)
}

/// Extents `multiple·2^i` and `multiple·3·2^i` up to `max`, ascending.
pub fn lattice(multiple: u64, max: u64) -> Vec<u64> {
    let mut values = Vec::new();
    for base in [multiple, 3 * multiple] {
        let mut v = base;
        while v <= max {
            values.push(v);
            match v.checked_mul(2) {
                Some(next) => v = next,
                None => break,
            }
        }
    }
    values.sort_unstable();
    values.dedup();
    values
}

fn axis_values(prog: &TensorProgramSpec, hw: &HardwareDescriptor, axis: usize, max: u64) -> Vec<u64> {
    let spec = &prog.axes[axis];
    if spec.tile_policy == TilePolicy::Unit {
        return vec![1];
    }
    let mut values = lattice(axis_multiple(prog, hw, axis), max);
    if let ExtentKind::Static(extent) = spec.extent_kind {
        values.retain(|v| extent % v == 0);
    }
    values
}

/// Enumerates the tile lattice of one level inside its admissible range.
///
/// Output is sorted lexicographically. Footprints are monotone in every
/// extent, so each axis scan stops at the first value over the upper bound
/// with the remaining axes at their minimum.
pub fn init_cands(
    level: &LevelSpec,
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    cfg: &BuildConfig,
) -> Result<Vec<TileShape>> {
    let l = level.level_index;
    let adm = admission(prog, hw, l, cfg);
    let upper = adm.upper(hw);
    let max_extent = upper / hw.element_size_bytes;
    let values: Vec<Vec<u64>> = (0..prog.axes.len())
        .map(|a| axis_values(prog, hw, a, max_extent.max(1)))
        .collect();
    if let Some(a) = values.iter().position(Vec::is_empty) {
        return Err(Error::EmptyCandidates {
            level: l,
            reason: format!("axis '{}' has no admissible extent", prog.axes[a].name),
        });
    }
    let minimum: Vec<u64> = values.iter().map(|v| v[0]).collect();

    let enumerate_from = |first: u64| -> Vec<TileShape> {
        let mut out = Vec::new();
        let mut tile = minimum.clone();
        tile[0] = first;
        if adm.measure(prog, hw, l, &tile) <= upper {
            descend(prog, hw, l, &adm, upper, &values, &minimum, 1, &mut tile, &mut out);
        }
        out
    };
    let chunks: Vec<Vec<TileShape>> = values[0].par_iter().map(|&v| enumerate_from(v)).collect();
    let cands: Vec<TileShape> = chunks.into_iter().flatten().collect();
    if cands.is_empty() {
        return Err(Error::EmptyCandidates {
            level: l,
            reason: format!(
                "no tile footprint falls inside the utilization window ({}, {}) of {} bytes",
                hw.utilization_window.low_fraction, hw.utilization_window.high_fraction, level.memory_capacity_bytes
            ),
        });
    }
    Ok(cands)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    level: usize,
    adm: &Admission,
    upper: u64,
    values: &[Vec<u64>],
    minimum: &[u64],
    axis: usize,
    tile: &mut Vec<u64>,
    out: &mut Vec<TileShape>,
) {
    if axis == values.len() {
        if adm.admits(hw, adm.measure(prog, hw, level, tile)) {
            out.push(TileShape(tile.clone()));
        }
        return;
    }
    for &v in &values[axis] {
        tile[axis] = v;
        if adm.measure(prog, hw, level, tile) > upper {
            break;
        }
        descend(prog, hw, level, adm, upper, values, minimum, axis + 1, tile, out);
    }
    tile[axis] = minimum[axis];
}

/// Keeps shapes whose instruction-aligned axes are exact multiples of the ISA granularity.
pub fn filter_by_isa(cands: &[TileShape], isa: &IsaGranularity, prog: &TensorProgramSpec) -> Vec<TileShape> {
    let multiples: Vec<u64> = prog
        .axes
        .iter()
        .map(|a| a.isa_dim.as_deref().map(|d| isa.multiple(d)).unwrap_or(1))
        .collect();
    cands
        .iter()
        .filter(|t| t.0.iter().zip(&multiples).all(|(&v, &m)| v % m == 0))
        .cloned()
        .collect()
}

/// Prefix trie over candidate tiles, so each lower tile visits only its multiples.
struct Trie {
    nodes: Vec<TrieNode>,
}

#[derive(Default)]
struct TrieNode {
    keys: Vec<u64>,
    children: Vec<usize>,
    /// Every candidate index ending here; duplicates share a node.
    leaves: Vec<usize>,
}

impl Trie {
    fn new(cands: &[TileShape]) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (i, c) in cands.iter().enumerate() {
            let mut node = 0;
            for &v in &c.0 {
                node = match nodes[node].keys.iter().position(|&k| k == v) {
                    Some(p) => nodes[node].children[p],
                    None => {
                        nodes.push(TrieNode::default());
                        let id = nodes.len() - 1;
                        nodes[node].keys.push(v);
                        nodes[node].children.push(id);
                        id
                    }
                };
            }
            nodes[node].leaves.push(i);
        }
        Trie { nodes }
    }

    fn multiples_of(&self, divisor: &[u64], node: usize, depth: usize, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if depth == divisor.len() {
            out.extend(&n.leaves);
            return;
        }
        for (&k, &child) in n.keys.iter().zip(&n.children) {
            if k % divisor[depth] == 0 {
                self.multiples_of(divisor, child, depth + 1, out);
            }
        }
    }
}

/// Sieve: keeps the candidates that are exact multiples of at least one `prev`
/// tile and records every such link.
///
/// Iterates `prev` and emits its multiples among `cands`. Survivors keep their
/// input order; map entries list `prev` indices in increasing order.
pub fn filter_by_multiples<P: AsRef<TileShape> + Sync>(
    cands: &[TileShape],
    prev: &[P],
) -> (Vec<TileShape>, CompatibilityMap) {
    let trie = Trie::new(cands);
    let per_prev: Vec<Vec<usize>> = prev
        .par_iter()
        .map(|p| {
            let mut hits = Vec::new();
            let divisor = &p.as_ref().0;
            if cands.first().map_or(true, |c| c.0.len() == divisor.len()) && divisor.iter().all(|&d| d > 0) {
                trie.multiples_of(divisor, 0, 0, &mut hits);
            }
            hits
        })
        .collect();
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); cands.len()];
    for (p, hits) in per_prev.into_iter().enumerate() {
        for c in hits {
            links[c].push(p);
        }
    }
    let mut filtered = Vec::new();
    let mut map = Vec::new();
    for (c, entries) in links.into_iter().enumerate() {
        if !entries.is_empty() {
            filtered.push(cands[c].clone());
            map.push(entries);
        }
    }
    (filtered, CompatibilityMap(map))
}

/// Sub-tiles of `child` inside `parent` along the axes that are PL at the child's level.
pub fn pair_parallel_degree(
    prog: &TensorProgramSpec,
    child_level: usize,
    parent: &TileShape,
    child: &TileShape,
) -> u64 {
    prog.classes(child_level)
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == LoopClass::PL)
        .map(|(a, _)| parent.0[a] / child.0[a])
        .product()
}

/// One step of the bottom-up generation.
///
/// Level 0 applies [`init_cands`] then [`filter_by_isa`]; higher levels apply
/// [`init_cands`] then [`filter_by_multiples`] and drop links whose parallel
/// degree exceeds the level's binding cap. The map is `None` at level 0.
pub fn generate_candidates_for_layer(
    level: usize,
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    prev: &[MicroKernelCandidate],
    cfg: &BuildConfig,
) -> Result<(Vec<MicroKernelCandidate>, Option<CompatibilityMap>)> {
    let spec = &hw.levels[level];
    let raw = init_cands(spec, prog, hw, cfg)?;
    let make = |tile: TileShape, parallel_degree: u64| MicroKernelCandidate {
        level_index: level,
        footprint_bytes: footprint_bytes(prog, hw, level, &tile.0),
        tile,
        parallel_degree,
    };
    if level == 0 {
        let kept = filter_by_isa(&raw, &hw.isa, prog);
        if kept.is_empty() {
            return Err(Error::EmptyCandidates {
                level,
                reason: "no window-admitted tile is aligned to the instruction multiples".into(),
            });
        }
        return Ok((kept.into_iter().map(|t| make(t, 1)).collect(), None));
    }
    if prev.is_empty() {
        return Err(Error::EmptyCandidates {
            level,
            reason: "the level below has no candidates".into(),
        });
    }
    let (filtered, map) = filter_by_multiples(&raw, prev);
    let cap = spec.max_parallel_binding;
    let mut out = Vec::new();
    let mut entries_out = Vec::new();
    for (tile, entries) in filtered.into_iter().zip(map.0) {
        let scored: Vec<(usize, u64)> = entries
            .into_iter()
            .map(|p| (p, pair_parallel_degree(prog, level - 1, &tile, &prev[p].tile)))
            .filter(|&(_, d)| cap.map_or(true, |c| d <= c))
            .collect();
        if let Some(degree) = scored.iter().map(|&(_, d)| d).min() {
            entries_out.push(scored.iter().map(|&(p, _)| p).collect());
            out.push(make(tile, degree));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCandidates {
            level,
            reason: "no admissible tile is a multiple of a lower-level candidate".into(),
        });
    }
    Ok((out, Some(CompatibilityMap(entries_out))))
}

/// Runs generation for every level. `maps[i]` links level `i + 1` to level `i`.
pub fn generate_all(
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    cfg: &BuildConfig,
) -> Result<(Vec<Vec<MicroKernelCandidate>>, Vec<CompatibilityMap>)> {
    validate_binding(prog, hw)?;
    let mut levels: Vec<Vec<MicroKernelCandidate>> = Vec::with_capacity(hw.depth());
    let mut maps = Vec::with_capacity(hw.depth() - 1);
    for l in 0..hw.depth() {
        let prev: &[MicroKernelCandidate] = levels.last().map(Vec::as_slice).unwrap_or(&[]);
        let (cands, map) = generate_candidates_for_layer(l, prog, hw, prev, cfg)?;
        levels.push(cands);
        maps.extend(map);
    }
    Ok((levels, maps))
}

/// Offline build: generation plus cost annotation. Reads no runtime shape.
pub fn build_bank(prog: &TensorProgramSpec, hw: &HardwareDescriptor, cfg: &BuildConfig) -> Result<KernelBank> {
    let (levels, maps) = generate_all(prog, hw, cfg)?;
    let analyzed = analyze(&levels, &maps, prog, hw, &cfg.sim)?;
    Ok(KernelBank::assemble(prog, hw, cfg, analyzed, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwmodel::{find_preset, UtilizationWindow};
    use crate::program::gemm_program;

    fn t(v: &[u64]) -> TileShape {
        TileShape(v.to_vec())
    }

    #[test]
    fn shared_memory_staging_examples() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let p = gemm_program(3);
        assert_eq!(footprint_bytes(&p, &hw, 1, &[128, 128, 32]), 32768);
        // Single-buffered A+B staging, the quantity quoted per tile.
        assert_eq!(span_bytes(&p, &hw, &[128, 128, 32]) / 2, 16384);
        assert_eq!(span_bytes(&p, &hw, &[512, 512, 64]) / 2, 131072);
        let cands = init_cands(&hw.levels[1], &p, &hw, &BuildConfig::default()).unwrap();
        assert!(cands.contains(&t(&[128, 128, 32])));
        assert!(!cands.contains(&t(&[512, 512, 64])));
    }

    #[test]
    fn empty_window_is_an_error() {
        let mut hw = find_preset("gpu-matrix").unwrap().descriptor;
        // Only the smallest aligned tile (16,8,16) fits: 1024 B, below the 1045 B floor.
        hw.levels[0].memory_capacity_bytes = 1100;
        hw.utilization_window = UtilizationWindow {
            low_fraction: 0.95,
            high_fraction: 1.0,
        };
        let err = init_cands(&hw.levels[0], &gemm_program(3), &hw, &BuildConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCandidates { level: 0, .. }));
    }

    #[test]
    fn window_above_every_shape_is_empty() {
        let mut hw = find_preset("gpu-vector").unwrap().descriptor;
        hw.levels[0].memory_capacity_bytes = 1024;
        let mut p = gemm_program(3);
        for a in &mut p.axes {
            a.extent_kind = ExtentKind::Static(2);
        }
        // Largest tile (2,2,2) holds 12 fp32 elements = 48 B, below 0.125 · 1024.
        let err = init_cands(&hw.levels[0], &p, &hw, &BuildConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCandidates { level: 0, .. }));
    }

    #[test]
    fn isa_filter_examples() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let p = gemm_program(3);
        let cands = vec![t(&[16, 8, 16]), t(&[16, 8, 24]), t(&[32, 16, 16])];
        assert_eq!(
            filter_by_isa(&cands, &hw.isa, &p),
            vec![t(&[16, 8, 16]), t(&[32, 16, 16])]
        );
        let unit = find_preset("gpu-vector").unwrap().descriptor;
        assert_eq!(filter_by_isa(&cands, &unit.isa, &p), cands);
        assert!(filter_by_isa(&[], &hw.isa, &p).is_empty());
    }

    #[test]
    fn sieve_one_dimensional() {
        let cands: Vec<TileShape> = (8..=24).map(|v| t(&[v])).collect();
        let prev = vec![t(&[4]), t(&[6])];
        let (kept, map) = filter_by_multiples(&cands, &prev);
        let extents: Vec<u64> = kept.iter().map(|c| c.0[0]).collect();
        assert_eq!(extents, vec![8, 12, 16, 18, 20, 24]);
        let lookup = |v: u64| map.entries(extents.iter().position(|&e| e == v).unwrap()).to_vec();
        assert_eq!(lookup(12), vec![0, 1]);
        assert_eq!(lookup(8), vec![0]);
        assert_eq!(lookup(18), vec![1]);
    }

    #[test]
    fn sieve_unit_divisor_keeps_everything() {
        let cands: Vec<TileShape> = (1..10).map(|v| t(&[v, 2 * v])).collect();
        let (kept, map) = filter_by_multiples(&cands, &[t(&[1, 1])]);
        assert_eq!(kept, cands);
        assert!(map.0.iter().all(|e| e == &vec![0]));
    }

    #[test]
    fn sieve_gemm_divisibility() {
        let (kept, _) = filter_by_multiples(&[t(&[128, 128, 32]), t(&[128, 132, 32])], &[t(&[16, 8, 16])]);
        assert_eq!(kept, vec![t(&[128, 128, 32])]);
    }

    #[test]
    fn level_zero_alignment() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let p = gemm_program(3);
        let (l0, map) = generate_candidates_for_layer(0, &p, &hw, &[], &BuildConfig::default()).unwrap();
        assert!(map.is_none());
        assert!(l0
            .iter()
            .all(|c| c.tile.0[0] % 16 == 0 && c.tile.0[1] % 8 == 0 && c.tile.0[2] % 16 == 0));
        let (l1, map) = generate_candidates_for_layer(1, &p, &hw, &l0, &BuildConfig::default()).unwrap();
        let map = map.unwrap();
        assert_eq!(map.len(), l1.len());
        assert!(map.0.iter().all(|e| !e.is_empty()));
    }

    #[test]
    fn lattice_values() {
        assert_eq!(lattice(16, 100), vec![16, 32, 48, 64, 96]);
        assert_eq!(lattice(1, 7), vec![1, 2, 3, 4, 6]);
        assert!(lattice(8, 7).is_empty());
    }

    #[test]
    fn parallel_cap_prunes_links() {
        let hw = find_preset("gpu-matrix").unwrap().descriptor;
        let mut p = gemm_program(3);
        // Make level 0 parallel over m and n so level-1 tiles bind sub-tiles.
        for a in ["m", "n"] {
            p.layers[0].loop_class_map.insert(a.into(), LoopClass::PL);
        }
        let cfg = BuildConfig::default();
        let (l0, _) = generate_candidates_for_layer(0, &p, &hw, &[], &cfg).unwrap();
        let (l1, map) = generate_candidates_for_layer(1, &p, &hw, &l0, &cfg).unwrap();
        let map = map.unwrap();
        for (c, entries) in l1.iter().zip(&map.0) {
            assert!(c.parallel_degree <= 32);
            for &e in entries {
                assert!(pair_parallel_degree(&p, 0, &c.tile, &l0[e].tile) <= 32);
            }
        }
    }
}
