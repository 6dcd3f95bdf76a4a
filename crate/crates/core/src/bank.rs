//! The persisted offline artifact and its canonical text form.
//!
//! A bank file is one JSON object. Header fields come first in fixed order,
//! then `levels` with one candidate per line, then `maps` with one entry list
//! per line. Identical banks serialize to identical bytes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candgen::{
    footprint_bytes, generate_candidates_for_layer, pair_parallel_degree, BuildConfig, CompatibilityMap,
    MicroKernelCandidate, TileShape,
};
use crate::cost::{analyze, AnalyzedCandidate};
use crate::error::{Error, Result};
use crate::hwmodel::{sha256_hex, HardwareDescriptor, UtilizationWindow};
use crate::program::{validate_binding, AnalyzerKind, OperatorKind, TensorProgramSpec};

pub const BANK_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankLevel {
    pub level: usize,
    pub candidates: Vec<AnalyzedCandidate>,
}

/// Links from level `level` candidates to level `level - 1` candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankMap {
    pub level: usize,
    pub entries: CompatibilityMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBank {
    pub version: u64,
    pub hardware_name: String,
    pub hardware_digest: String,
    /// Operator identifier (`gemm` or `conv2d`).
    pub program: String,
    /// Analyzer per level, innermost first.
    pub analyzers: Vec<AnalyzerKind>,
    pub build_config: BuildConfig,
    /// Digest of the utilization window, analyzers and build config.
    pub config_digest: String,
    pub levels: Vec<BankLevel>,
    pub maps: Vec<BankMap>,
}

#[derive(Serialize)]
struct ConfigDigestInput<'a> {
    utilization_window: &'a UtilizationWindow,
    analyzers: &'a [AnalyzerKind],
    build_config: &'a BuildConfig,
}

/// Digest of everything besides the descriptor that shapes a build.
pub fn config_digest(window: &UtilizationWindow, analyzers: &[AnalyzerKind], cfg: &BuildConfig) -> String {
    let input = ConfigDigestInput {
        utilization_window: window,
        analyzers,
        build_config: cfg,
    };
    sha256_hex(serde_json::to_string(&input).expect("config serializes").as_bytes())
}

impl KernelBank {
    pub(crate) fn assemble(
        prog: &TensorProgramSpec,
        hw: &HardwareDescriptor,
        cfg: &BuildConfig,
        analyzed: Vec<Vec<AnalyzedCandidate>>,
        maps: Vec<CompatibilityMap>,
    ) -> Self {
        let analyzers = prog.analyzers();
        KernelBank {
            version: BANK_FORMAT_VERSION,
            hardware_name: hw.name.clone(),
            hardware_digest: hw.digest(),
            program: prog.id().to_string(),
            config_digest: config_digest(&hw.utilization_window, &analyzers, cfg),
            analyzers,
            build_config: *cfg,
            levels: analyzed
                .into_iter()
                .enumerate()
                .map(|(level, candidates)| BankLevel { level, candidates })
                .collect(),
            maps: maps
                .into_iter()
                .enumerate()
                .map(|(i, entries)| BankMap { level: i + 1, entries })
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &[AnalyzedCandidate] {
        &self.levels[l].candidates
    }

    pub fn top(&self) -> &[AnalyzedCandidate] {
        &self.levels[self.levels.len() - 1].candidates
    }

    pub fn candidate_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.candidates.len()).collect()
    }

    pub fn total_candidates(&self) -> usize {
        self.candidate_counts().iter().sum()
    }

    /// Map linking level `l ≥ 1` to level `l − 1`.
    pub fn map(&self, l: usize) -> &CompatibilityMap {
        &self.maps[l - 1].entries
    }

    /// Rebuilds the program this bank was built for.
    pub fn program_spec(&self) -> Result<TensorProgramSpec> {
        let kind = OperatorKind::from_id(&self.program)
            .ok_or_else(|| Error::CorruptBank(format!("unknown program '{}'", self.program)))?;
        if self.analyzers.len() != self.levels.len() || self.levels.len() < 2 {
            return Err(Error::CorruptBank(
                "analyzer list does not match the level count".into(),
            ));
        }
        Ok(kind.program(self.levels.len()).with_analyzers(&self.analyzers))
    }

    /// Tiles of the best chain under top candidate `index`, bottom-up.
    pub fn chain_from_top(&self, index: usize) -> Vec<(usize, TileShape)> {
        let mut chain = Vec::with_capacity(self.depth());
        let mut level = self.depth() - 1;
        let mut i = index;
        loop {
            let c = &self.levels[level].candidates[i];
            chain.push((i, c.candidate.tile.clone()));
            match c.best_child {
                Some(child) if level > 0 => {
                    i = child;
                    level -= 1;
                }
                _ => break,
            }
        }
        chain.reverse();
        chain
    }

    /// Canonical text form.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        out.push('{');
        out.push_str(&format!("\"version\":{},", self.version));
        out.push_str(&format!("\"hardware_name\":{},", json(&self.hardware_name)));
        out.push_str(&format!("\"hardware_digest\":{},", json(&self.hardware_digest)));
        out.push_str(&format!("\"program\":{},", json(&self.program)));
        out.push_str(&format!("\"analyzers\":{},", json(&self.analyzers)));
        out.push_str(&format!("\"build_config\":{},", json(&self.build_config)));
        out.push_str(&format!("\"config_digest\":{},\n", json(&self.config_digest)));
        out.push_str("\"levels\":[");
        for (i, level) in self.levels.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("\n{{\"level\":{},\"candidates\":[", level.level));
            for (j, c) in level.candidates.iter().enumerate() {
                out.push_str(if j == 0 { "\n" } else { ",\n" });
                out.push_str(&json(c));
            }
            out.push_str("]}");
        }
        out.push_str("],\n\"maps\":[");
        for (i, map) in self.maps.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("\n{{\"level\":{},\"entries\":[", map.level));
            for (j, e) in map.entries.0.iter().enumerate() {
                out.push_str(if j == 0 { "\n" } else { ",\n" });
                out.push_str(&json(e));
            }
            out.push_str("]}");
        }
        out.push_str("]}\n");
        out
    }

    /// Parses the text form and checks the version. Does not revalidate.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("bank: {e}")))?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(BANK_FORMAT_VERSION) => {}
            Some(found) => {
                return Err(Error::VersionMismatch {
                    found,
                    expected: BANK_FORMAT_VERSION,
                })
            }
            None => return Err(Error::Parse("bank: missing integer field 'version'".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Parse(format!("bank: {e}")))
    }

    /// Checks every generation and cost invariant against `hw`.
    ///
    /// Candidate sets, links, footprints, parallel degrees, best children and
    /// cost annotations are all recomputed from the stored tiles and compared.
    pub fn revalidate(&self, hw: &HardwareDescriptor) -> Result<()> {
        let corrupt = |msg: String| Err(Error::CorruptBank(msg));
        if self.version != BANK_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: BANK_FORMAT_VERSION,
            });
        }
        if self.hardware_digest != hw.digest() {
            return Err(Error::DigestMismatch {
                bank: self.hardware_digest.clone(),
                hardware: hw.digest(),
            });
        }
        if self.hardware_name != hw.name {
            return corrupt(format!(
                "hardware name '{}' does not match '{}'",
                self.hardware_name, hw.name
            ));
        }
        let prog = self.program_spec()?;
        validate_binding(&prog, hw).map_err(|e| Error::CorruptBank(e.to_string()))?;
        if self.config_digest != config_digest(&hw.utilization_window, &self.analyzers, &self.build_config) {
            return corrupt("build-config digest does not match the recorded configuration".into());
        }
        if self.maps.len() + 1 != self.levels.len() {
            return corrupt("expected one map per level boundary".into());
        }
        for (l, level) in self.levels.iter().enumerate() {
            if level.level != l {
                return corrupt(format!("level entry {l} is labelled {}", level.level));
            }
            if level.candidates.is_empty() {
                return Err(Error::EmptyBank(format!("level {l} has no candidates")));
            }
        }
        for (i, map) in self.maps.iter().enumerate() {
            if map.level != i + 1 {
                return corrupt(format!("map entry {i} is labelled {}", map.level));
            }
        }

        let mut plain: Vec<Vec<MicroKernelCandidate>> = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter().enumerate() {
            let stored: Vec<MicroKernelCandidate> = level.candidates.iter().map(|c| c.candidate.clone()).collect();
            let prev = plain.last().map(Vec::as_slice).unwrap_or(&[]);
            let (expected, map) = generate_candidates_for_layer(l, &prog, hw, prev, &self.build_config)
                .map_err(|e| Error::CorruptBank(format!("level {l}: {e}")))?;
            if stored != expected {
                let diff = stored
                    .iter()
                    .zip(&expected)
                    .position(|(a, b)| a != b)
                    .unwrap_or(stored.len().min(expected.len()));
                return corrupt(format!(
                    "level {l} candidates differ from regeneration at index {diff} ({} stored, {} expected)",
                    stored.len(),
                    expected.len()
                ));
            }
            if let Some(map) = map {
                if self.maps[l - 1].entries != map {
                    return corrupt(format!("map for level {l} differs from regeneration"));
                }
            }
            plain.push(stored);
        }
        let maps: Vec<CompatibilityMap> = self.maps.iter().map(|m| m.entries.clone()).collect();
        let analyzed = analyze(&plain, &maps, &prog, hw, &self.build_config.sim)?;
        for (l, (level, fresh)) in self.levels.iter().zip(&analyzed).enumerate() {
            if let Some(i) = level.candidates.iter().zip(fresh).position(|(a, b)| a != b) {
                return corrupt(format!(
                    "level {l} candidate {i} has a stale cost annotation or best child"
                ));
            }
        }
        Ok(())
    }

    /// Invariant sweep used by tests and the acceptance suite: capacity,
    /// window, parallel caps and divisibility of every stored link.
    pub fn check_soundness(&self, hw: &HardwareDescriptor) -> Result<()> {
        let prog = self.program_spec()?;
        let window = hw.utilization_window;
        for (l, level) in self.levels.iter().enumerate() {
            let spec = &hw.levels[l];
            for c in &level.candidates {
                let t = &c.candidate.tile;
                let fp = footprint_bytes(&prog, hw, l, &t.0);
                if fp != c.candidate.footprint_bytes || fp > spec.memory_capacity_bytes {
                    return Err(Error::CorruptBank(format!("level {l} tile {t} breaks its capacity")));
                }
                let staging = l == 0 || prog.layers[l].stages.is_staging();
                if staging && !window.admits(fp, spec.memory_capacity_bytes) {
                    return Err(Error::CorruptBank(format!("level {l} tile {t} is outside the window")));
                }
                if let Some(cap) = spec.max_parallel_binding {
                    if c.candidate.parallel_degree > cap {
                        return Err(Error::CorruptBank(format!(
                            "level {l} tile {t} exceeds the parallel cap"
                        )));
                    }
                }
            }
            if l > 0 {
                let below = &self.levels[l - 1].candidates;
                let map = self.map(l);
                for (c, entries) in level.candidates.iter().zip(&map.0) {
                    if entries.is_empty() {
                        return Err(Error::CorruptBank(format!(
                            "level {l} tile {} has no children",
                            c.candidate.tile
                        )));
                    }
                    let mut seen = HashSet::new();
                    for &e in entries {
                        let child = &below[e].candidate.tile;
                        if !seen.insert(e) || !c.candidate.tile.is_multiple_of(child) {
                            return Err(Error::CorruptBank(format!(
                                "level {l} tile {} does not divide by {child}",
                                c.candidate.tile
                            )));
                        }
                        if let Some(cap) = spec.max_parallel_binding {
                            if pair_parallel_degree(&prog, l - 1, &c.candidate.tile, child) > cap {
                                return Err(Error::CorruptBank("link exceeds the parallel cap".into()));
                            }
                        }
                    }
                    if let Some(b) = c.best_child {
                        if !entries.contains(&b) {
                            return Err(Error::CorruptBank("best child is not a mapped child".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("bank fields serialize")
}

/// Writes the canonical form of `bank` to `path`.
pub fn save_bank(bank: &KernelBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bank.to_canonical_string()).map_err(|e| Error::io(path, e))
}

/// Reads a bank, checks its version and hardware digest against `hw`, and
/// revalidates every invariant.
pub fn load_bank(path: impl AsRef<Path>, hw: &HardwareDescriptor) -> Result<KernelBank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bank = KernelBank::parse(&text)?;
    bank.revalidate(hw)?;
    Ok(bank)
}
