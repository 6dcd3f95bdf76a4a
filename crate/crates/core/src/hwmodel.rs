//! Declarative machine model.
//!
//! A [`HardwareDescriptor`] lists storage/compute levels innermost first.
//! Bandwidths are bytes per cycle of one abstract clock that the analytical
//! model and the simulator share. Capacities are per execution unit.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One level of the hardware hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    /// 0 is the innermost level.
    pub level_index: usize,
    /// Parallel execution units at this level; the denominator of the wave factor.
    pub unit_count: u64,
    /// Capacity of the storage tier owned by one unit of this level.
    pub memory_capacity_bytes: u64,
    /// Bandwidth of loads into this level's storage from the parent level.
    pub load_bandwidth_bytes_per_cycle: u64,
    /// Bandwidth of stores out of this level's storage to the parent level.
    pub store_bandwidth_bytes_per_cycle: u64,
    /// Cap on parallel entities bound inside one tile of this level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_parallel_binding: Option<u64>,
}

/// Granularity and throughput of the base instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsaGranularity {
    /// Minimum level-0 tile multiple per instruction dimension (`m`, `n`, `k`).
    pub dim_multiples: BTreeMap<String, u64>,
    /// Arithmetic operations retired per cycle per unit.
    pub throughput_ops_per_cycle: u64,
}

impl IsaGranularity {
    /// Multiple for an instruction dimension; dimensions without an entry are unconstrained.
    pub fn multiple(&self, dim: &str) -> u64 {
        self.dim_multiples.get(dim).copied().unwrap_or(1)
    }
}

/// Admissible per-level footprint band, as fractions of the level capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilizationWindow {
    pub low_fraction: f64,
    pub high_fraction: f64,
}

impl Default for UtilizationWindow {
    fn default() -> Self {
        Self {
            low_fraction: 0.125,
            high_fraction: 1.0,
        }
    }
}

impl UtilizationWindow {
    /// Whether `bytes` lies inside the band for a tier of `capacity` bytes.
    pub fn admits(&self, bytes: u64, capacity: u64) -> bool {
        let (b, c) = (bytes as f64, capacity as f64);
        b >= self.low_fraction * c && b <= self.high_fraction * c
    }

    /// Largest footprint admitted for a tier of `capacity` bytes.
    pub fn upper_bytes(&self, capacity: u64) -> u64 {
        (self.high_fraction * capacity as f64).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDescriptor {
    pub name: String,
    /// Innermost first.
    pub levels: Vec<LevelSpec>,
    pub isa: IsaGranularity,
    pub element_size_bytes: u64,
    #[serde(default)]
    pub utilization_window: UtilizationWindow,
}

impl HardwareDescriptor {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, index: usize) -> &LevelSpec {
        &self.levels[index]
    }

    /// Checks every descriptor invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("name", "must be non-empty"));
        }
        if self.levels.len() < 2 {
            return Err(Error::invalid(
                "levels",
                format!("need at least 2 levels, got {}", self.levels.len()),
            ));
        }
        for (i, level) in self.levels.iter().enumerate() {
            let field = |f: &str| format!("levels[{i}].{f}");
            if level.level_index != i {
                return Err(Error::invalid(
                    field("level_index"),
                    format!(
                        "expected {i}, got {} (indices must be contiguous from 0)",
                        level.level_index
                    ),
                ));
            }
            if level.unit_count == 0 {
                return Err(Error::invalid(field("unit_count"), "must be >= 1"));
            }
            if level.memory_capacity_bytes == 0 {
                return Err(Error::invalid(field("memory_capacity_bytes"), "must be > 0"));
            }
            if level.load_bandwidth_bytes_per_cycle == 0 {
                return Err(Error::invalid(field("load_bandwidth_bytes_per_cycle"), "must be > 0"));
            }
            if level.store_bandwidth_bytes_per_cycle == 0 {
                return Err(Error::invalid(field("store_bandwidth_bytes_per_cycle"), "must be > 0"));
            }
            if level.max_parallel_binding == Some(0) {
                return Err(Error::invalid(field("max_parallel_binding"), "must be >= 1 when set"));
            }
        }
        for (dim, &multiple) in &self.isa.dim_multiples {
            if dim.is_empty() {
                return Err(Error::invalid("isa.dim_multiples", "dimension names must be non-empty"));
            }
            if multiple == 0 {
                return Err(Error::invalid(format!("isa.dim_multiples.{dim}"), "must be >= 1"));
            }
        }
        if self.isa.throughput_ops_per_cycle == 0 {
            return Err(Error::invalid("isa.throughput_ops_per_cycle", "must be > 0"));
        }
        if self.element_size_bytes == 0 {
            return Err(Error::invalid("element_size_bytes", "must be > 0"));
        }
        let w = self.utilization_window;
        let ok = w.low_fraction.is_finite()
            && w.high_fraction.is_finite()
            && w.low_fraction >= 0.0
            && w.low_fraction < w.high_fraction
            && w.high_fraction <= 1.0;
        if !ok {
            return Err(Error::invalid(
                "utilization_window",
                format!(
                    "need 0 <= low_fraction < high_fraction <= 1, got ({}, {})",
                    w.low_fraction, w.high_fraction
                ),
            ));
        }
        Ok(())
    }

    /// Parses and validates a descriptor from its JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let hw: HardwareDescriptor =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("hardware descriptor: {e}")))?;
        hw.validate()?;
        Ok(hw)
    }

    /// Human-oriented JSON form, as stored in preset files.
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("descriptor serializes");
        s.push('\n');
        s
    }

    /// Compact JSON with fixed field order; the input to [`Self::digest`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }
}

impl fmt::Display for HardwareDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} ({} levels, {}-byte elements, {} ops/cycle)",
            self.name,
            self.depth(),
            self.element_size_bytes,
            self.isa.throughput_ops_per_cycle
        )?;
        for l in &self.levels {
            writeln!(
                f,
                "  L{}: {} units, {} B, load {} B/cy, store {} B/cy{}",
                l.level_index,
                l.unit_count,
                l.memory_capacity_bytes,
                l.load_bandwidth_bytes_per_cycle,
                l.store_bandwidth_bytes_per_cycle,
                l.max_parallel_binding
                    .map(|c| format!(", parallel cap {c}"))
                    .unwrap_or_default()
            )?;
        }
        let dims: Vec<String> = self.isa.dim_multiples.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        write!(f, "  isa multiples {{{}}}", dims.join(", "))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads, parses and validates a descriptor file.
pub fn load_descriptor(path: impl AsRef<Path>) -> Result<HardwareDescriptor> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    HardwareDescriptor::from_json_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A named descriptor together with its default analyzer assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    /// Short lookup key, e.g. `gpu-matrix`.
    pub key: &'static str,
    pub descriptor: HardwareDescriptor,
    /// Levels profiled by the simulator by default; the rest are analytical.
    pub empirical_levels: Vec<usize>,
    pub summary: &'static str,
}

fn level(index: usize, units: u64, capacity: u64, load_bw: u64, store_bw: u64, cap: Option<u64>) -> LevelSpec {
    LevelSpec {
        level_index: index,
        unit_count: units,
        memory_capacity_bytes: capacity,
        load_bandwidth_bytes_per_cycle: load_bw,
        store_bandwidth_bytes_per_cycle: store_bw,
        max_parallel_binding: cap,
    }
}

fn isa(m: u64, n: u64, k: u64, throughput: u64) -> IsaGranularity {
    IsaGranularity {
        dim_multiples: [("m", m), ("n", n), ("k", k)]
            .into_iter()
            .map(|(d, v)| (d.to_string(), v))
            .collect(),
        throughput_ops_per_cycle: throughput,
    }
}

const KIB: u64 = 1024;
const MIB: u64 = 1024 * KIB;
const GIB: u64 = 1024 * MIB;

/// 48-core server CPU: vector registers, private L2, shared memory system.
fn cpu_like() -> Preset {
    Preset {
        key: "cpu",
        descriptor: HardwareDescriptor {
            name: "cpu-like".into(),
            levels: vec![
                level(0, 48, 2 * KIB, 128, 64, None),
                level(1, 48, MIB, 16, 16, None),
                level(2, 48, 269_004_539_166, 32, 32, None),
            ],
            isa: isa(1, 16, 1, 64),
            element_size_bytes: 4,
            utilization_window: UtilizationWindow::default(),
        },
        empirical_levels: vec![0],
        summary: "48 cores, 2 KiB registers and 1 MiB L2 per core, 16-lane fp32 FMA",
    }
}

/// 108-SM GPU with fp16 matrix units (m16n8k16 base instruction).
fn gpu_matrix_like() -> Preset {
    Preset {
        key: "gpu-matrix",
        descriptor: HardwareDescriptor {
            name: "gpu-matrix-like".into(),
            levels: vec![
                level(0, 4, 64 * KIB, 32, 32, None),
                level(1, 108, 48 * KIB, 10, 10, Some(32)),
                level(2, 108, 40 * GIB, 10, 10, None),
            ],
            isa: isa(16, 8, 16, 512),
            element_size_bytes: 2,
            utilization_window: UtilizationWindow::default(),
        },
        empirical_levels: vec![0, 1],
        summary: "108 SMs, 48 KiB shared memory per SM, fp16 matrix instruction m16n8k16",
    }
}

/// Same GPU using scalar fp32 cores.
fn gpu_vector_like() -> Preset {
    Preset {
        key: "gpu-vector",
        descriptor: HardwareDescriptor {
            name: "gpu-vector-like".into(),
            levels: vec![
                level(0, 4, 64 * KIB, 32, 32, None),
                level(1, 108, 48 * KIB, 10, 10, Some(32)),
                level(2, 108, 40 * GIB, 10, 10, None),
            ],
            isa: isa(1, 1, 1, 32),
            element_size_bytes: 4,
            utilization_window: UtilizationWindow::default(),
        },
        empirical_levels: vec![0, 1],
        summary: "108 SMs, 48 KiB shared memory per SM, scalar fp32 cores",
    }
}

/// Coarse-grained, high-throughput synthetic backend.
fn synthetic_coarse() -> Preset {
    Preset {
        key: "synthetic-a",
        descriptor: HardwareDescriptor {
            name: "synthetic-a".into(),
            levels: vec![
                level(0, 1, 4 * KIB, 64, 64, None),
                level(1, 4, 16 * KIB, 16, 16, None),
                level(2, 4, GIB, 16, 16, None),
            ],
            isa: isa(16, 8, 16, 256),
            element_size_bytes: 2,
            utilization_window: UtilizationWindow::default(),
        },
        empirical_levels: vec![0],
        summary: "synthetic: ISA multiples 16/8/16, 256 ops/cycle",
    }
}

/// Fine-grained, low-throughput synthetic backend.
fn synthetic_fine() -> Preset {
    Preset {
        key: "synthetic-b",
        descriptor: HardwareDescriptor {
            name: "synthetic-b".into(),
            levels: vec![
                level(0, 1, 4 * KIB, 64, 64, None),
                level(1, 4, 16 * KIB, 16, 16, None),
                level(2, 4, GIB, 16, 16, None),
            ],
            isa: isa(1, 1, 1, 64),
            element_size_bytes: 2,
            utilization_window: UtilizationWindow::default(),
        },
        empirical_levels: vec![0],
        summary: "synthetic: ISA multiples 1/1/1, 64 ops/cycle",
    }
}

/// The built-in hardware presets: cpu-like, gpu-vector-like, gpu-matrix-like.
pub fn presets() -> Vec<Preset> {
    vec![cpu_like(), gpu_vector_like(), gpu_matrix_like()]
}

/// The two backends used to exhibit adaptive selection: coarse (A) then fine (B).
pub fn synthetic_backends() -> Vec<Preset> {
    vec![synthetic_coarse(), synthetic_fine()]
}

/// Descriptors of [`presets`].
pub fn builtin_presets() -> Vec<HardwareDescriptor> {
    presets().into_iter().map(|p| p.descriptor).collect()
}

/// Looks up a preset or synthetic backend by key or descriptor name.
pub fn find_preset(name: &str) -> Option<Preset> {
    presets()
        .into_iter()
        .chain(synthetic_backends())
        .find(|p| p.key == name || p.descriptor.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parameters() {
        let gpu = find_preset("gpu-matrix").unwrap().descriptor;
        assert_eq!(gpu.levels[1].unit_count, 108);
        assert_eq!(gpu.levels[1].memory_capacity_bytes, 49152);
        assert_eq!(gpu.isa.multiple("m"), 16);
        assert_eq!(gpu.isa.multiple("n"), 8);
        assert_eq!(gpu.isa.multiple("k"), 16);
        let cpu = find_preset("cpu-like").unwrap().descriptor;
        assert_eq!(cpu.depth(), 3);
        assert_eq!(cpu.levels[2].unit_count, 48);
        assert_eq!(cpu.levels[0].memory_capacity_bytes, 2048);
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for hw in builtin_presets()
            .into_iter()
            .chain(synthetic_backends().into_iter().map(|p| p.descriptor))
        {
            hw.validate().unwrap();
            let back = HardwareDescriptor::from_json_str(&hw.to_json_pretty()).unwrap();
            assert_eq!(back, hw);
            assert_eq!(back.digest(), hw.digest());
        }
    }

    #[test]
    fn high_fraction_above_one_names_the_window() {
        let mut hw = builtin_presets().remove(0);
        hw.utilization_window.high_fraction = 1.2;
        let err = HardwareDescriptor::from_json_str(&hw.to_json_pretty()).unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "utilization_window"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let hw = builtin_presets().remove(0);
        let mut value: serde_json::Value = serde_json::from_str(&hw.to_json_pretty()).unwrap();
        value["levels"][0]["clock_ghz"] = serde_json::json!(2);
        let err = HardwareDescriptor::from_json_str(&value.to_string()).unwrap_err();
        assert!(matches!(err, Error::Parse(msg) if msg.contains("clock_ghz")));
    }

    #[test]
    fn non_contiguous_levels_are_rejected() {
        let mut hw = builtin_presets().remove(1);
        hw.levels[2].level_index = 5;
        let err = hw.validate().unwrap_err();
        assert!(matches!(&err, Error::Validation { field, .. } if field == "levels[2].level_index"));
    }

    #[test]
    fn window_bounds() {
        let w = UtilizationWindow::default();
        assert!(w.admits(128, 1024));
        assert!(!w.admits(127, 1024));
        assert!(w.admits(1024, 1024));
        assert!(!w.admits(1025, 1024));
        assert_eq!(w.upper_bytes(49152), 49152);
    }
}
