//! Runtime planning: pick the cheapest top-level candidate for a concrete
//! shape, pad the shape to its tile, and derive the launch geometry.
//!
//! Lower levels reuse each top candidate's offline best-child chain, so
//! selection costs one closed-form evaluation per top candidate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bank::KernelBank;
use crate::candgen::{footprint_bytes, BuildConfig, TileShape};
use crate::cost::{
    base_compute_cycles, check_chain, padded_shape, parallel_factor, t_load, t_store, temporal_cost, CostSource,
    Evaluator,
};
use crate::error::{Error, Result};
use crate::hwmodel::HardwareDescriptor;
use crate::program::{AnalyzerKind, ExtentKind, LoopClass, TensorProgramSpec};

pub const PLAN_FORMAT_VERSION: u64 = 1;

/// Concrete per-axis extents, ordered like the program's axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuntimeShape(pub Vec<u64>);

impl RuntimeShape {
    /// Parses `key=value` pairs separated by commas, one per program axis.
    pub fn parse(text: &str, prog: &TensorProgramSpec) -> Result<Self> {
        let mut values: Vec<Option<u64>> = vec![None; prog.axes.len()];
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("shape entry '{part}' is not key=value")))?;
            let axis = prog.axis_index(key.trim()).ok_or_else(|| {
                Error::Parse(format!(
                    "unknown axis '{}' (expected {})",
                    key.trim(),
                    prog.axis_names().join(", ")
                ))
            })?;
            let v: u64 = value.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "extent '{}' of axis '{}' is not an integer",
                    value.trim(),
                    key.trim()
                ))
            })?;
            if values[axis].replace(v).is_some() {
                return Err(Error::Parse(format!("axis '{}' given twice", key.trim())));
            }
        }
        let missing: Vec<&str> = prog
            .axes
            .iter()
            .zip(&values)
            .filter(|(_, v)| v.is_none())
            .map(|(a, _)| a.name.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Parse(format!("shape is missing axes: {}", missing.join(", "))));
        }
        let shape = RuntimeShape(values.into_iter().map(Option::unwrap).collect());
        shape.validate(prog)?;
        Ok(shape)
    }

    pub fn validate(&self, prog: &TensorProgramSpec) -> Result<()> {
        if self.0.len() != prog.axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape has {} extents, program '{}' has {} axes",
                self.0.len(),
                prog.id(),
                prog.axes.len()
            )));
        }
        for (axis, &v) in prog.axes.iter().zip(&self.0) {
            if v == 0 {
                return Err(Error::ShapeMismatch(format!("axis '{}' has extent 0", axis.name)));
            }
            if let ExtentKind::Static(e) = axis.extent_kind {
                if v != e {
                    return Err(Error::ShapeMismatch(format!(
                        "static axis '{}' is {e}, got {v}",
                        axis.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn format(&self, prog: &TensorProgramSpec) -> String {
        prog.axes
            .iter()
            .zip(&self.0)
            .map(|(a, v)| format!("{}={v}", a.name))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanLevel {
    pub level: usize,
    /// Index of the candidate in the bank level.
    pub index: usize,
    pub tile: TileShape,
}

/// Per-PL-axis tile counts of one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchLevel {
    pub level: usize,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePlan {
    pub version: u64,
    pub backend: String,
    pub hardware_digest: String,
    pub program: String,
    pub analyzers: Vec<AnalyzerKind>,
    pub build_config: BuildConfig,
    pub axes: Vec<String>,
    pub shape: RuntimeShape,
    /// Top to bottom.
    pub chain: Vec<PlanLevel>,
    pub padded_shape: Vec<u64>,
    pub launch_geometry: Vec<LaunchLevel>,
    pub padding_waste: f64,
    pub predicted_cost_cycles: u64,
}

impl SchedulePlan {
    /// Chain tiles, innermost first.
    pub fn chain_bottom_up(&self) -> Vec<TileShape> {
        self.chain.iter().rev().map(|c| c.tile.clone()).collect()
    }

    pub fn top_tile(&self) -> &TileShape {
        &self.chain[0].tile
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: SchedulePlan = serde_json::from_str(text).map_err(|e| Error::Parse(format!("plan: {e}")))?;
        if plan.version != PLAN_FORMAT_VERSION {
            return Err(Error::InvalidPlan(format!(
                "unsupported plan format version {} (expected {PLAN_FORMAT_VERSION})",
                plan.version
            )));
        }
        Ok(plan)
    }

    /// The program this plan was selected for, with the bank's analyzers.
    pub fn program_spec(&self) -> Result<TensorProgramSpec> {
        let kind = crate::program::OperatorKind::from_id(&self.program)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown program '{}'", self.program)))?;
        if self.analyzers.len() < 2 {
            return Err(Error::InvalidPlan("plan needs at least two levels".into()));
        }
        Ok(kind.program(self.analyzers.len()).with_analyzers(&self.analyzers))
    }
}

impl fmt::Display for SchedulePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backend: {}", self.backend)?;
        let named = |v: &[u64]| -> String {
            self.axes
                .iter()
                .zip(v)
                .map(|(a, x)| format!("{a}={x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(f, "shape: {}", named(&self.shape.0))?;
        for c in &self.chain {
            writeln!(f, "L{} tile: {} (candidate {})", c.level, named(&c.tile.0), c.index)?;
        }
        writeln!(f, "padded shape: {}", named(&self.padded_shape))?;
        for g in &self.launch_geometry {
            let counts: Vec<String> = g.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "launch L{}: {}", g.level, counts.join(","))?;
        }
        writeln!(f, "padding waste: {:.6}", self.padding_waste)?;
        write!(f, "predicted cycles: {}", self.predicted_cost_cycles)
    }
}

/// Reads and parses a plan file (no semantic validation).
pub fn load_plan(path: impl AsRef<Path>) -> Result<SchedulePlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SchedulePlan::from_json(&text)
}

pub fn save_plan(plan: &SchedulePlan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, plan.to_json()).map_err(|e| Error::io(path, e))
}

/// `1 − true volume / padded volume`.
pub fn padding_waste(shape: &[u64], padded: &[u64]) -> f64 {
    let true_volume: f64 = shape.iter().map(|&v| v as f64).product();
    let padded_volume: f64 = padded.iter().map(|&v| v as f64).product();
    1.0 - true_volume / padded_volume
}

/// Launch geometry of a bottom-up chain over `padded`.
pub fn launch_geometry(prog: &TensorProgramSpec, chain: &[TileShape], padded: &[u64]) -> Vec<LaunchLevel> {
    let top = chain.len() - 1;
    (0..=top)
        .rev()
        .filter_map(|l| {
            let region: &[u64] = if l == top { padded } else { &chain[l + 1].0 };
            let counts: BTreeMap<String, u64> = prog
                .classes(l)
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == LoopClass::PL)
                .map(|(a, _)| (prog.axes[a].name.clone(), region[a] / chain[l].0[a]))
                .collect();
            (!counts.is_empty()).then_some(LaunchLevel { level: l, counts })
        })
        .collect()
}

/// Precomputed top-level loop structure for fast per-candidate evaluation.
struct TopModel<'a> {
    hw: &'a HardwareDescriptor,
    level: usize,
    classes: Vec<LoopClass>,
    load_dims: Vec<&'a crate::program::OperandSpec>,
    store_dims: Vec<&'a crate::program::OperandSpec>,
}

/// Runtime cost of one top candidate on one shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopChoice {
    pub index: usize,
    pub cost: u64,
    pub padded_volume: u64,
    pub parallel_extent: u64,
}

impl<'a> TopModel<'a> {
    fn new(prog: &'a TensorProgramSpec, hw: &'a HardwareDescriptor) -> Self {
        let level = prog.top_level();
        let stages = &prog.layers[level].stages;
        TopModel {
            hw,
            level,
            classes: prog.classes(level),
            load_dims: stages.load.iter().map(|&o| &prog.operands[o]).collect(),
            store_dims: stages.store.iter().map(|&o| &prog.operands[o]).collect(),
        }
    }

    fn evaluate(&self, index: usize, shape: &[u64], tile: &[u64], inner: u64) -> TopChoice {
        let (mut par, mut spatial, mut reduction, mut volume) = (1u64, 1u64, 1u64, 1u64);
        for ((&s, &t), class) in shape.iter().zip(tile).zip(&self.classes) {
            let trips = s.div_ceil(t);
            volume *= trips * t;
            match class {
                LoopClass::PL => par *= trips,
                LoopClass::TSL => spatial *= trips,
                LoopClass::TRL => reduction *= trips,
            }
        }
        let elem = self.hw.element_size_bytes;
        let spec = &self.hw.levels[self.level];
        let load_bytes: u64 = self.load_dims.iter().map(|o| o.elements(tile)).sum::<u64>() * elem;
        let store_bytes: u64 = spatial * self.store_dims.iter().map(|o| o.elements(tile)).sum::<u64>() * elem;
        let temporal = temporal_cost(
            t_load(spec, load_bytes),
            spatial * reduction,
            inner,
            t_store(spec, store_bytes),
        );
        TopChoice {
            index,
            cost: parallel_factor(par, spec.unit_count) * temporal,
            padded_volume: volume,
            parallel_extent: par,
        }
    }
}

fn check_bank(bank: &KernelBank, hw: &HardwareDescriptor, prog: &TensorProgramSpec) -> Result<()> {
    if bank.hardware_digest != hw.digest() {
        return Err(Error::DigestMismatch {
            bank: bank.hardware_digest.clone(),
            hardware: hw.digest(),
        });
    }
    if bank.program != prog.id() || bank.depth() != prog.depth() {
        return Err(Error::Binding(format!(
            "bank for '{}' with {} levels cannot plan '{}' with {} levels",
            bank.program,
            bank.depth(),
            prog.id(),
            prog.depth()
        )));
    }
    if bank.top().is_empty() {
        return Err(Error::EmptyBank("top level has no candidates".into()));
    }
    Ok(())
}

/// Runtime cost of every admissible top candidate, in bank order.
pub fn top_choices(
    bank: &KernelBank,
    shape: &RuntimeShape,
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
) -> Result<Vec<TopChoice>> {
    check_bank(bank, hw, prog)?;
    shape.validate(prog)?;
    let model = TopModel::new(prog, hw);
    let cap = hw.levels[prog.top_level()].max_parallel_binding;
    Ok(bank
        .top()
        .iter()
        .enumerate()
        .map(|(i, c)| model.evaluate(i, &shape.0, &c.candidate.tile.0, c.cost.inner_cost_cycles))
        .filter(|c| cap.map_or(true, |cap| c.parallel_extent <= cap))
        .collect())
}

/// Cheapest top candidate; ties go to less padding, then the smaller tile.
pub fn select(
    bank: &KernelBank,
    shape: &RuntimeShape,
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
) -> Result<SchedulePlan> {
    let choices = top_choices(bank, shape, hw, prog)?;
    // Candidates are sorted by tile, so the first minimum wins the final tie-break.
    let best = choices
        .iter()
        .min_by_key(|c| (c.cost, c.padded_volume))
        .ok_or_else(|| Error::EmptyBank("no top candidate respects the parallel cap".into()))?;
    plan_for(bank, shape, hw, prog, best.index, best.cost)
}

/// [`select`] plus its wall-clock time.
pub fn select_timed(
    bank: &KernelBank,
    shape: &RuntimeShape,
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
) -> Result<(SchedulePlan, Duration)> {
    let start = Instant::now();
    let plan = select(bank, shape, hw, prog)?;
    Ok((plan, start.elapsed()))
}

fn plan_for(
    bank: &KernelBank,
    shape: &RuntimeShape,
    hw: &HardwareDescriptor,
    prog: &TensorProgramSpec,
    top_index: usize,
    cost: u64,
) -> Result<SchedulePlan> {
    let chain = bank.chain_from_top(top_index);
    let tiles: Vec<TileShape> = chain.iter().map(|(_, t)| t.clone()).collect();
    let padded = padded_shape(&shape.0, &tiles[tiles.len() - 1].0);
    Ok(SchedulePlan {
        version: PLAN_FORMAT_VERSION,
        backend: hw.name.clone(),
        hardware_digest: hw.digest(),
        program: prog.id().to_string(),
        analyzers: bank.analyzers.clone(),
        build_config: bank.build_config,
        axes: prog.axes.iter().map(|a| a.name.clone()).collect(),
        shape: shape.clone(),
        chain: chain
            .into_iter()
            .enumerate()
            .rev()
            .map(|(level, (index, tile))| PlanLevel { level, index, tile })
            .collect(),
        launch_geometry: launch_geometry(prog, &tiles, &padded),
        padding_waste: padding_waste(&shape.0, &padded),
        padded_shape: padded,
        predicted_cost_cycles: cost,
    })
}

/// One hardware backend for adaptive selection.
#[derive(Debug, Clone, Copy)]
pub struct Backend<'a> {
    pub hw: &'a HardwareDescriptor,
    pub bank: &'a KernelBank,
    pub prog: &'a TensorProgramSpec,
}

/// Selects on every backend and keeps the cheapest plan; ties go to the
/// earliest backend.
pub fn select_adaptive(backends: &[Backend<'_>], shape: &RuntimeShape) -> Result<SchedulePlan> {
    let mut best: Option<SchedulePlan> = None;
    for b in backends {
        let plan = select(b.bank, shape, b.hw, b.prog)?;
        if best
            .as_ref()
            .map_or(true, |p| plan.predicted_cost_cycles < p.predicted_cost_cycles)
        {
            best = Some(plan);
        }
    }
    best.ok_or_else(|| Error::EmptyBank("adaptive selection needs at least one backend".into()))
}

/// Checks a plan against `hw` and recomputes every derived field.
pub fn validate_plan(plan: &SchedulePlan, hw: &HardwareDescriptor) -> Result<TensorProgramSpec> {
    let invalid = |msg: String| Err(Error::InvalidPlan(msg));
    if plan.hardware_digest != hw.digest() {
        return Err(Error::DigestMismatch {
            bank: plan.hardware_digest.clone(),
            hardware: hw.digest(),
        });
    }
    if plan.backend != hw.name {
        return invalid(format!("plan backend '{}' is not '{}'", plan.backend, hw.name));
    }
    let prog = plan.program_spec()?;
    crate::program::validate_binding(&prog, hw).map_err(|e| Error::InvalidPlan(e.to_string()))?;
    if plan.axes != prog.axis_names() {
        return invalid("axis names do not match the program".into());
    }
    plan.shape.validate(&prog)?;
    if plan.chain.len() != prog.depth() {
        return invalid(format!(
            "chain has {} levels, expected {}",
            plan.chain.len(),
            prog.depth()
        ));
    }
    for (i, c) in plan.chain.iter().enumerate() {
        if c.level != prog.top_level() - i {
            return invalid("chain levels must run from the top down".into());
        }
    }
    let chain = plan.chain_bottom_up();
    check_chain(&prog, &chain).map_err(|e| Error::InvalidPlan(e.to_string()))?;
    for (l, t) in chain.iter().enumerate() {
        let fp = footprint_bytes(&prog, hw, l, &t.0);
        if fp > hw.levels[l].memory_capacity_bytes {
            return invalid(format!("level {l} tile {t} needs {fp} bytes"));
        }
    }
    let padded = padded_shape(&plan.shape.0, &chain[chain.len() - 1].0);
    if padded != plan.padded_shape {
        return invalid("padded shape does not match the ceiling formula".into());
    }
    if padding_waste(&plan.shape.0, &padded) != plan.padding_waste {
        return invalid("padding waste does not match the padded shape".into());
    }
    if launch_geometry(&prog, &chain, &padded) != plan.launch_geometry {
        return invalid("launch geometry does not match the chain".into());
    }
    let costs = Evaluator::hybrid(&prog, hw, plan.build_config.sim)
        .runtime()
        .chain_costs(&chain, &padded)?;
    if costs.last().map(|c| c.total_cycles) != Some(plan.predicted_cost_cycles) {
        return invalid("predicted cost does not match the chain".into());
    }
    Ok(prog)
}

/// One level row of a cost breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelBreakdown {
    pub level: usize,
    pub region: Vec<u64>,
    pub tile: TileShape,
    pub parallel_extent: u64,
    pub serial_trips: u64,
    pub t_load_cycles: u64,
    pub t_store_cycles: u64,
    pub inner_cost_cycles: u64,
    pub temporal_cycles: u64,
    pub f_parallel: u64,
    pub total_cycles: u64,
    pub source: CostSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub backend: String,
    /// Top to bottom.
    pub levels: Vec<LevelBreakdown>,
    /// Base-instruction cycles of one level-0 tile.
    pub base_compute_cycles: u64,
    pub padding_waste: f64,
    pub predicted_cost_cycles: u64,
    pub selection_time_us: f64,
}

impl CostBreakdown {
    /// The top row's total, which equals the plan's prediction.
    pub fn total_cycles(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.total_cycles)
    }
}

impl fmt::Display for CostBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>10} {:>8} {:>8} {:>8} {:>12} {:>12} {:>6} {:>12} {:>10}",
            "level", "par", "trips", "load", "store", "inner", "temporal", "waves", "total", "source"
        )?;
        for l in &self.levels {
            writeln!(
                f,
                "{:>5} {:>10} {:>8} {:>8} {:>8} {:>12} {:>12} {:>6} {:>12} {:>10}",
                format!("L{}", l.level),
                l.parallel_extent,
                l.serial_trips,
                l.t_load_cycles,
                l.t_store_cycles,
                l.inner_cost_cycles,
                l.temporal_cycles,
                l.f_parallel,
                l.total_cycles,
                match l.source {
                    CostSource::Analytical => "analytical",
                    CostSource::Empirical => "empirical",
                }
            )?;
        }
        writeln!(f, "base compute per L0 tile: {} cycles", self.base_compute_cycles)?;
        writeln!(f, "padding waste: {:.6}", self.padding_waste)?;
        writeln!(f, "predicted cycles: {}", self.predicted_cost_cycles)?;
        write!(f, "selection time: {:.1} us", self.selection_time_us)
    }
}

/// Per-level cost rows of a plan; the top row's total is the prediction.
pub fn plan_cost_breakdown(
    plan: &SchedulePlan,
    hw: &HardwareDescriptor,
    selection_time: Duration,
) -> Result<CostBreakdown> {
    let prog = plan.program_spec()?;
    let chain = plan.chain_bottom_up();
    check_chain(&prog, &chain)?;
    let costs = Evaluator::hybrid(&prog, hw, plan.build_config.sim)
        .runtime()
        .chain_costs(&chain, &plan.padded_shape)?;
    let top = chain.len() - 1;
    let levels = costs
        .iter()
        .enumerate()
        .rev()
        .map(|(l, c)| {
            let region = if l == top {
                plan.padded_shape.clone()
            } else {
                chain[l + 1].0.clone()
            };
            let trips: Vec<u64> = region.iter().zip(&chain[l].0).map(|(r, t)| r / t).collect();
            let classes = prog.classes(l);
            let product = |want: &[LoopClass]| -> u64 {
                trips
                    .iter()
                    .zip(&classes)
                    .filter(|(_, c)| want.contains(c))
                    .map(|(t, _)| t)
                    .product()
            };
            LevelBreakdown {
                level: l,
                parallel_extent: product(&[LoopClass::PL]),
                serial_trips: product(&[LoopClass::TSL, LoopClass::TRL]),
                region,
                tile: chain[l].clone(),
                t_load_cycles: c.t_load_cycles,
                t_store_cycles: c.t_store_cycles,
                inner_cost_cycles: c.inner_cost_cycles,
                temporal_cycles: c.temporal_cycles,
                f_parallel: c.f_parallel,
                total_cycles: c.total_cycles,
                source: c.source,
            }
        })
        .collect();
    Ok(CostBreakdown {
        backend: plan.backend.clone(),
        levels,
        base_compute_cycles: base_compute_cycles(&prog, hw, &chain[0].0),
        padding_waste: plan.padding_waste,
        predicted_cost_cycles: plan.predicted_cost_cycles,
        selection_time_us: selection_time.as_secs_f64() * 1e6,
    })
}
