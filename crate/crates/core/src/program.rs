//! Tensor-program IR: iteration space, operand footprint rules, and per-level
//! loop classification plus load/compute/store stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::HardwareDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Gemm,
    Conv2d,
}

impl OperatorKind {
    pub fn id(self) -> &'static str {
        match self {
            OperatorKind::Gemm => "gemm",
            OperatorKind::Conv2d => "conv2d",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "gemm" => Some(OperatorKind::Gemm),
            "conv2d" => Some(OperatorKind::Conv2d),
            _ => None,
        }
    }

    /// Builds the built-in program for this operator.
    pub fn program(self, levels: usize) -> TensorProgramSpec {
        match self {
            OperatorKind::Gemm => gemm_program(levels),
            OperatorKind::Conv2d => conv2d_program(levels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtentKind {
    Static(u64),
    Dynamic,
}

/// How the candidate generator may tile an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TilePolicy {
    /// Lattice of ISA multiples times 2^i and 3·2^i.
    Lattice,
    /// Always tile 1; the axis is iterated entirely by the top-level loop.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopAxis {
    pub name: String,
    pub extent_kind: ExtentKind,
    /// Reduction axes may only be classified TRL.
    pub reduction: bool,
    /// Base-instruction dimension this axis is aligned to, if any.
    pub isa_dim: Option<String>,
    pub tile_policy: TilePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LoopClass {
    /// Parallel.
    PL,
    /// Temporal spatial.
    TSL,
    /// Temporal reduction.
    TRL,
}

impl fmt::Display for LoopClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopClass::PL => "PL",
            LoopClass::TSL => "TSL",
            LoopClass::TRL => "TRL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandRole {
    Input,
    Output,
}

/// One dimension of an operand, as a function of the iteration point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandDim {
    /// Indexed directly by an axis.
    Axis(usize),
    /// Sliding window: indexed by `output + kernel`, extent `t_out + t_kernel - 1`.
    Window { output: usize, kernel: usize },
}

impl OperandDim {
    pub fn extent(&self, tile: &[u64]) -> u64 {
        match *self {
            OperandDim::Axis(a) => tile[a],
            OperandDim::Window { output, kernel } => tile[output] + tile[kernel] - 1,
        }
    }

    pub fn origin(&self, point: &[u64]) -> u64 {
        match *self {
            OperandDim::Axis(a) => point[a],
            OperandDim::Window { output, kernel } => point[output] + point[kernel],
        }
    }

    fn axes(&self) -> Vec<usize> {
        match *self {
            OperandDim::Axis(a) => vec![a],
            OperandDim::Window { output, kernel } => vec![output, kernel],
        }
    }
}

/// An operand tensor and its footprint rule (row-major over `dims`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandSpec {
    pub name: String,
    pub role: OperandRole,
    pub dims: Vec<OperandDim>,
}

impl OperandSpec {
    pub fn extents(&self, tile: &[u64]) -> Vec<u64> {
        self.dims.iter().map(|d| d.extent(tile)).collect()
    }

    /// Element count of the operand region touched by `tile`.
    pub fn elements(&self, tile: &[u64]) -> u64 {
        self.dims.iter().map(|d| d.extent(tile)).product()
    }

    pub fn origin(&self, point: &[u64]) -> Vec<u64> {
        self.dims.iter().map(|d| d.origin(point)).collect()
    }

    pub fn uses_axis(&self, axis: usize) -> bool {
        self.dims.iter().any(|d| d.axes().contains(&axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerKind {
    Empirical,
    Analytical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComputeAction {
    /// Defer to the lower level.
    None,
    /// Execute the base instruction (level 0 only).
    BaseInstruction,
}

/// Load, lower-rKernel and store stages of one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDescriptor {
    /// Operands copied into this level's buffer on every iteration.
    pub load: BTreeSet<usize>,
    /// Operands accumulated out of this level's buffer after each reduction sweep.
    pub store: BTreeSet<usize>,
    pub compute: ComputeAction,
}

impl StageDescriptor {
    pub fn none() -> Self {
        Self {
            load: BTreeSet::new(),
            store: BTreeSet::new(),
            compute: ComputeAction::None,
        }
    }

    pub fn is_staging(&self) -> bool {
        !self.load.is_empty() || !self.store.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMetaInfo {
    pub layer_depth: usize,
    pub loop_class_map: BTreeMap<String, LoopClass>,
    pub analyzer_kind: AnalyzerKind,
    pub stages: StageDescriptor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorProgramSpec {
    pub operator_kind: OperatorKind,
    pub axes: Vec<LoopAxis>,
    /// Exactly two inputs followed by one output.
    pub operands: Vec<OperandSpec>,
    /// One entry per hardware level, innermost first.
    pub layers: Vec<LayerMetaInfo>,
}

/// Multiply and add per iteration point.
pub const OPS_PER_POINT: u64 = 2;

impl TensorProgramSpec {
    pub fn id(&self) -> &'static str {
        self.operator_kind.id()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn top_level(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    /// Loop class of every axis at `level`, in axis order.
    ///
    /// Panics if an axis is missing from the layer map; [`Self::validate`] rules that out.
    pub fn classes(&self, level: usize) -> Vec<LoopClass> {
        let map = &self.layers[level].loop_class_map;
        self.axes.iter().map(|a| map[&a.name]).collect()
    }

    pub fn inputs(&self) -> Vec<usize> {
        self.operand_indices(OperandRole::Input)
    }

    pub fn outputs(&self) -> Vec<usize> {
        self.operand_indices(OperandRole::Output)
    }

    fn operand_indices(&self, role: OperandRole) -> Vec<usize> {
        self.operands
            .iter()
            .enumerate()
            .filter(|(_, o)| o.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Arithmetic operations in one tile.
    pub fn ops(&self, tile: &[u64]) -> u64 {
        OPS_PER_POINT * tile.iter().product::<u64>()
    }

    /// Replaces the analyzer assignment: `empirical` levels use the simulator.
    pub fn with_empirical_levels(mut self, empirical: &[usize]) -> Self {
        for layer in &mut self.layers {
            layer.analyzer_kind = if empirical.contains(&layer.layer_depth) {
                AnalyzerKind::Empirical
            } else {
                AnalyzerKind::Analytical
            };
        }
        self
    }

    pub fn with_analyzers(mut self, analyzers: &[AnalyzerKind]) -> Self {
        for (layer, &kind) in self.layers.iter_mut().zip(analyzers) {
            layer.analyzer_kind = kind;
        }
        self
    }

    pub fn analyzers(&self) -> Vec<AnalyzerKind> {
        self.layers.iter().map(|l| l.analyzer_kind).collect()
    }

    /// Structural checks that do not depend on hardware.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for axis in &self.axes {
            if !names.insert(axis.name.as_str()) {
                return Err(Error::Binding(format!("duplicate axis name '{}'", axis.name)));
            }
            if let ExtentKind::Static(0) = axis.extent_kind {
                return Err(Error::Binding(format!("static axis '{}' has extent 0", axis.name)));
            }
        }
        if self.inputs().len() != 2 || self.outputs().len() != 1 {
            return Err(Error::Binding(
                "program needs exactly two input operands and one output operand".into(),
            ));
        }
        for (a, axis) in self.axes.iter().enumerate() {
            if !self.operands.iter().any(|o| o.uses_axis(a)) {
                return Err(Error::Binding(format!("axis '{}' indexes no operand", axis.name)));
            }
        }
        if self.layers.len() < 2 {
            return Err(Error::Binding("program needs at least 2 layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.layer_depth != l {
                return Err(Error::Binding(format!(
                    "layer {l} records layer_depth {}",
                    layer.layer_depth
                )));
            }
            for axis in &self.axes {
                match layer.loop_class_map.get(&axis.name) {
                    None => {
                        return Err(Error::Binding(format!(
                            "axis '{}' missing from the loop map of layer {l}",
                            axis.name
                        )))
                    }
                    Some(class) if axis.reduction && *class != LoopClass::TRL => {
                        return Err(Error::Binding(format!(
                            "reduction axis '{}' classified {class} at layer {l}; only TRL is legal",
                            axis.name
                        )))
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = layer.loop_class_map.keys().find(|k| self.axis_index(k).is_none()) {
                return Err(Error::Binding(format!("layer {l} classifies unknown axis '{extra}'")));
            }
            let stages = &layer.stages;
            match (l, stages.compute) {
                (0, ComputeAction::None) => {
                    return Err(Error::Binding("layer 0 must execute the base instruction".into()))
                }
                (l, ComputeAction::BaseInstruction) if l > 0 => {
                    return Err(Error::Binding(format!(
                        "compute stage at layer {l}; only layer 0 may execute the base instruction"
                    )))
                }
                _ => {}
            }
            if stages.load.is_empty() && !stages.store.is_empty() {
                return Err(Error::Binding(format!(
                    "layer {l} stores without loading; load and store stages are paired"
                )));
            }
            for &op in stages.load.iter().chain(&stages.store) {
                if op >= self.operands.len() {
                    return Err(Error::Binding(format!("layer {l} stages unknown operand {op}")));
                }
            }
            if stages.load.iter().any(|&o| self.operands[o].role != OperandRole::Input) {
                return Err(Error::Binding(format!("layer {l} loads an output operand")));
            }
            if stages
                .store
                .iter()
                .any(|&o| self.operands[o].role != OperandRole::Output)
            {
                return Err(Error::Binding(format!("layer {l} stores an input operand")));
            }
        }
        if !self.layers[0].stages.is_staging() {
            return Err(Error::Binding("layer 0 must stage its operands".into()));
        }
        Ok(())
    }
}

/// Checks that `prog` can be bound to `hw`.
pub fn validate_binding(prog: &TensorProgramSpec, hw: &HardwareDescriptor) -> Result<()> {
    prog.validate()?;
    if prog.depth() != hw.depth() {
        return Err(Error::Binding(format!(
            "arity mismatch: program has {} layers, hardware '{}' has {} levels",
            prog.depth(),
            hw.name,
            hw.depth()
        )));
    }
    for axis in &prog.axes {
        if let Some(dim) = &axis.isa_dim {
            if !hw.isa.dim_multiples.contains_key(dim) {
                return Err(Error::Binding(format!(
                    "axis '{}' aligns to instruction dimension '{dim}', which isa.dim_multiples of '{}' does not list",
                    axis.name, hw.name
                )));
            }
        }
    }
    Ok(())
}

fn classes(entries: &[(&str, LoopClass)]) -> BTreeMap<String, LoopClass> {
    entries.iter().map(|(n, c)| (n.to_string(), *c)).collect()
}

fn layers_for(
    levels: usize,
    spatial: &[&str],
    reduction: &[&str],
    inputs: &[usize],
    output: usize,
) -> Vec<LayerMetaInfo> {
    (0..levels)
        .map(|l| {
            let top = l == levels - 1;
            let spatial_class = if top { LoopClass::PL } else { LoopClass::TSL };
            let map: Vec<(&str, LoopClass)> = spatial
                .iter()
                .map(|&a| (a, spatial_class))
                .chain(reduction.iter().map(|&a| (a, LoopClass::TRL)))
                .collect();
            let stages = if top {
                StageDescriptor::none()
            } else if l == 0 {
                StageDescriptor {
                    load: inputs.iter().copied().collect(),
                    store: [output].into_iter().collect(),
                    compute: ComputeAction::BaseInstruction,
                }
            } else {
                StageDescriptor {
                    load: inputs.iter().copied().collect(),
                    store: BTreeSet::new(),
                    compute: ComputeAction::None,
                }
            };
            LayerMetaInfo {
                layer_depth: l,
                loop_class_map: classes(&map),
                analyzer_kind: if l == 0 {
                    AnalyzerKind::Empirical
                } else {
                    AnalyzerKind::Analytical
                },
                stages,
            }
        })
        .collect()
}

fn axis(name: &str, reduction: bool, isa_dim: Option<&str>, policy: TilePolicy) -> LoopAxis {
    LoopAxis {
        name: name.into(),
        extent_kind: ExtentKind::Dynamic,
        reduction,
        isa_dim: isa_dim.map(Into::into),
        tile_policy: policy,
    }
}

/// `C[m,n] += A[m,k] · B[k,n]` over `levels` hardware levels.
///
/// `m`, `n` are PL at the top and TSL below; `k` is TRL everywhere.
/// Levels below the top load A and B; level 0 also stores C.
pub fn gemm_program(levels: usize) -> TensorProgramSpec {
    assert!(levels >= 2, "gemm_program needs at least 2 levels");
    let (m, n, k) = (0, 1, 2);
    TensorProgramSpec {
        operator_kind: OperatorKind::Gemm,
        axes: vec![
            axis("m", false, Some("m"), TilePolicy::Lattice),
            axis("n", false, Some("n"), TilePolicy::Lattice),
            axis("k", true, Some("k"), TilePolicy::Lattice),
        ],
        operands: vec![
            OperandSpec {
                name: "A".into(),
                role: OperandRole::Input,
                dims: vec![OperandDim::Axis(m), OperandDim::Axis(k)],
            },
            OperandSpec {
                name: "B".into(),
                role: OperandRole::Input,
                dims: vec![OperandDim::Axis(k), OperandDim::Axis(n)],
            },
            OperandSpec {
                name: "C".into(),
                role: OperandRole::Output,
                dims: vec![OperandDim::Axis(m), OperandDim::Axis(n)],
            },
        ],
        layers: layers_for(levels, &["m", "n"], &["k"], &[0, 1], 2),
    }
}

/// Direct stride-1 convolution `O[n,co,h,w] += I[n,ci,h+kh,w+kw] · W[co,ci,kh,kw]`.
///
/// Output axes are PL at the top and TSL below; `ci`, `kh`, `kw` are TRL.
/// `n`, `h`, `kh` and `kw` keep tile 1 and are iterated by the top-level loop,
/// so batch, row and kernel extents stay fully dynamic and the tile space
/// matches the instruction-aligned axes. `w`, `co`, `ci` align to the
/// instruction's `m`, `n`, `k`.
pub fn conv2d_program(levels: usize) -> TensorProgramSpec {
    assert!(levels >= 2, "conv2d_program needs at least 2 levels");
    let (n, co, h, w, ci, kh, kw) = (0, 1, 2, 3, 4, 5, 6);
    TensorProgramSpec {
        operator_kind: OperatorKind::Conv2d,
        axes: vec![
            axis("n", false, None, TilePolicy::Unit),
            axis("co", false, Some("n"), TilePolicy::Lattice),
            axis("h", false, None, TilePolicy::Unit),
            axis("w", false, Some("m"), TilePolicy::Lattice),
            axis("ci", true, Some("k"), TilePolicy::Lattice),
            axis("kh", true, None, TilePolicy::Unit),
            axis("kw", true, None, TilePolicy::Unit),
        ],
        operands: vec![
            OperandSpec {
                name: "input".into(),
                role: OperandRole::Input,
                dims: vec![
                    OperandDim::Axis(n),
                    OperandDim::Axis(ci),
                    OperandDim::Window { output: h, kernel: kh },
                    OperandDim::Window { output: w, kernel: kw },
                ],
            },
            OperandSpec {
                name: "weights".into(),
                role: OperandRole::Input,
                dims: vec![
                    OperandDim::Axis(co),
                    OperandDim::Axis(ci),
                    OperandDim::Axis(kh),
                    OperandDim::Axis(kw),
                ],
            },
            OperandSpec {
                name: "output".into(),
                role: OperandRole::Output,
                dims: vec![
                    OperandDim::Axis(n),
                    OperandDim::Axis(co),
                    OperandDim::Axis(h),
                    OperandDim::Axis(w),
                ],
            },
        ],
        layers: layers_for(levels, &["n", "co", "h", "w"], &["ci", "kh", "kw"], &[0, 1], 2),
    }
}
