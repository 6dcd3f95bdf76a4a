//! Reference interpreter for schedule plans.
//!
//! Every level walks its region in chunks of its tile: parallel loops outer,
//! spatial loops in the middle, reduction loops inner. Each chunk copies the
//! level's loaded operands into fresh buffers and then runs the level below,
//! or the base instruction at level 0. A level that stores the output keeps a
//! zeroed tile for every spatial group and accumulates it into the enclosing
//! output once its reduction sweep ends.
//!
//! Padding is realized by zero-filled copies of the inputs at the padded
//! shape, so the interior levels only ever see exact tiles. Parallel
//! iterations run sequentially; each writes a disjoint output tile.

pub mod oracle;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use oracle::{naive_conv2d, naive_gemm, reference_output};
pub use tensor::{compare, read_tensor, write_tensor, AnyTensor, Comparison, DType, Element, Tensor};

use crate::candgen::TileShape;
use crate::cost::sim::SimOptions;
use crate::cost::{base_compute_cycles, empirical_loop, level0_slices, LevelLoop, LevelTraffic};
use crate::error::{Error, Result};
use crate::hwmodel::HardwareDescriptor;
use crate::program::{LoopClass, OperandRole, OperandSpec, TensorProgramSpec, OPS_PER_POINT};
use crate::runtime::{validate_plan, SchedulePlan};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// Fill the pad cells of the first input with a large sentinel instead of zero.
    pub poison_padding: bool,
    /// Record a [`TraceEvent`] per chunk and per store.
    pub trace: bool,
    /// Simulator options for cycle counting; the plan's build options if unset.
    pub sim: Option<SimOptions>,
}

/// Interpreter events in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    /// Level `level` starts the chunk whose first iteration point is `point`.
    Chunk { level: usize, point: Vec<u64> },
    /// Level `level` accumulates the output tile of the spatial group at `point`.
    Store { level: usize, point: Vec<u64> },
}

/// Output of one interpreted run plus its instrumentation.
#[derive(Debug, Clone)]
pub struct Execution<T> {
    pub output: Tensor<T>,
    /// Per level, innermost first.
    pub traffic: Vec<LevelTraffic>,
    /// Loop structure each level executed, innermost first.
    pub loops: Vec<LevelLoop>,
    /// Largest staged footprint each level held.
    pub peak_bytes: Vec<u64>,
    pub trace: Vec<TraceEvent>,
    /// Simulated cycles of the executed loop structure.
    pub cycles: u64,
}

/// Row-major extents of every operand at the runtime `shape`.
pub fn operand_shapes(prog: &TensorProgramSpec, shape: &[u64]) -> Vec<Vec<usize>> {
    prog.operands
        .iter()
        .map(|o| o.extents(shape).into_iter().map(|e| e as usize).collect())
        .collect()
}

/// Seeded random input tensors for `prog` at `shape`.
pub fn random_inputs<T: Element>(prog: &TensorProgramSpec, shape: &[u64], seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = operand_shapes(prog, shape);
    prog.inputs()
        .into_iter()
        .map(|o| Tensor::random(shapes[o].clone(), &mut rng))
        .collect()
}

/// Simulated cycles of executed level loops, all levels run through the
/// pipeline simulator.
pub fn counted_cycles(
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    loops: &[LevelLoop],
    base_tile: &[u64],
    sim: &SimOptions,
) -> u64 {
    let mut inner = base_compute_cycles(prog, hw, base_tile);
    for (l, lp) in loops.iter().enumerate() {
        let slices = if l == 0 && sim.overlap {
            level0_slices(prog, hw, base_tile)
        } else {
            1
        };
        inner = empirical_loop(hw, lp, inner, slices, sim).total_cycles;
    }
    inner
}

/// Runs `plan` on `inputs` and returns the output at the true shape.
pub fn execute_plan<T: Element>(
    plan: &SchedulePlan,
    inputs: &[&Tensor<T>],
    hw: &HardwareDescriptor,
) -> Result<Tensor<T>> {
    Ok(execute_plan_with(plan, inputs, hw, ExecOptions::default())?.output)
}

/// Runs `plan` and returns the output with the simulated cycle count.
pub fn execute_and_count<T: Element>(
    plan: &SchedulePlan,
    inputs: &[&Tensor<T>],
    hw: &HardwareDescriptor,
) -> Result<(Tensor<T>, u64)> {
    let run = execute_plan_with(plan, inputs, hw, ExecOptions::default())?;
    Ok((run.output, run.cycles))
}

/// Runs `plan` with instrumentation.
pub fn execute_plan_with<T: Element>(
    plan: &SchedulePlan,
    inputs: &[&Tensor<T>],
    hw: &HardwareDescriptor,
    opts: ExecOptions,
) -> Result<Execution<T>> {
    let prog = validate_plan(plan, hw)?;
    let shape = &plan.shape.0;
    let padded = &plan.padded_shape;
    let input_ops = prog.inputs();
    let output_ops = prog.outputs();
    let &[output_op] = output_ops.as_slice() else {
        return Err(Error::InvalidPlan("the interpreter supports exactly one output".into()));
    };
    if inputs.len() != input_ops.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan needs {} inputs, got {}",
            input_ops.len(),
            inputs.len()
        )));
    }
    let shapes = operand_shapes(&prog, shape);
    let mut staged: Vec<Option<Buffer<T>>> = (0..prog.operands.len()).map(|_| None).collect();
    for (pos, (&o, t)) in input_ops.iter().zip(inputs).enumerate() {
        if t.shape() != shapes[o].as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "input '{}' has shape {:?}, plan expects {:?}",
                prog.operands[o].name,
                t.shape(),
                shapes[o]
            )));
        }
        let fill = if opts.poison_padding && pos == 0 {
            T::poison()
        } else {
            T::default()
        };
        staged[o] = Some(Buffer::staging(&prog.operands[o], padded, t, fill));
    }
    let mut out = Buffer::filled(
        vec![0; prog.operands[output_op].dims.len()],
        prog.operands[output_op].extents(padded),
        T::default(),
    );

    let chain = plan.chain_bottom_up();
    let mut interp = Interp {
        prog: &prog,
        hw,
        chain: &chain,
        groups: (0..prog.depth()).map(|l| class_groups(&prog.classes(l))).collect(),
        output: output_op,
        traffic: vec![LevelTraffic::default(); prog.depth()],
        loops: vec![None; prog.depth()],
        peak_bytes: vec![0; prog.depth()],
        trace: opts.trace.then(Vec::new),
    };
    let sources: Vec<Option<&Buffer<T>>> = staged.iter().map(Option::as_ref).collect();
    let origin = vec![0u64; prog.axes.len()];
    interp.run_level(prog.top_level(), &origin, padded, &sources, &mut out)?;

    let loops: Vec<LevelLoop> = interp
        .loops
        .iter()
        .map(|l| l.expect("every level runs at least once"))
        .collect();
    let sim = opts.sim.unwrap_or(plan.build_config.sim);
    let cycles = counted_cycles(&prog, hw, &loops, &chain[0].0, &sim);
    let true_extents = prog.operands[output_op].extents(shape);
    let output = Tensor::from_vec(
        shapes[output_op].clone(),
        out.extract(&vec![0; true_extents.len()], &true_extents)?.data,
    )?;
    Ok(Execution {
        output,
        traffic: interp.traffic,
        loops,
        peak_bytes: interp.peak_bytes,
        trace: interp.trace.unwrap_or_default(),
        cycles,
    })
}

/// Axes of each loop class, in program order.
fn class_groups(classes: &[LoopClass]) -> [Vec<usize>; 3] {
    let pick = |want: LoopClass| -> Vec<usize> {
        classes
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == want)
            .map(|(a, _)| a)
            .collect()
    };
    [pick(LoopClass::PL), pick(LoopClass::TSL), pick(LoopClass::TRL)]
}

/// Every trip-index combination over `axes`, last axis fastest.
fn grid(axes: &[usize], trips: &[u64]) -> Vec<Vec<(usize, u64)>> {
    let mut out = vec![Vec::new()];
    for &a in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..trips[a]).map(move |i| {
                    let mut v = prefix.clone();
                    v.push((a, i));
                    v
                })
            })
            .collect();
    }
    out
}

/// A staged copy of an operand region, indexed in global operand coordinates.
#[derive(Debug, Clone)]
struct Buffer<T> {
    origin: Vec<u64>,
    extents: Vec<u64>,
    strides: Vec<u64>,
    data: Vec<T>,
}

fn row_major_strides(extents: &[u64]) -> Vec<u64> {
    let mut strides = vec![1u64; extents.len()];
    for d in (0..extents.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * extents[d + 1];
    }
    strides
}

/// Calls `f` with the index of every row (all dims but the last) of `extents`.
fn for_each_row(extents: &[u64], mut f: impl FnMut(&[u64])) {
    let outer = &extents[..extents.len() - 1];
    if outer.contains(&0) {
        return;
    }
    let mut idx = vec![0u64; outer.len()];
    loop {
        f(&idx);
        let mut d = outer.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < outer[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl<T: Element> Buffer<T> {
    fn filled(origin: Vec<u64>, extents: Vec<u64>, value: T) -> Self {
        let n = extents.iter().product::<u64>() as usize;
        Buffer {
            origin,
            strides: row_major_strides(&extents),
            extents,
            data: vec![value; n],
        }
    }

    /// The operand at the padded shape, with `tensor` in its leading corner.
    fn staging(op: &OperandSpec, padded: &[u64], tensor: &Tensor<T>, fill: T) -> Self {
        let mut b = Self::filled(vec![0; op.dims.len()], op.extents(padded), fill);
        let true_extents: Vec<u64> = tensor.shape().iter().map(|&e| e as u64).collect();
        let src_strides = row_major_strides(&true_extents);
        let row = *true_extents.last().expect("operands have dims") as usize;
        for_each_row(&true_extents, |idx| {
            let s: u64 = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            let d: u64 = idx.iter().zip(&b.strides).map(|(i, s)| i * s).sum();
            b.data[d as usize..d as usize + row].copy_from_slice(&tensor.data()[s as usize..s as usize + row]);
        });
        b
    }

    fn contains(&self, origin: &[u64], extents: &[u64]) -> bool {
        (0..origin.len())
            .all(|d| origin[d] >= self.origin[d] && origin[d] + extents[d] <= self.origin[d] + self.extents[d])
    }

    fn offset(&self, global: impl Iterator<Item = u64>) -> usize {
        global
            .zip(&self.origin)
            .zip(&self.strides)
            .map(|((g, o), s)| (g - o) * s)
            .sum::<u64>() as usize
    }

    /// Copy of the region at `origin` with `extents`.
    fn extract(&self, origin: &[u64], extents: &[u64]) -> Result<Self> {
        if !self.contains(origin, extents) {
            return Err(Error::InvalidPlan(format!(
                "region at {origin:?} of {extents:?} leaves its enclosing buffer"
            )));
        }
        let mut b = Self::filled(origin.to_vec(), extents.to_vec(), T::default());
        let row = *extents.last().expect("operands have dims") as usize;
        let last = extents.len() - 1;
        for_each_row(extents, |idx| {
            let global = idx
                .iter()
                .zip(origin)
                .map(|(i, o)| i + o)
                .chain(std::iter::once(origin[last]));
            let s = self.offset(global);
            let d: u64 = idx.iter().zip(&b.strides).map(|(i, s)| i * s).sum();
            b.data[d as usize..d as usize + row].copy_from_slice(&self.data[s..s + row]);
        });
        Ok(b)
    }

    /// Adds `tile` into the matching region of `self`.
    fn accumulate(&mut self, tile: &Buffer<T>) -> Result<()> {
        if !self.contains(&tile.origin, &tile.extents) {
            return Err(Error::InvalidPlan("output tile leaves its enclosing buffer".into()));
        }
        let row = *tile.extents.last().expect("operands have dims") as usize;
        let last = tile.extents.len() - 1;
        for_each_row(&tile.extents, |idx| {
            let global = idx
                .iter()
                .zip(&tile.origin)
                .map(|(i, o)| i + o)
                .chain(std::iter::once(tile.origin[last]));
            let d = self.offset(global);
            let s: u64 = idx.iter().zip(&tile.strides).map(|(i, s)| i * s).sum();
            for (x, &y) in self.data[d..d + row]
                .iter_mut()
                .zip(&tile.data[s as usize..s as usize + row])
            {
                *x = x.add(y);
            }
        });
        Ok(())
    }

    /// Per-axis offset increments and the offset of iteration point `point`.
    fn affine(&self, op: &OperandSpec, point: &[u64]) -> (Vec<i64>, i64) {
        let mut coeff = vec![0i64; point.len()];
        for (d, dim) in op.dims.iter().enumerate() {
            match *dim {
                crate::program::OperandDim::Axis(a) => coeff[a] += self.strides[d] as i64,
                crate::program::OperandDim::Window { output, kernel } => {
                    coeff[output] += self.strides[d] as i64;
                    coeff[kernel] += self.strides[d] as i64;
                }
            }
        }
        (coeff, self.offset(op.origin(point).into_iter()) as i64)
    }
}

struct Interp<'a> {
    prog: &'a TensorProgramSpec,
    hw: &'a HardwareDescriptor,
    /// Bottom-up.
    chain: &'a [TileShape],
    groups: Vec<[Vec<usize>; 3]>,
    output: usize,
    traffic: Vec<LevelTraffic>,
    loops: Vec<Option<LevelLoop>>,
    peak_bytes: Vec<u64>,
    trace: Option<Vec<TraceEvent>>,
}

impl Interp<'_> {
    fn observe(&mut self, level: usize, region: &[u64]) -> Result<()> {
        let tile = &self.chain[level].0;
        let stages = &self.prog.layers[level].stages;
        if stages.load.contains(&self.output) {
            return Err(Error::InvalidPlan(format!("level {level} loads the output operand")));
        }
        let mut trips = [1u64; 3];
        for (slot, axes) in self.groups[level].iter().enumerate() {
            for &a in axes {
                if region[a] % tile[a] != 0 {
                    return Err(Error::InvalidPlan(format!(
                        "level {level} tile {} does not divide its region on axis '{}'",
                        self.chain[level], self.prog.axes[a].name
                    )));
                }
                trips[slot] *= region[a] / tile[a];
            }
        }
        let elem = self.hw.element_size_bytes;
        let bytes = |ops: &std::collections::BTreeSet<usize>| -> u64 {
            ops.iter().map(|&o| self.prog.operands[o].elements(tile)).sum::<u64>() * elem
        };
        let lp = LevelLoop {
            level,
            parallel_extent: trips[0],
            spatial_trips: trips[1],
            reduction_trips: trips[2],
            load_bytes: bytes(&stages.load),
            store_group_bytes: bytes(&stages.store),
        };
        match self.loops[level] {
            None => self.loops[level] = Some(lp),
            Some(prev) if prev != lp => {
                return Err(Error::InvalidPlan(format!("level {level} runs non-uniform loops")));
            }
            Some(_) => {}
        }
        // Level 0 holds every operand; staging levels double-buffer their loads.
        let resident = if level == 0 {
            self.prog.operands.iter().map(|o| o.elements(tile)).sum::<u64>() * elem
        } else {
            let union: std::collections::BTreeSet<usize> = stages.load.union(&stages.store).copied().collect();
            bytes(&union) * if stages.load.is_empty() { 1 } else { 2 }
        };
        let capacity = self.hw.levels[level].memory_capacity_bytes;
        if resident > capacity {
            return Err(Error::BufferCapacity {
                level,
                bytes: resident,
                capacity,
            });
        }
        self.peak_bytes[level] = self.peak_bytes[level].max(resident);
        Ok(())
    }

    /// Level `level` walks the region at `origin` of `region`. `sources[o]` is
    /// the innermost buffer holding input `o`; `out` receives output tiles.
    fn run_level<T: Element>(
        &mut self,
        level: usize,
        origin: &[u64],
        region: &[u64],
        sources: &[Option<&Buffer<T>>],
        out: &mut Buffer<T>,
    ) -> Result<()> {
        self.observe(level, region)?;
        let prog = self.prog;
        let chain = self.chain;
        let tile = &chain[level].0;
        let stages = &prog.layers[level].stages;
        let trips: Vec<u64> = region.iter().zip(tile).map(|(r, t)| r / t).collect();
        let [pl, tsl, trl] = self.groups[level].clone();
        let (pl, tsl, trl) = (grid(&pl, &trips), grid(&tsl, &trips), grid(&trl, &trips));
        let stores_output = stages.store.contains(&self.output);
        let out_spec = &prog.operands[self.output];
        let elem = self.hw.element_size_bytes;

        let mut point = origin.to_vec();
        let set = |point: &mut Vec<u64>, idx: &[(usize, u64)]| {
            for &(a, i) in idx {
                point[a] = origin[a] + i * tile[a];
            }
        };
        for p in &pl {
            set(&mut point, p);
            for s in &tsl {
                set(&mut point, s);
                set(&mut point, &trl[0].iter().map(|&(a, _)| (a, 0)).collect::<Vec<_>>());
                let mut local = stores_output
                    .then(|| Buffer::filled(out_spec.origin(&point), out_spec.extents(tile), T::default()));
                let group_point = point.clone();
                for r in &trl {
                    set(&mut point, r);
                    if let Some(trace) = &mut self.trace {
                        trace.push(TraceEvent::Chunk {
                            level,
                            point: point.clone(),
                        });
                    }
                    let mut loaded: Vec<Option<Buffer<T>>> = (0..prog.operands.len()).map(|_| None).collect();
                    for &o in &stages.load {
                        let op = &prog.operands[o];
                        let src = sources[o].ok_or_else(|| {
                            Error::InvalidPlan(format!("operand '{}' has no enclosing buffer", op.name))
                        })?;
                        let buf = src.extract(&op.origin(&point), &op.extents(tile))?;
                        self.traffic[level].load_bytes += buf.data.len() as u64 * elem;
                        loaded[o] = Some(buf);
                    }
                    let inner: Vec<Option<&Buffer<T>>> = loaded
                        .iter()
                        .zip(sources)
                        .map(|(mine, parent)| mine.as_ref().or(*parent))
                        .collect();
                    let target = match local.as_mut() {
                        Some(l) => l,
                        None => &mut *out,
                    };
                    if level == 0 {
                        self.compute(&point, tile, &inner, target)?;
                    } else {
                        self.run_level(level - 1, &point, tile, &inner, target)?;
                    }
                }
                if let Some(local) = local {
                    out.accumulate(&local)?;
                    self.traffic[level].store_bytes += local.data.len() as u64 * elem;
                    if let Some(trace) = &mut self.trace {
                        trace.push(TraceEvent::Store {
                            level,
                            point: group_point,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Base instruction: every iteration point of the tile at `point`.
    fn compute<T: Element>(
        &mut self,
        point: &[u64],
        tile: &[u64],
        sources: &[Option<&Buffer<T>>],
        out: &mut Buffer<T>,
    ) -> Result<()> {
        let prog = self.prog;
        let inputs = prog.inputs();
        let &[a_op, b_op] = inputs.as_slice() else {
            return Err(Error::InvalidPlan("the base instruction needs two inputs".into()));
        };
        let missing = || Error::InvalidPlan("base instruction input has no buffer".into());
        let a = sources[a_op].ok_or_else(missing)?;
        let b = sources[b_op].ok_or_else(missing)?;
        for (buf, op) in [(a, a_op), (b, b_op)] {
            let spec = &prog.operands[op];
            if !buf.contains(&spec.origin(point), &spec.extents(tile)) {
                return Err(Error::InvalidPlan(format!(
                    "operand '{}' tile leaves its buffer",
                    spec.name
                )));
            }
        }
        let out_spec = &prog.operands[self.output];
        if !out.contains(&out_spec.origin(point), &out_spec.extents(tile)) {
            return Err(Error::InvalidPlan("output tile leaves its buffer".into()));
        }
        debug_assert_eq!(prog.operands[a_op].role, OperandRole::Input);

        let (ca, mut oa) = a.affine(&prog.operands[a_op], point);
        let (cb, mut ob) = b.affine(&prog.operands[b_op], point);
        let (cc, mut oc) = out.affine(out_spec, point);
        let n = tile.len();
        let mut idx = vec![0u64; n];
        let volume: u64 = tile.iter().product();
        for _ in 0..volume {
            let (x, y) = (a.data[oa as usize], b.data[ob as usize]);
            let c = &mut out.data[oc as usize];
            *c = c.mul_add(x, y);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < tile[d] {
                    oa += ca[d];
                    ob += cb[d];
                    oc += cc[d];
                    break;
                }
                let back = (tile[d] - 1) as i64;
                oa -= ca[d] * back;
                ob -= cb[d] * back;
                oc -= cc[d] * back;
                idx[d] = 0;
            }
        }
        self.traffic[0].ops += OPS_PER_POINT * volume;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candgen::{build_bank, BuildConfig};
    use crate::cost::{analytical_cost, model_traffic};
    use crate::hwmodel::find_preset;
    use crate::program::gemm_program;
    use crate::runtime::{select, RuntimeShape};

    fn gemm_plan(key: &str, shape: &[u64], cfg: BuildConfig) -> (HardwareDescriptor, SchedulePlan) {
        let preset = find_preset(key).unwrap();
        let prog = gemm_program(3).with_empirical_levels(&preset.empirical_levels);
        let bank = build_bank(&prog, &preset.descriptor, &cfg).unwrap();
        let plan = select(&bank, &RuntimeShape(shape.to_vec()), &preset.descriptor, &prog).unwrap();
        (preset.descriptor, plan)
    }

    fn check(hw: &HardwareDescriptor, plan: &SchedulePlan, seed: u64) -> Execution<i32> {
        let prog = plan.program_spec().unwrap();
        let inputs = random_inputs::<i32>(&prog, &plan.shape.0, seed);
        let refs: Vec<&Tensor<i32>> = inputs.iter().collect();
        let run = execute_plan_with(plan, &refs, hw, ExecOptions::default()).unwrap();
        assert_eq!(run.output, reference_output(&prog, &refs).unwrap());
        run
    }

    #[test]
    fn padded_shapes_match_the_oracle() {
        for (i, shape) in [[5u64, 8, 8], [1, 1, 1], [17, 3, 29], [40, 33, 2]].iter().enumerate() {
            let (hw, plan) = gemm_plan("synthetic-a", shape, BuildConfig::default());
            check(&hw, &plan, i as u64);
        }
    }

    #[test]
    fn traffic_matches_the_model() {
        let (hw, plan) = gemm_plan("synthetic-b", &[37, 20, 45], BuildConfig::default());
        let run = check(&hw, &plan, 9);
        let prog = plan.program_spec().unwrap();
        let model = model_traffic(&prog, &hw, &plan.chain_bottom_up(), &plan.padded_shape).unwrap();
        assert_eq!(run.traffic, model);
        for (l, &peak) in run.peak_bytes.iter().enumerate() {
            assert!(peak <= hw.levels[l].memory_capacity_bytes);
        }
    }

    #[test]
    fn counted_cycles_without_overlap_match_the_formula() {
        let mut cfg = BuildConfig::default();
        cfg.sim.overlap = false;
        let (hw, plan) = gemm_plan("synthetic-a", &[30, 50, 70], cfg);
        let prog = plan.program_spec().unwrap();
        let inputs = random_inputs::<i32>(&prog, &plan.shape.0, 1);
        let refs: Vec<&Tensor<i32>> = inputs.iter().collect();
        let (out, cycles) = execute_and_count(&plan, &refs, &hw).unwrap();
        assert_eq!(out, execute_plan(&plan, &refs, &hw).unwrap());
        let expected = analytical_cost(&plan.chain_bottom_up(), Some(&plan.shape.0), &hw, &prog).unwrap();
        assert_eq!(cycles, expected.total_cycles);
        assert_eq!(cycles, plan.predicted_cost_cycles);
    }

    #[test]
    fn poisoned_padding_does_not_leak() {
        let (hw, plan) = gemm_plan("synthetic-a", &[13, 7, 11], BuildConfig::default());
        assert!(plan.padding_waste > 0.0);
        let prog = plan.program_spec().unwrap();
        let inputs = random_inputs::<i32>(&prog, &plan.shape.0, 4);
        let refs: Vec<&Tensor<i32>> = inputs.iter().collect();
        let opts = ExecOptions {
            poison_padding: true,
            ..ExecOptions::default()
        };
        let run = execute_plan_with(&plan, &refs, &hw, opts).unwrap();
        assert_eq!(run.output, reference_output(&prog, &refs).unwrap());
    }

    #[test]
    fn float_mode_is_within_tolerance() {
        let (hw, plan) = gemm_plan("synthetic-b", &[23, 41, 67], BuildConfig::default());
        let prog = plan.program_spec().unwrap();
        let inputs = random_inputs::<f32>(&prog, &plan.shape.0, 2);
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let out = execute_plan(&plan, &refs, &hw).unwrap();
        assert!(compare(&out, &reference_output(&prog, &refs).unwrap())
            .unwrap()
            .passed());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let (hw, plan) = gemm_plan("synthetic-a", &[4, 4, 4], BuildConfig::default());
        let a = Tensor::<i32>::zeros(vec![4, 5]);
        let b = Tensor::<i32>::zeros(vec![4, 4]);
        assert!(matches!(
            execute_plan(&plan, &[&a, &b], &hw),
            Err(Error::ShapeMismatch(_))
        ));
    }

    /// Independent expansion of the loop nest: PL, then TSL, then TRL, each
    /// in program order with the last axis fastest; stores after each sweep.
    fn expected_trace(prog: &TensorProgramSpec, chain: &[TileShape], padded: &[u64]) -> Vec<TraceEvent> {
        fn walk(
            prog: &TensorProgramSpec,
            chain: &[TileShape],
            level: usize,
            origin: Vec<u64>,
            region: &[u64],
            out: &mut Vec<TraceEvent>,
        ) {
            let tile = &chain[level].0;
            let classes = prog.classes(level);
            let axes_of = |c: LoopClass| -> Vec<usize> { (0..tile.len()).filter(|&a| classes[a] == c).collect() };
            let mut order = axes_of(LoopClass::PL);
            let spatial_end = order.len() + axes_of(LoopClass::TSL).len();
            order.extend(axes_of(LoopClass::TSL));
            order.extend(axes_of(LoopClass::TRL));
            let stores = !prog.layers[level].stages.store.is_empty();
            let counts: Vec<u64> = order.iter().map(|&a| region[a] / tile[a]).collect();
            let total: u64 = counts.iter().product();
            for flat in 0..total {
                let mut rem = flat;
                let mut digits = vec![0u64; order.len()];
                for i in (0..order.len()).rev() {
                    digits[i] = rem % counts[i];
                    rem /= counts[i];
                }
                let mut point = origin.clone();
                for (i, &a) in order.iter().enumerate() {
                    point[a] += digits[i] * tile[a];
                }
                out.push(TraceEvent::Chunk {
                    level,
                    point: point.clone(),
                });
                if level > 0 {
                    walk(prog, chain, level - 1, point.clone(), tile, out);
                }
                let sweep_done = (spatial_end..order.len()).all(|i| digits[i] + 1 == counts[i]);
                if stores && sweep_done {
                    let mut group = point.clone();
                    for &a in &order[spatial_end..] {
                        group[a] = origin[a];
                    }
                    out.push(TraceEvent::Store { level, point: group });
                }
            }
        }
        let mut out = Vec::new();
        walk(prog, chain, chain.len() - 1, vec![0; padded.len()], padded, &mut out);
        out
    }

    #[test]
    fn trace_follows_the_loop_nest() {
        let (hw, plan) = gemm_plan("synthetic-b", &[40, 24, 72], BuildConfig::default());
        let prog = plan.program_spec().unwrap();
        let inputs = random_inputs::<i32>(&prog, &plan.shape.0, 5);
        let refs: Vec<&Tensor<i32>> = inputs.iter().collect();
        let opts = ExecOptions {
            trace: true,
            ..ExecOptions::default()
        };
        let run = execute_plan_with(&plan, &refs, &hw, opts).unwrap();
        assert_eq!(
            run.trace,
            expected_trace(&prog, &plan.chain_bottom_up(), &plan.padded_shape)
        );
        assert!(run.trace.iter().any(|e| matches!(e, TraceEvent::Store { .. })));
    }
}
