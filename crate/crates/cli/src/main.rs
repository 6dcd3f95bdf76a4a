//! `tilewise` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 validation or any other library error,
//! 3 oracle mismatch. Every failure prints one `error[<code>]: ...` line to
//! stderr.

mod hardware;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tilewise_core::bank::{load_bank, save_bank};
use tilewise_core::exec::{self, AnyTensor, Comparison, Element, ExecOptions, Tensor};
use tilewise_core::runtime::{load_plan, plan_cost_breakdown, save_plan, select_timed};
use tilewise_core::{
    build_bank, BuildConfig, Error, HardwareDescriptor, KernelBank, OperatorKind, RuntimeShape, SchedulePlan,
    TensorProgramSpec,
};

use hardware::{resolve_hardware, Hardware};

#[derive(Parser)]
#[command(
    name = "tilewise",
    version,
    about = "Hardware-aware planner for dynamic-shape tensor programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a kernel bank for one operator on one hardware descriptor.
    Build(BuildArgs),
    /// Select a schedule for a concrete shape.
    Plan(PlanArgs),
    /// Execute a plan with the reference interpreter and check it against the oracle.
    Exec(ExecArgs),
    /// Sweep one axis and emit predicted costs per backend as CSV.
    Report(ReportArgs),
    /// List built-in hardware presets, or write them out as descriptor files.
    Presets(PresetsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Gemm,
    Conv2d,
}

impl Op {
    fn kind(self) -> OperatorKind {
        match self {
            Op::Gemm => OperatorKind::Gemm,
            Op::Conv2d => OperatorKind::Conv2d,
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    /// Preset name or descriptor JSON path.
    #[arg(long)]
    hw: String,
    #[arg(long, value_enum, default_value = "gemm")]
    op: Op,
    /// Bank output path.
    #[arg(long)]
    out: PathBuf,
    /// Levels costed by the simulator (comma list); the rest are analytical.
    #[arg(long, value_delimiter = ',')]
    empirical_levels: Option<Vec<usize>>,
    /// Cost whole level-0 chunks instead of instruction-sized slices.
    #[arg(long)]
    no_overlap: bool,
    /// Let stores drain while later iterations compute.
    #[arg(long)]
    store_overlap: bool,
    /// Top-level tiles may hold this many times the level below's upper window bound.
    #[arg(long, default_value_t = BuildConfig::default().top_span)]
    top_span: u64,
}

#[derive(Args)]
struct PlanArgs {
    /// Preset name or descriptor JSON path; repeat once per bank with --adaptive.
    #[arg(long, required = true)]
    hw: Vec<String>,
    /// Bank built for the matching --hw; built in memory when omitted.
    #[arg(long)]
    bank: Vec<PathBuf>,
    /// Operator used when a bank is built in memory.
    #[arg(long, value_enum, default_value = "gemm")]
    op: Op,
    /// Runtime shape, e.g. m=384,n=768,k=2304.
    #[arg(long)]
    shape: String,
    /// Choose the cheapest plan across all given backends.
    #[arg(long)]
    adaptive: bool,
    /// Plan output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the per-level cost breakdown.
    #[arg(long)]
    breakdown: bool,
}

#[derive(Args)]
struct ExecArgs {
    /// Preset name or descriptor JSON path the plan was made for.
    #[arg(long)]
    hw: String,
    #[arg(long)]
    plan: PathBuf,
    /// Input tensor files in operand order.
    #[arg(long, conflicts_with = "random")]
    input: Vec<PathBuf>,
    /// Generate seeded random inputs.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use f32 random inputs instead of i32.
    #[arg(long, requires = "random")]
    float: bool,
    /// Fill the input pad region with sentinels to prove it never reaches the output.
    #[arg(long)]
    poison_padding: bool,
    /// Write the output tensor here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Preset name or descriptor JSON path; repeat for several backends.
    #[arg(long, required = true)]
    hw: Vec<String>,
    /// Bank for the matching --hw; built in memory when omitted.
    #[arg(long)]
    bank: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "gemm")]
    op: Op,
    /// Swept axis as key=a..b:step (inclusive, step defaults to 1).
    #[arg(long)]
    sweep: String,
    /// Extents of the remaining axes, e.g. n=64,k=64.
    #[arg(long, default_value = "")]
    shape: String,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetsArgs {
    /// Write every preset as `<key>.json` into this directory.
    #[arg(long)]
    dump: Option<PathBuf>,
}

/// Why a command failed, which selects the exit code.
enum Failure {
    Usage(String),
    Lib(Error),
    Mismatch(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let mut lines = rendered.lines();
            let first = lines.next().unwrap_or_default();
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            for line in lines.filter(|l| !l.trim().is_empty()) {
                eprintln!("{line}");
            }
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Exec(a) => cmd_exec(a),
        Command::Report(a) => cmd_report(a),
        Command::Presets(a) => cmd_presets(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error[{}]: {}", e.code(), single_line(&e.to_string()));
            ExitCode::from(2)
        }
        Err(Failure::Mismatch(msg)) => {
            eprintln!("error[oracle-mismatch]: {msg}");
            ExitCode::from(3)
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn build_config(args: &BuildArgs) -> BuildConfig {
    let mut cfg = BuildConfig {
        top_span: args.top_span,
        ..BuildConfig::default()
    };
    cfg.sim.overlap = !args.no_overlap;
    cfg.sim.store_overlap = args.store_overlap;
    cfg
}

fn program_for(op: Op, hw: &Hardware, empirical: Option<&[usize]>) -> Result<TensorProgramSpec, Failure> {
    let depth = hw.descriptor.depth();
    if depth < 2 {
        return Err(Error::Binding("programs need at least two hardware levels".into()).into());
    }
    let empirical = empirical.unwrap_or(&hw.empirical_levels);
    if let Some(&bad) = empirical.iter().find(|&&l| l >= depth) {
        return Err(Failure::Usage(format!(
            "--empirical-levels names level {bad}, but the hardware has {depth} levels"
        )));
    }
    Ok(op.kind().program(depth).with_empirical_levels(empirical))
}

fn cmd_build(args: BuildArgs) -> CmdResult {
    let hw = resolve_hardware(&args.hw)?;
    let prog = program_for(args.op, &hw, args.empirical_levels.as_deref())?;
    let cfg = build_config(&args);
    let start = Instant::now();
    let bank = build_bank(&prog, &hw.descriptor, &cfg)?;
    let elapsed = start.elapsed();
    let text = bank.to_canonical_string();

    println!("bank: {} on {}", prog.id(), hw.descriptor.name);
    for (l, n) in bank.candidate_counts().iter().enumerate() {
        println!("level {l}: {n} candidates");
    }
    println!("total: {} candidates", bank.total_candidates());
    println!("build time: {:.3} s", elapsed.as_secs_f64());

    // Compare against the previous output if there is one, else against a second build.
    let reproducible = match std::fs::read_to_string(&args.out) {
        Ok(previous) => previous == text,
        Err(_) => build_bank(&prog, &hw.descriptor, &cfg)?.to_canonical_string() == text,
    };
    save_bank(&bank, &args.out)?;
    println!("wrote {} ({} bytes)", args.out.display(), text.len());
    println!("reproducible: {reproducible}");
    Ok(())
}

/// Loads the bank at `path` or builds one in memory.
fn obtain_bank(hw: &Hardware, path: Option<&Path>, op: Op) -> Result<(KernelBank, TensorProgramSpec), Failure> {
    let bank = match path {
        Some(p) => load_bank(p, &hw.descriptor)?,
        None => {
            let prog = program_for(op, hw, None)?;
            build_bank(&prog, &hw.descriptor, &BuildConfig::default())?
        }
    };
    let prog = bank.program_spec()?;
    Ok((bank, prog))
}

fn backends(
    hws: &[String],
    banks: &[PathBuf],
    op: Op,
) -> Result<Vec<(Hardware, KernelBank, TensorProgramSpec)>, Failure> {
    if !banks.is_empty() && banks.len() != hws.len() {
        return Err(Failure::Usage(format!(
            "got {} --hw and {} --bank values; give one bank per hardware or none",
            hws.len(),
            banks.len()
        )));
    }
    hws.iter()
        .enumerate()
        .map(|(i, name)| {
            let hw = resolve_hardware(name)?;
            let (bank, prog) = obtain_bank(&hw, banks.get(i).map(PathBuf::as_path), op)?;
            Ok((hw, bank, prog))
        })
        .collect()
}

fn parse_shape(text: &str, prog: &TensorProgramSpec) -> Result<RuntimeShape, Failure> {
    RuntimeShape::parse(text, prog).map_err(|e| match e {
        Error::Parse(msg) => Failure::Usage(format!(
            "{msg}; shapes look like {}",
            prog.axis_names()
                .iter()
                .map(|a| format!("{a}=64"))
                .collect::<Vec<_>>()
                .join(",")
        )),
        other => Failure::Lib(other),
    })
}

fn cmd_plan(args: PlanArgs) -> CmdResult {
    if !args.adaptive && args.hw.len() > 1 {
        return Err(Failure::Usage("several --hw values need --adaptive".into()));
    }
    let backends = backends(&args.hw, &args.bank, args.op)?;
    let mut best: Option<(SchedulePlan, std::time::Duration, usize)> = None;
    for (i, (hw, bank, prog)) in backends.iter().enumerate() {
        let shape = parse_shape(&args.shape, prog)?;
        let (plan, elapsed) = select_timed(bank, &shape, &hw.descriptor, prog)?;
        if args.adaptive {
            println!(
                "backend {}: {} predicted cycles",
                hw.descriptor.name, plan.predicted_cost_cycles
            );
        }
        // Strict comparison keeps the earliest backend on ties.
        if best
            .as_ref()
            .map_or(true, |(b, _, _)| plan.predicted_cost_cycles < b.predicted_cost_cycles)
        {
            best = Some((plan, elapsed, i));
        }
    }
    let (plan, elapsed, winner) = best.expect("at least one backend");
    if args.adaptive {
        println!("winner: {}", plan.backend);
    }
    println!("{plan}");
    println!("selection time: {:.1} us", elapsed.as_secs_f64() * 1e6);
    if args.breakdown {
        let breakdown = plan_cost_breakdown(&plan, &backends[winner].0.descriptor, elapsed)?;
        println!("{breakdown}");
    }
    if let Some(out) = &args.out {
        save_plan(&plan, out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_exec(args: ExecArgs) -> CmdResult {
    let hw = resolve_hardware(&args.hw)?;
    let plan = load_plan(&args.plan)?;
    let prog = tilewise_core::validate_plan(&plan, &hw.descriptor)?;
    let opts = ExecOptions {
        poison_padding: args.poison_padding,
        ..ExecOptions::default()
    };
    let inputs: Vec<AnyTensor> = if args.random {
        if args.float {
            exec::random_inputs::<f32>(&prog, &plan.shape.0, args.seed)
                .into_iter()
                .map(AnyTensor::F32)
                .collect()
        } else {
            exec::random_inputs::<i32>(&prog, &plan.shape.0, args.seed)
                .into_iter()
                .map(AnyTensor::I32)
                .collect()
        }
    } else if args.input.is_empty() {
        return Err(Failure::Usage("give --input files or --random".into()));
    } else {
        args.input.iter().map(exec::read_tensor).collect::<Result<_, _>>()?
    };
    let (output, comparison, cycles) = match inputs.first() {
        Some(AnyTensor::F32(_)) => {
            let ts = unwrap_all(&inputs, |t| match t {
                AnyTensor::F32(x) => Some(x),
                AnyTensor::I32(_) => None,
            })?;
            run_checked(&plan, &prog, &hw.descriptor, &ts, opts, AnyTensor::F32)?
        }
        _ => {
            let ts = unwrap_all(&inputs, |t| match t {
                AnyTensor::I32(x) => Some(x),
                AnyTensor::F32(_) => None,
            })?;
            run_checked(&plan, &prog, &hw.descriptor, &ts, opts, AnyTensor::I32)?
        }
    };
    if let Some(out) = &args.out {
        exec::write_tensor(&output, out)?;
        println!("wrote {}", out.display());
    }
    println!("cycles: {cycles}");
    println!("predicted cycles: {}", plan.predicted_cost_cycles);
    if comparison.passed() {
        println!("PASS ({} elements)", comparison.elements);
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Mismatch(format!(
            "{} of {} elements differ from the oracle (max abs diff {})",
            comparison.mismatches, comparison.elements, comparison.max_abs_diff
        )))
    }
}

fn unwrap_all<'a, T>(
    inputs: &'a [AnyTensor],
    f: impl Fn(&'a AnyTensor) -> Option<&'a Tensor<T>>,
) -> Result<Vec<&'a Tensor<T>>, Failure> {
    inputs
        .iter()
        .map(|t| f(t).ok_or_else(|| Failure::Lib(Error::ShapeMismatch("inputs mix element types".into()))))
        .collect()
}

fn run_checked<T: Element>(
    plan: &SchedulePlan,
    prog: &TensorProgramSpec,
    hw: &HardwareDescriptor,
    inputs: &[&Tensor<T>],
    opts: ExecOptions,
    wrap: fn(Tensor<T>) -> AnyTensor,
) -> Result<(AnyTensor, Comparison, u64), Failure> {
    let run = exec::execute_plan_with(plan, inputs, hw, opts)?;
    let expected = exec::reference_output(prog, inputs)?;
    let comparison = exec::compare(&run.output, &expected)?;
    Ok((wrap(run.output), comparison, run.cycles))
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let Format::Csv = args.format;
    let backends = backends(&args.hw, &args.bank, args.op)?;
    let prog = &backends[0].2;
    if backends.iter().any(|(_, _, p)| p.id() != prog.id()) {
        return Err(Failure::Usage("all banks in a report must share one operator".into()));
    }
    let sweep = report::Sweep::parse(&args.sweep, prog).map_err(Failure::Usage)?;
    let fixed = report::fixed_axes(&args.shape, prog, sweep.axis).map_err(Failure::Usage)?;
    let rows = report::run(&backends, &sweep, &fixed)?;
    let names: Vec<&str> = backends.iter().map(|(hw, _, _)| hw.descriptor.name.as_str()).collect();
    let bytes = report::to_csv(prog, &names, &rows).map_err(|e| Failure::Lib(Error::Parse(format!("csv: {e}"))))?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &bytes).map_err(|e| {
                Failure::Lib(Error::Io {
                    path: path.clone(),
                    source: e,
                })
            })?;
            eprintln!("wrote {} ({} rows)", path.display(), rows.len());
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn cmd_presets(args: PresetsArgs) -> CmdResult {
    let all = hardware::all_presets();
    match &args.dump {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| {
                Failure::Lib(Error::Io {
                    path: dir.clone(),
                    source: e,
                })
            })?;
            for p in &all {
                let path = dir.join(format!("{}.json", p.key));
                std::fs::write(&path, p.descriptor.to_json_pretty()).map_err(|e| {
                    Failure::Lib(Error::Io {
                        path: path.clone(),
                        source: e,
                    })
                })?;
                println!("wrote {}", path.display());
            }
        }
        None => {
            for p in &all {
                println!("{:<12} {:<16} {}", p.key, p.descriptor.name, p.summary);
            }
        }
    }
    Ok(())
}
