//! Hardware-aware planning for tensor programs with dynamic shapes.
//!
//! Offline, [`candgen::build_bank`] derives tile candidates for every memory
//! level of a [`hwmodel::HardwareDescriptor`] and annotates them with costs.
//! At runtime, [`runtime::select`] picks a full tile chain for a concrete
//! shape, and [`exec`] interprets the resulting plan on real tensors.

pub mod bank;
pub mod candgen;
pub mod cost;
pub mod error;
pub mod exec;
pub mod hwmodel;
pub mod program;
pub mod runtime;

pub use bank::{load_bank, save_bank, KernelBank};
pub use candgen::{build_bank, BuildConfig, CompatibilityMap, MicroKernelCandidate, TileShape};
pub use cost::sim::SimOptions;
pub use cost::{analytical_cost, empirical_cost, AnalyzedCandidate, CostEstimate};
pub use error::{Error, ErrorKind, Result};
pub use hwmodel::{find_preset, HardwareDescriptor, LevelSpec, Preset};
pub use program::{conv2d_program, gemm_program, OperatorKind, TensorProgramSpec};
pub use runtime::{select, select_adaptive, validate_plan, Backend, RuntimeShape, SchedulePlan};
