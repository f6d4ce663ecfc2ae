//! Checkpoint/restore I/O toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`workload`] builds deterministic checkpoint workloads (synthetic or
//!   shaped after real LLM checkpoints) and generates their byte content.
//! * [`layout`] places every object on storage under an aggregation strategy.
//! * [`engine`] is a single-threaded batched I/O engine with an io_uring
//!   backend and a blocking `pread`/`pwrite` baseline.
//! * [`ckpt`] runs the staged checkpoint and restore pipelines and owns the
//!   manifest format.
//! * [`bench`] coordinates rank processes and produces run reports.

pub mod bench;
pub mod ckpt;
pub mod engine;
mod error;
pub mod layout;
pub mod units;
pub mod workload;

pub use error::{Error, Result};

pub use bench::{RunConfig, RunReport};
pub use ckpt::{AllocMode, EmulationMode, Manifest};
pub use engine::{Backend, BufferPool, EngineConfig};
pub use layout::{plan_layout, AggregationStrategy, LayoutPlan};
pub use workload::{ObjectKind, ObjectSpec, WorkloadSpec};
