//! Multi-process benchmark harness.
//!
//! [`run_experiment`] spawns one process per rank. Ranks find each other
//! through a [`Rendezvous`] directory, line up on barriers around each timed
//! window, and write their metrics back for the orchestrator to merge into a
//! [`RunReport`]. Throughput is the sum of bytes over the slowest rank's
//! barrier-to-barrier window.

mod config;
mod orchestrator;
mod rendezvous;
mod report;
mod worker;

pub use config::{preset, RunConfig, WorkloadSelector, DEFAULT_REPETITIONS, DEFAULT_SEED, DEFAULT_TIMEOUT_S, PRESETS};
pub use orchestrator::{run_experiment, Launcher, COORD_DIR};
pub use rendezvous::Rendezvous;
pub use report::{
    aggregate_repetition, emit_report, summarize, throughput, Aggregate, AggregateSummary, Environment, PhaseTimings,
    RankMetrics, ReportFormat, RunReport, Summary, Verification, WorkloadSummary, SCHEMA_VERSION,
};
pub use worker::{
    run_rank, run_worker, WorkerEnv, CONFIG_FILE_NAME, ENV_COORD_DIR, ENV_FAULT, ENV_FAULT_RANK, ENV_RANK, ENV_RUN_ID, ENV_WORLD,
    FAULT_ABORT_BEFORE_MANIFEST,
};
