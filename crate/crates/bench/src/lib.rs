//! Fixtures shared by the criterion benches.

use std::path::Path;

use ckptbench_core::ckpt::{checkpoint, AllocMode, CheckpointJob, EmulationMode, Manifest, RestoreJob};
use ckptbench_core::engine::{Backend, EngineConfig};
use ckptbench_core::workload::generate_synthetic;
use ckptbench_core::{plan_layout, AggregationStrategy, LayoutPlan, Result, WorkloadSpec};

pub const SEED: u64 = 7;

/// One rank holding `objects` tensors of `object_bytes` each.
pub fn small_objects(objects: u64, object_bytes: u64) -> WorkloadSpec {
    generate_synthetic(objects * object_bytes, object_bytes, 1, SEED).expect("valid synthetic workload")
}

pub fn engine(backend: Backend, direct: bool) -> EngineConfig {
    EngineConfig { backend, direct, ..EngineConfig::default() }
}

pub fn plan(workload: &WorkloadSpec, strategy: AggregationStrategy, direct: bool) -> LayoutPlan {
    plan_layout(workload, strategy, 4096, direct).expect("valid layout")
}

/// Writes one checkpoint version and returns its manifest.
pub fn write_checkpoint(
    root: &Path,
    workload: &WorkloadSpec,
    plan: &LayoutPlan,
    engine: EngineConfig,
    mode: EmulationMode,
) -> Result<Manifest> {
    let job = CheckpointJob { root, version: 0, workload, plan, engine, mode };
    Ok(checkpoint(&job)?.manifest)
}

pub fn restore_job<'a>(root: &'a Path, manifest: &'a Manifest, engine: EngineConfig, mode: EmulationMode, alloc: AllocMode) -> RestoreJob<'a> {
    RestoreJob { root, manifest, engine, mode, alloc, pool_regions: 4, region_bytes: 4 << 20 }
}
