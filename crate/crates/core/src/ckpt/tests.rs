use std::fs::OpenOptions;
use std::os::unix::fs::FileExt;
use std::path::Path;

use super::*;
use crate::engine::{Backend, EngineConfig};
use crate::layout::{plan_layout, AggregationStrategy, LayoutPlan};
use crate::units::KIB;
use crate::workload::expected_checksum;
use crate::workload::{generate_synthetic, ObjectKind, WorkloadSpec};

const FRAGMENT: u64 = 128 * KIB;

fn engine(backend: Backend, direct: bool) -> EngineConfig {
    EngineConfig { backend, queue_depth: 8, direct, ..EngineConfig::default() }
}

fn workload(per_rank: u64, chunk: u64, ranks: u32) -> WorkloadSpec {
    generate_synthetic(per_rank, chunk, ranks, 42).unwrap()
}

fn strategies() -> [AggregationStrategy; 4] {
    [
        AggregationStrategy::FilePerShard,
        AggregationStrategy::FilePerProcess,
        AggregationStrategy::SingleSharedFile,
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes: FRAGMENT },
    ]
}

fn write(root: &Path, w: &WorkloadSpec, plan: &LayoutPlan, cfg: EngineConfig, mode: EmulationMode) -> CheckpointOutcome {
    checkpoint(&CheckpointJob { root, version: 1, workload: w, plan, engine: cfg, mode }).unwrap()
}

fn restore_job<'a>(root: &'a Path, m: &'a Manifest, cfg: EngineConfig, mode: EmulationMode, alloc: AllocMode) -> RestoreJob<'a> {
    RestoreJob { root, manifest: m, engine: cfg, mode, alloc, pool_regions: 4, region_bytes: 256 * KIB as usize }
}

#[test]
fn round_trip_across_strategies_backends_and_modes() {
    let w = workload(1024 * KIB + 100, 300 * KIB, 2);
    for strategy in strategies() {
        for backend in [Backend::Ring, Backend::Blocking] {
            for direct in [true, false] {
                for mode in [EmulationMode::Batched, EmulationMode::PerObjectImmediate] {
                    for alloc in [AllocMode::Pooled, AllocMode::PerObject] {
                        let dir = tempfile::tempdir().unwrap();
                        let plan = plan_layout(&w, strategy, 4096, direct).unwrap();
                        let cfg = engine(backend, direct);
                        let out = write(dir.path(), &w, &plan, cfg, mode);
                        for e in &out.manifest.entries {
                            let seed = w.object(e.object_id).unwrap().content_seed;
                            assert_eq!(e.checksum, expected_checksum(seed, e.length));
                        }
                        let restored = restore(&restore_job(dir.path(), &out.manifest, cfg, mode, alloc)).unwrap();
                        let failures: Vec<_> = restored.failures().collect();
                        assert!(failures.is_empty(), "{strategy:?} {backend:?} direct={direct} {mode:?} {alloc:?}: {failures:?}");
                        assert!(verify_version(dir.path(), 1).unwrap().passed());
                    }
                }
            }
        }
    }
}

#[test]
fn fragmented_emulation_round_trips() {
    let w = workload(600 * KIB, 200 * KIB, 2);
    let plan = plan_layout(&w, AggregationStrategy::FixedChunkFragmentation { chunk_bytes: FRAGMENT }, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::FragmentedChunks);
    let r = restore(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::FragmentedChunks, AllocMode::PerObject)).unwrap();
    assert!(r.passed());
    let tensor = out.manifest.entries.iter().find(|e| e.kind == ObjectKind::Tensor).unwrap();
    assert_eq!(tensor.extents.len(), 2);
}

#[test]
fn fragmented_emulation_needs_fragmented_layout() {
    let w = workload(64 * KIB, 16 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let job = CheckpointJob {
        root: dir.path(),
        version: 0,
        workload: &w,
        plan: &plan,
        engine: engine(Backend::Blocking, true),
        mode: EmulationMode::FragmentedChunks,
    };
    assert!(matches!(checkpoint(&job), Err(crate::Error::PlanMismatch(_))));
}

#[test]
fn plan_must_match_engine_io_mode() {
    let w = workload(64 * KIB, 16 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let job = CheckpointJob {
        root: dir.path(),
        version: 0,
        workload: &w,
        plan: &plan,
        engine: engine(Backend::Blocking, true),
        mode: EmulationMode::Batched,
    };
    assert!(matches!(checkpoint(&job), Err(crate::Error::PlanMismatch(_))));
    let out = write(dir.path(), &w, &plan, engine(Backend::Blocking, false), EmulationMode::Batched);
    let job = restore_job(dir.path(), &out.manifest, engine(Backend::Blocking, true), EmulationMode::Batched, AllocMode::Pooled);
    assert!(matches!(restore(&job), Err(crate::Error::PlanMismatch(_))));
}

#[test]
fn write_and_read_counts_follow_the_plan() {
    let w = workload(1024 * KIB, 64 * KIB, 2);
    let plan = plan_layout(&w, AggregationStrategy::FilePerProcess, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    for r in &out.ranks {
        let planned = WriteCounts::planned(&plan, r.rank);
        assert_eq!(planned, WriteCounts { tensor: 16, lean: 1, metadata: 1 });
        assert_eq!(r.writes, planned);
        assert_eq!(r.engine.write_ops, planned.total());
    }
    let restored =
        restore(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::PerObjectImmediate, AllocMode::PerObject)).unwrap();
    for r in &restored.ranks {
        assert_eq!(r.reads, ReadCounts { manifest_loads: 1, metadata: 1, lean: 1, tensor: 16, coalesced: 0 });
        assert_eq!(r.engine.read_ops, 1 + 1 + 16);
    }
}

#[test]
fn batched_pooled_restore_coalesces_contiguous_extents() {
    let w = workload(1024 * KIB, 64 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerProcess, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    let r = restore(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::Batched, AllocMode::Pooled)).unwrap();
    // One contiguous run per rank file, read in 256 KiB windows.
    let file_bytes = plan.per_file_total.values().sum::<u64>();
    assert_eq!(r.ranks[0].reads.coalesced, file_bytes.div_ceil(256 * KIB));
    assert!(r.passed());
}

#[test]
fn pooled_restore_reuses_regions() {
    // 98 tensors, a lean object and a header: 100 objects, all smaller than a region.
    let w = workload(98 * 32 * KIB, 32 * KIB, 1);
    assert_eq!(w.objects.len(), 100);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    for mode in [EmulationMode::Batched, EmulationMode::PerObjectImmediate] {
        let pooled = restore(&restore_job(dir.path(), &out.manifest, cfg, mode, AllocMode::Pooled)).unwrap();
        assert!(pooled.ranks[0].alloc.allocations <= 4, "{mode:?}");
        let fresh = restore(&restore_job(dir.path(), &out.manifest, cfg, mode, AllocMode::PerObject)).unwrap();
        assert_eq!(fresh.ranks[0].alloc.allocations, 100, "{mode:?}");
        assert!(pooled.passed() && fresh.passed());
    }
}

#[test]
fn stage_timings_fit_in_total() {
    let w = workload(512 * KIB, 64 * KIB, 2);
    let plan = plan_layout(&w, AggregationStrategy::SingleSharedFile, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::PerObjectImmediate);
    for r in &out.ranks {
        assert!(r.timings.stage_sum() <= r.timings.total_s + 1e-9);
        assert!(r.timings.flush_s > 0.0 && r.timings.staging_s > 0.0);
    }
    let restored = restore(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::PerObjectImmediate, AllocMode::Pooled)).unwrap();
    for r in &restored.ranks {
        assert!(r.timings.stage_sum() <= r.timings.total_s + 1e-9);
        assert!(r.timings.metadata_s > 0.0 && r.timings.lean_s > 0.0 && r.timings.read_s > 0.0);
    }
}

fn corrupt(root: &Path, m: &Manifest, kind: ObjectKind, f: impl FnOnce(&std::fs::File, &Extent)) -> u64 {
    let entry = m.entries.iter().find(|e| e.kind == kind).unwrap();
    let ext = &entry.extents[0];
    let file = OpenOptions::new().read(true).write(true).open(version_dir(root, m.checkpoint_version).join(&ext.file_key)).unwrap();
    f(&file, ext);
    entry.object_id
}

#[test]
fn bit_flip_is_reported_for_that_object_only() {
    let w = workload(256 * KIB, 64 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerProcess, 4096, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Blocking, false);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    let victim = corrupt(dir.path(), &out.manifest, ObjectKind::Tensor, |file, ext| {
        let mut b = [0u8];
        file.read_exact_at(&mut b, ext.offset + 1000).unwrap();
        file.write_all_at(&[b[0] ^ 0x10], ext.offset + 1000).unwrap();
    });
    let r = restore(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::Batched, AllocMode::Pooled)).unwrap();
    let failed: Vec<_> = r.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].object_id, victim);
    assert!(matches!(failed[0].status, ObjectStatus::ChecksumMismatch { .. }));
    let report = verify_version(dir.path(), 1).unwrap();
    assert_eq!(report.objects_failed, 1);
    assert!(!report.passed());
}

#[test]
fn truncated_file_is_a_short_read() {
    let w = workload(256 * KIB, 64 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).unwrap();
    for backend in [Backend::Ring, Backend::Blocking] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = engine(backend, true);
        let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
        // The header is last in the shard file; cut it in half.
        let victim = corrupt(dir.path(), &out.manifest, ObjectKind::MetadataHeader, |file, ext| {
            file.set_len(ext.offset + ext.length / 2).unwrap();
        });
        for mode in [EmulationMode::Batched, EmulationMode::PerObjectImmediate] {
            let r = restore(&restore_job(dir.path(), &out.manifest, cfg, mode, AllocMode::PerObject)).unwrap();
            let failed: Vec<_> = r.failures().collect();
            assert_eq!(failed.len(), 1, "{backend:?} {mode:?}");
            assert_eq!(failed[0].object_id, victim);
            assert!(matches!(failed[0].status, ObjectStatus::ShortRead { .. }), "{:?}", failed[0].status);
        }
        let report = verify_version(dir.path(), 1).unwrap();
        assert!(matches!(report.objects.iter().find(|o| o.object_id == victim).unwrap().status, ObjectStatus::ShortRead { .. }));
    }
}

#[test]
fn missing_data_file_aborts_restore() {
    let w = workload(128 * KIB, 64 * KIB, 2);
    let plan = plan_layout(&w, AggregationStrategy::FilePerProcess, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    std::fs::remove_file(version_dir(dir.path(), 1).join("file-per-process/rank1.bin")).unwrap();
    let job = restore_job(dir.path(), &out.manifest, cfg, EmulationMode::Batched, AllocMode::Pooled);
    assert!(restore_rank(&job, 0, &mut NoHooks).unwrap().passed());
    assert!(matches!(restore_rank(&job, 1, &mut NoHooks), Err(crate::Error::MissingFile(_))));
    let report = verify_version(dir.path(), 1).unwrap();
    assert!(report.usable);
    assert!(report.objects.iter().any(|o| matches!(o.status, ObjectStatus::MissingFile { .. })));
}

#[test]
fn version_without_manifest_is_unusable() {
    let w = workload(128 * KIB, 64 * KIB, 2);
    let plan = plan_layout(&w, AggregationStrategy::SingleSharedFile, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let job = CheckpointJob {
        root: dir.path(),
        version: 3,
        workload: &w,
        plan: &plan,
        engine: engine(Backend::Ring, true),
        mode: EmulationMode::Batched,
    };
    prepare_version_dir(dir.path(), 3, &plan).unwrap();
    for rank in 0..2 {
        checkpoint_rank(&job, rank, &mut NoHooks).unwrap();
    }
    let report = verify_version(dir.path(), 3).unwrap();
    assert!(!report.usable && !report.passed());
    assert_eq!(latest_version(dir.path()).unwrap(), Some(3));

    std::fs::write(manifest_path(dir.path(), 3), "{\"format\": \"ckptbench-manif").unwrap();
    assert!(!verify_version(dir.path(), 3).unwrap().usable);
}

#[test]
fn rewriting_a_version_removes_the_old_manifest() {
    let w = workload(128 * KIB, 64 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), &w, &plan, engine(Backend::Ring, true), EmulationMode::Batched);
    assert!(manifest_path(dir.path(), 1).exists());
    prepare_version_dir(dir.path(), 1, &plan).unwrap();
    assert!(!manifest_path(dir.path(), 1).exists());
}

#[test]
fn hooks_surround_the_window() {
    struct Recorder(Vec<(Window, bool)>);
    impl PhaseHooks for Recorder {
        fn before_window(&mut self, w: Window) -> crate::Result<()> {
            self.0.push((w, true));
            Ok(())
        }
        fn after_window(&mut self, w: Window) -> crate::Result<()> {
            self.0.push((w, false));
            Ok(())
        }
    }
    let w = workload(128 * KIB, 64 * KIB, 1);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = engine(Backend::Ring, true);
    let out = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched);
    let mut hooks = Recorder(Vec::new());
    let job = CheckpointJob { root: dir.path(), version: 1, workload: &w, plan: &plan, engine: cfg, mode: EmulationMode::Batched };
    checkpoint_rank(&job, 0, &mut hooks).unwrap();
    restore_rank(&restore_job(dir.path(), &out.manifest, cfg, EmulationMode::Batched, AllocMode::Pooled), 0, &mut hooks).unwrap();
    assert_eq!(hooks.0, vec![(Window::Write, true), (Window::Write, false), (Window::Read, true), (Window::Read, false)]);
}

#[test]
fn mode_names_round_trip() {
    for m in [EmulationMode::Batched, EmulationMode::PerObjectImmediate, EmulationMode::FragmentedChunks] {
        assert_eq!(m.to_string().parse::<EmulationMode>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    for a in [AllocMode::Pooled, AllocMode::PerObject] {
        assert_eq!(a.to_string().parse::<AllocMode>().unwrap(), a);
    }
}
