//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! gating criterion fails. Run with `cargo test -p ckptbench --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use ckptbench_core::bench::RunReport;
use ckptbench_core::ckpt::{
    checkpoint, restore, verify_version, AllocMode, CheckpointJob, EmulationMode, Manifest, RestoreJob, WriteCounts,
};
use ckptbench_core::engine::{Backend, EngineConfig};
use ckptbench_core::layout::{plan_layout, AggregationStrategy, LayoutPlan};
use ckptbench_core::workload::{
    builtin_profile, generate_from_profile, generate_synthetic, ModelProfile, ProfileEntry, Provenance,
};
use ckptbench_core::{Error, ObjectKind, WorkloadSpec};

const BIN: &str = env!("CARGO_BIN_EXE_ckptbench");
const KIB: u64 = 1 << 10;
const MIB: u64 = 1 << 20;
const GIB: u64 = 1 << 30;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, bool, Check); 8] = [
        ("round-trip fidelity matrix", true, round_trip_matrix),
        ("layout property suite", true, layout_properties),
        ("3B-profile structural check", true, bloom_3b_structure),
        ("request-count oracles", true, request_counts),
        ("allocation-mode instrumentation", true, allocation_modes),
        ("backend equivalence oracle", true, backend_equivalence),
        ("commit-point safety", true, commit_point_safety),
        ("directional smoke benchmark (informational)", false, directional_smoke),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, gating, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let tag = match (&outcome, gating) {
            (Ok(_), true) => "PASS",
            (Ok(_), false) => "INFO",
            (Err(_), true) => {
                failed += 1;
                "FAIL"
            }
            (Err(_), false) => "INFO",
        };
        let detail = outcome.unwrap_or_else(|e| format!("not met: {e}"));
        println!("acceptance [{tag}] {name} ({secs:.1}s): {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} gating criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Reference content generator and checksum, written independently of the
/// library: SplitMix64 words at counter `i + 1`, little-endian, hashed with
/// FNV-1a 64.
fn oracle_checksum(seed: u64, len: u64) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut produced = 0u64;
    let mut i = 0u64;
    while produced < len {
        let mut z = seed.wrapping_add((i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        for b in z.to_le_bytes().iter().take((len - produced).min(8) as usize) {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        produced += 8;
        i += 1;
    }
    hash
}

fn engine(backend: Backend, direct: bool) -> EngineConfig {
    EngineConfig { backend, queue_depth: 32, direct, ..EngineConfig::default() }
}

fn write(root: &Path, w: &WorkloadSpec, plan: &LayoutPlan, cfg: EngineConfig, mode: EmulationMode) -> Result<Manifest, Error> {
    let job = CheckpointJob { root, version: 0, workload: w, plan, engine: cfg, mode };
    checkpoint(&job).map(|o| o.manifest)
}

fn restore_job<'a>(root: &'a Path, m: &'a Manifest, cfg: EngineConfig, mode: EmulationMode, alloc: AllocMode) -> RestoreJob<'a> {
    RestoreJob { root, manifest: m, engine: cfg, mode, alloc, pool_regions: 4, region_bytes: 4 * MIB as usize }
}

fn all_strategies(fragment: u64) -> [AggregationStrategy; 4] {
    [
        AggregationStrategy::FilePerShard,
        AggregationStrategy::FilePerProcess,
        AggregationStrategy::SingleSharedFile,
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes: fragment },
    ]
}

fn round_trip_matrix() -> Result<String, String> {
    let w = generate_synthetic(16 * MIB, 4 * MIB, 2, 2024).map_err(s)?;
    let expected: BTreeMap<u64, u64> =
        w.objects.iter().map(|o| (o.object_id, oracle_checksum(o.content_seed, o.size_bytes))).collect();
    let (mut cells, mut skipped, mut objects, mut failures) = (0, 0, 0, Vec::new());
    for strategy in all_strategies(MIB) {
        for backend in [Backend::Ring, Backend::Blocking] {
            for direct in [true, false] {
                for mode in [EmulationMode::Batched, EmulationMode::PerObjectImmediate] {
                    let cell = format!("{strategy}/{backend}/{}/{mode}", if direct { "direct" } else { "buffered" });
                    let dir = tempfile::tempdir().map_err(s)?;
                    let plan = plan_layout(&w, strategy, 4096, direct).map_err(s)?;
                    let cfg = engine(backend, direct);
                    let manifest = match write(dir.path(), &w, &plan, cfg, mode) {
                        Ok(m) => m,
                        Err(Error::DirectUnsupported { .. }) => {
                            println!("acceptance   {cell}: direct-unsupported, skipped");
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(format!("{cell}: {e}")),
                    };
                    cells += 1;
                    for e in &manifest.entries {
                        if expected[&e.object_id] != e.checksum {
                            failures.push(format!("{cell}: manifest checksum of object {}", e.object_id));
                        }
                    }
                    let out = restore(&restore_job(dir.path(), &manifest, cfg, mode, AllocMode::Pooled))
                        .map_err(|e| format!("{cell}: {e}"))?;
                    for r in &out.ranks {
                        objects += r.objects.len();
                    }
                    failures.extend(out.failures().map(|f| format!("{cell}: {f:?}")));
                    let report = verify_version(dir.path(), 0).map_err(s)?;
                    ensure(report.passed(), || format!("{cell}: offline verification failed"))?;
                }
            }
        }
    }
    ensure(failures.is_empty(), || format!("{} failures, first: {}", failures.len(), failures[0]))?;
    ensure(cells + skipped == 32, || format!("{cells} cells run"))?;
    ensure(objects == cells * w.objects.len(), || format!("{objects} objects restored"))?;
    Ok(format!("{cells}/32 cells, {objects}/{objects} objects verified, {skipped} direct-unsupported skips"))
}

fn random_profile(rng: &mut StdRng, trial: usize) -> ModelProfile {
    let ranks = rng.random_range(1..=6);
    let shards = rng.random_range(1..=5);
    let per_rank = (0..ranks)
        .map(|_| {
            let mut entries = Vec::new();
            for shard in 0..shards {
                if rng.random_bool(0.5) {
                    entries.push(ProfileEntry { shard, kind: ObjectKind::LeanObject, size_bytes: rng.random_range(1..=200_000) });
                }
                for _ in 0..rng.random_range(1..=6) {
                    let size = if rng.random_bool(0.2) { rng.random_range(1..=600) } else { rng.random_range(1..=3_000_000) };
                    entries.push(ProfileEntry { shard, kind: ObjectKind::Tensor, size_bytes: size });
                }
                if rng.random_bool(0.5) {
                    entries.push(ProfileEntry { shard, kind: ObjectKind::MetadataHeader, size_bytes: rng.random_range(1..=8192) });
                }
            }
            entries
        })
        .collect();
    ModelProfile { name: format!("random-{trial}"), num_ranks: ranks, per_rank, provenance: Provenance::Synthetic }
}

fn layout_violations(w: &WorkloadSpec, plan: &LayoutPlan, alignment: u64, direct: bool) -> Vec<String> {
    let mut v = Vec::new();
    let n = u64::from(w.num_ranks);
    let m = u64::from(w.shards_per_rank);
    let expected_files = match plan.strategy {
        AggregationStrategy::FilePerShard => n * m,
        AggregationStrategy::FilePerProcess => n,
        AggregationStrategy::SingleSharedFile => 1,
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes } => {
            w.objects.iter().map(|o| o.size_bytes.div_ceil(chunk_bytes)).sum()
        }
    };
    let keys: BTreeSet<&str> = plan.entries.iter().map(|e| e.file_key.as_str()).collect();
    if plan.file_count as u64 != expected_files || keys.len() as u64 != expected_files {
        v.push(format!("file count {} / {} keys, expected {expected_files}", plan.file_count, keys.len()));
    }
    for o in &w.objects {
        let pieces: Vec<_> = plan.entries.iter().filter(|e| e.object_id == o.object_id).collect();
        let expected = match plan.strategy {
            AggregationStrategy::FixedChunkFragmentation { chunk_bytes } => {
                if pieces.iter().any(|p| p.length_bytes > chunk_bytes) {
                    v.push(format!("object {} has a piece over the chunk size", o.object_id));
                }
                o.size_bytes.div_ceil(chunk_bytes) as usize
            }
            _ => 1,
        };
        if pieces.len() != expected || pieces.iter().map(|p| p.length_bytes).sum::<u64>() != o.size_bytes {
            v.push(format!("object {} placed as {} pieces", o.object_id, pieces.len()));
        }
    }
    let mut by_file: BTreeMap<&str, Vec<(u64, u64)>> = BTreeMap::new();
    let mut padding = 0;
    for e in &plan.entries {
        by_file.entry(&e.file_key).or_default().push((e.offset_bytes, e.padded_length_bytes));
        padding += e.padded_length_bytes - e.length_bytes;
        if direct {
            if e.offset_bytes % alignment != 0 || e.padded_length_bytes % alignment != 0 {
                v.push(format!("unaligned entry {e:?}"));
            }
            if e.padded_length_bytes < e.length_bytes || e.padded_length_bytes - e.length_bytes >= alignment {
                v.push(format!("bad padding {e:?}"));
            }
        } else if e.padded_length_bytes != e.length_bytes {
            v.push(format!("buffered entry padded {e:?}"));
        }
    }
    for (file, mut spans) in by_file {
        spans.sort();
        for pair in spans.windows(2) {
            if pair[0].0 + pair[0].1 > pair[1].0 {
                v.push(format!("overlap in {file}: {pair:?}"));
            }
        }
    }
    if padding > plan.entries.len() as u64 * (alignment - 1) {
        v.push(format!("padding {padding} over bound"));
    }
    v
}

fn layout_properties() -> Result<String, String> {
    let mut violations = Vec::new();
    let mut plans = 0;
    for trial in 0..1000 {
        let mut rng = StdRng::seed_from_u64(trial as u64);
        let profile = random_profile(&mut rng, trial);
        let w = generate_from_profile(&profile, trial as u64).map_err(s)?;
        let alignment = [512, 4096, 65536][rng.random_range(0..3)];
        let direct = rng.random_bool(0.5);
        let fragment = alignment * rng.random_range(1..=64);
        for strategy in all_strategies(fragment) {
            let plan = plan_layout(&w, strategy, alignment, direct).map_err(s)?;
            plans += 1;
            violations.extend(
                layout_violations(&w, &plan, alignment, direct).into_iter().map(|x| format!("trial {trial} {strategy}: {x}")),
            );
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!("1000 workloads, {plans} plans, 0 violations"))
}

fn bloom_3b_structure() -> Result<String, String> {
    let w = generate_from_profile(&builtin_profile("bloom-3b").ok_or("no bloom-3b profile")?, 1).map_err(s)?;
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).map_err(s)?;
    let total = w.total_bytes() as f64;
    let deviation = (total - 42e9).abs() / 42e9;
    ensure(plan.file_count == 132, || format!("{} files", plan.file_count))?;
    ensure(w.num_ranks == 4, || format!("{} ranks", w.num_ranks))?;
    ensure(deviation <= 0.005, || format!("total {total} deviates {:.3}%", deviation * 100.0))?;
    Ok(format!("132 files, {total:.0} bytes ({:.4}% from 42 GB), 4 ranks", deviation * 100.0))
}

/// Engine reads a rank issues when every placement entry is read once.
fn expected_reads(plan: &LayoutPlan, rank: u32) -> u64 {
    plan.rank_entries(rank).count() as u64
}

fn request_counts() -> Result<String, String> {
    // Plan level: 8 GiB per rank in 64 MiB tensors.
    let tensors_per_rank = (8 * GIB) / (64 * MIB);
    let big = generate_synthetic(8 * GIB, 64 * MIB, 4, 7).map_err(s)?;
    let plan = plan_layout(&big, AggregationStrategy::FilePerProcess, 4096, true).map_err(s)?;
    for rank in 0..4 {
        let c = WriteCounts::planned(&plan, rank);
        ensure(c.tensor == tensors_per_rank && c.tensor == 128, || format!("rank {rank}: {c:?}"))?;
        ensure(c.lean == 1 && c.metadata == 1, || format!("rank {rank}: {c:?}"))?;
    }

    // Executed at reduced tensor size: the engine must issue what the plan says.
    let small = generate_synthetic(128 * 64 * KIB, 64 * KIB, 2, 7).map_err(s)?;
    for strategy in [AggregationStrategy::FilePerProcess, AggregationStrategy::SingleSharedFile] {
        let dir = tempfile::tempdir().map_err(s)?;
        let plan = plan_layout(&small, strategy, 4096, true).map_err(s)?;
        let job = CheckpointJob {
            root: dir.path(),
            version: 0,
            workload: &small,
            plan: &plan,
            engine: engine(Backend::Ring, true),
            mode: EmulationMode::Batched,
        };
        let out = checkpoint(&job).map_err(s)?;
        for r in &out.ranks {
            ensure(r.writes.tensor == 128 && r.engine.write_ops == 130, || format!("{strategy} rank {}: {:?}", r.rank, r.writes))?;
        }
    }

    // Restore: one read per shard header, one per shard lean object, one per tensor.
    let tiny_7b = builtin_profile("llama-7b").ok_or("no llama-7b profile")?.scaled(1e-5).map_err(s)?;
    let workloads = [small, generate_from_profile(&tiny_7b, 3).map_err(s)?];
    let mut checked = Vec::new();
    for w in &workloads {
        let dir = tempfile::tempdir().map_err(s)?;
        let plan = plan_layout(w, AggregationStrategy::FilePerShard, 4096, true).map_err(s)?;
        let cfg = engine(Backend::Ring, true);
        let manifest = write(dir.path(), w, &plan, cfg, EmulationMode::PerObjectImmediate).map_err(s)?;
        for alloc in [AllocMode::PerObject, AllocMode::Pooled] {
            let out = restore(&restore_job(dir.path(), &manifest, cfg, EmulationMode::PerObjectImmediate, alloc)).map_err(s)?;
            ensure(out.passed(), || format!("{}: verification failed", w.name))?;
            for r in &out.ranks {
                let objects: Vec<_> = w.rank_objects(r.rank).collect();
                let shards: BTreeSet<u32> = objects.iter().map(|o| o.shard_index).collect();
                let headers = objects.iter().filter(|o| o.kind == ObjectKind::MetadataHeader).count() as u64;
                let leans = objects.iter().filter(|o| o.kind == ObjectKind::LeanObject).count() as u64;
                let tensors = objects.iter().filter(|o| o.kind == ObjectKind::Tensor).count() as u64;
                ensure(headers == shards.len() as u64 && leans == shards.len() as u64, || {
                    format!("{}: expected one header and one lean object per shard", w.name)
                })?;
                let expected = headers + leans + tensors;
                ensure(expected == expected_reads(&plan, r.rank), || "count model disagrees with plan".into())?;
                ensure(r.engine.read_ops == expected && r.reads.engine_reads() == expected, || {
                    format!("{} rank {} {alloc}: {} reads, expected {expected}", w.name, r.rank, r.engine.read_ops)
                })?;
                ensure(r.reads.manifest_loads == 1, || format!("{} manifest loads", r.reads.manifest_loads))?;
            }
        }
        checked.push(format!("{} ({} shards/rank)", w.name, w.shards_per_rank));
    }
    Ok(format!(
        "8 GiB/64 MiB plan: 128 tensor writes (+1 lean, +1 header) on each of 4 ranks; engine matched at 64 KiB scale; \
         restore reads = headers + lean + tensors exactly for {}",
        checked.join(", ")
    ))
}

fn allocation_modes() -> Result<String, String> {
    let w = generate_synthetic(98 * 48 * KIB, 48 * KIB, 1, 11).map_err(s)?;
    ensure(w.objects.len() == 100, || format!("{} objects", w.objects.len()))?;
    let dir = tempfile::tempdir().map_err(s)?;
    let cfg = engine(Backend::Ring, true);
    let plan = plan_layout(&w, AggregationStrategy::FilePerShard, 4096, true).map_err(s)?;
    let manifest = write(dir.path(), &w, &plan, cfg, EmulationMode::Batched).map_err(s)?;
    let mut lines = Vec::new();
    for mode in [EmulationMode::PerObjectImmediate, EmulationMode::Batched] {
        let fresh = restore(&restore_job(dir.path(), &manifest, cfg, mode, AllocMode::PerObject)).map_err(s)?;
        let pooled = restore(&restore_job(dir.path(), &manifest, cfg, mode, AllocMode::Pooled)).map_err(s)?;
        let (f, p) = (&fresh.ranks[0], &pooled.ranks[0]);
        ensure(f.alloc.allocations == 100, || format!("{mode}: per-object allocations {}", f.alloc.allocations))?;
        ensure(p.alloc.allocations <= 4, || format!("{mode}: pooled allocations {}", p.alloc.allocations))?;
        ensure(f.objects == p.objects && fresh.passed(), || format!("{mode}: verification results differ"))?;
        lines.push(format!(
            "{mode}: per-object {} allocations, pooled {} allocations + {} reuses",
            f.alloc.allocations, p.alloc.allocations, p.alloc.reuses
        ));
    }
    Ok(lines.join("; "))
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn backend_equivalence() -> Result<String, String> {
    let mut bytes = 0;
    for trial in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(1000 + trial);
        let ranks = rng.random_range(1..=3);
        let chunk = rng.random_range(1..=256) * KIB + rng.random_range(0..4096);
        let total = chunk * rng.random_range(1..=8) + rng.random_range(1..chunk);
        let w = generate_synthetic(total, chunk, ranks, trial).map_err(s)?;
        let strategy = all_strategies(64 * KIB)[rng.random_range(0..4)];
        let direct = rng.random_bool(0.5);
        let mode = match (strategy, rng.random_bool(0.5)) {
            (AggregationStrategy::FixedChunkFragmentation { .. }, true) => EmulationMode::FragmentedChunks,
            (_, true) => EmulationMode::PerObjectImmediate,
            _ => EmulationMode::Batched,
        };
        let plan = plan_layout(&w, strategy, 4096, direct).map_err(s)?;
        let (a, b) = (tempfile::tempdir().map_err(s)?, tempfile::tempdir().map_err(s)?);
        let ma = write(a.path(), &w, &plan, engine(Backend::Ring, direct), mode).map_err(s)?;
        let mb = write(b.path(), &w, &plan, engine(Backend::Blocking, direct), mode).map_err(s)?;
        let (fa, fb) = (files_under(a.path()), files_under(b.path()));
        let cell = format!("trial {trial} ({strategy}, {mode}, direct={direct})");
        ensure(!fa.is_empty() && fa.keys().eq(fb.keys()), || format!("{cell}: file sets differ"))?;
        for (path, data) in &fa {
            ensure(&fb[path] == data, || format!("{cell}: {} differs", path.display()))?;
            bytes += data.len();
        }
        ensure(ma.entries == mb.entries, || format!("{cell}: manifests differ"))?;
    }
    Ok(format!("20 workloads, {bytes} bytes compared, 0 differences"))
}

fn commit_point_safety() -> Result<String, String> {
    let strategies = ["file-per-shard", "file-per-process", "single-shared-file", "fragmented-chunks"];
    let mut unusable = 0;
    for trial in 0..10 {
        let dir = tempfile::tempdir().map_err(s)?;
        let data = dir.path().join("data");
        let status = Command::new(BIN)
            .args(["synthetic", "--total-size", "4MiB", "--chunk-size", "1MiB", "--ranks", "2", "--runs", "1"])
            .args(["--strategy", strategies[trial % 4], "--fragment-size", "512KiB"])
            .arg("--dir")
            .arg(&data)
            .arg("--out")
            .arg(dir.path().join("r.json"))
            .env("CKPTBENCH_FAULT", "abort-before-manifest")
            .env("CKPTBENCH_FAULT_RANK", (trial % 2).to_string())
            .output()
            .map_err(s)?;
        ensure(!status.status.success(), || format!("trial {trial}: run succeeded despite the fault"))?;
        let verify = Command::new(BIN).arg("verify").arg("--dir").arg(&data).output().map_err(s)?;
        let report = verify_version(&data, 0).map_err(s)?;
        let stdout = String::from_utf8_lossy(&verify.stdout);
        if verify.status.code() == Some(2) && stdout.contains("\"usable\": false") && !report.usable {
            unusable += 1;
        }
    }
    ensure(unusable == 10, || format!("{unusable}/10 trials reported unusable"))?;
    Ok("10/10 killed checkpoints reported unusable (no manifest)".into())
}

fn directional_smoke() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(s)?;
    let profile = ModelProfile {
        name: "small-objects".into(),
        num_ranks: 2,
        per_rank: (0..2)
            .map(|_| (0..500).map(|shard| ProfileEntry { shard, kind: ObjectKind::Tensor, size_bytes: 256 * KIB }).collect())
            .collect(),
        provenance: Provenance::Synthetic,
    };
    let profile_path = dir.path().join("small.txt");
    fs::write(&profile_path, profile.to_text()).map_err(s)?;
    let mut medians = Vec::new();
    for (strategy, emulation) in [("single-shared-file", "batched"), ("file-per-shard", "per-object")] {
        let out = dir.path().join(format!("{strategy}.json"));
        let o = Command::new(BIN)
            .arg("llm")
            .arg("--profile")
            .arg(&profile_path)
            .args(["--strategy", strategy, "--emulation", emulation, "--runs", "3", "--no-restore"])
            .arg("--dir")
            .arg(dir.path().join("data"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(s)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        let report = RunReport::load(&out).map_err(s)?;
        medians.push(report.aggregate.write_throughput_bytes_per_s.median);
    }
    let (shared, per_shard) = (medians[0], medians[1]);
    let detail = format!(
        "1000 x 256 KiB objects, median of 3: single-shared-file/batched {:.1} MiB/s vs file-per-shard/per-object {:.1} MiB/s ({:.2}x)",
        shared / MIB as f64,
        per_shard / MIB as f64,
        shared / per_shard
    );
    ensure(shared >= per_shard, || detail.clone())?;
    Ok(detail)
}
