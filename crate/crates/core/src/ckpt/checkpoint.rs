use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::debug;
use serde::{Deserialize, Serialize};

use super::manifest::{Extent, Manifest, ManifestEntry};
use super::{manifest_path, request_error, version_dir, EmulationMode, NoHooks, PhaseHooks, Window};
use crate::engine::{AlignedBuf, Engine, EngineConfig, EngineStats, FileHandle, IoRequest, OpenMode};
use crate::layout::{AggregationStrategy, LayoutPlan, PlacementEntry, SHARED_FILE_KEY};
use crate::workload::{fill_at, Fnv1a};
use crate::workload::{ObjectKind, WorkloadSpec};
use crate::{Error, Result};

/// Everything a rank needs to write its part of one checkpoint version.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointJob<'a> {
    pub root: &'a Path,
    pub version: u64,
    pub workload: &'a WorkloadSpec,
    pub plan: &'a LayoutPlan,
    pub engine: EngineConfig,
    pub mode: EmulationMode,
}

impl CheckpointJob<'_> {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.plan.direct != self.engine.direct {
            return Err(Error::PlanMismatch(format!(
                "plan is for {} I/O but the engine is configured for {}",
                io_kind(self.plan.direct),
                io_kind(self.engine.direct)
            )));
        }
        if self.engine.direct && !self.plan.alignment_bytes.is_multiple_of(self.engine.alignment_bytes) {
            return Err(Error::PlanMismatch(format!(
                "plan alignment {} is not a multiple of engine alignment {}",
                self.plan.alignment_bytes, self.engine.alignment_bytes
            )));
        }
        if self.mode == EmulationMode::FragmentedChunks
            && !matches!(self.plan.strategy, AggregationStrategy::FixedChunkFragmentation { .. })
        {
            return Err(Error::PlanMismatch(format!(
                "fragmented emulation needs a fixed-chunk layout, got {}",
                self.plan.strategy.slug()
            )));
        }
        let planned: HashSet<u64> = self.plan.entries.iter().map(|e| e.object_id).collect();
        if planned.len() != self.workload.objects.len()
            || self.workload.objects.iter().any(|o| !planned.contains(&o.object_id))
        {
            return Err(Error::PlanMismatch("plan does not cover the workload's objects".into()));
        }
        Ok(())
    }
}

fn io_kind(direct: bool) -> &'static str {
    if direct {
        "direct"
    } else {
        "buffered"
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTimings {
    /// Generating lean (pickled-state) objects.
    pub serialize_s: f64,
    /// Generating and checksumming tensors and headers into write buffers.
    pub staging_s: f64,
    pub flush_s: f64,
    pub sync_s: f64,
    /// Writing and committing the manifest; zero on ranks that do not commit.
    pub manifest_s: f64,
    pub total_s: f64,
}

impl CheckpointTimings {
    pub fn stage_sum(&self) -> f64 {
        self.serialize_s + self.staging_s + self.flush_s + self.sync_s + self.manifest_s
    }

    /// The timed write window: flush plus sync.
    pub fn window_s(&self) -> f64 {
        self.flush_s + self.sync_s
    }
}

/// Write requests issued, by object kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteCounts {
    pub tensor: u64,
    pub lean: u64,
    pub metadata: u64,
}

impl WriteCounts {
    pub fn total(&self) -> u64 {
        self.tensor + self.lean + self.metadata
    }

    pub fn add(&mut self, kind: ObjectKind) {
        match kind {
            ObjectKind::Tensor => self.tensor += 1,
            ObjectKind::LeanObject => self.lean += 1,
            ObjectKind::MetadataHeader => self.metadata += 1,
        }
    }

    /// The write requests a rank issues for `plan`: one per placement entry.
    pub fn planned(plan: &LayoutPlan, rank: u32) -> Self {
        let mut counts = WriteCounts::default();
        for e in plan.rank_entries(rank) {
            counts.add(e.kind);
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheckpoint {
    pub rank: u32,
    pub bytes_written: u64,
    pub timings: CheckpointTimings,
    pub writes: WriteCounts,
    pub engine: EngineStats,
    pub files_touched: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct CheckpointOutcome {
    pub manifest: Manifest,
    pub ranks: Vec<RankCheckpoint>,
}

/// Removes any previous contents of the version directory and creates the
/// strategy directory. The shared file is created (and truncated) here so
/// ranks can open it without truncating each other's data.
pub fn prepare_version_dir(root: &Path, version: u64, plan: &LayoutPlan) -> Result<()> {
    let dir = version_dir(root, version);
    match fs::remove_dir_all(&dir) {
        Ok(()) => debug!("removed stale {}", dir.display()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::path(&dir, e)),
    }
    let strategy_dir = dir.join(plan.strategy.slug());
    fs::create_dir_all(&strategy_dir).map_err(|e| Error::path(&strategy_dir, e))?;
    if plan.strategy == AggregationStrategy::SingleSharedFile {
        let shared = dir.join(SHARED_FILE_KEY);
        File::create(&shared).map_err(|e| Error::path(&shared, e))?;
    }
    Ok(())
}

struct Staged<'p> {
    placement: &'p PlacementEntry,
    buf: AlignedBuf,
}

/// Writes one rank's objects. `hooks` run around the timed flush+sync window.
/// The manifest is not written; see [`commit_manifest`].
pub fn checkpoint_rank(job: &CheckpointJob<'_>, rank: u32, hooks: &mut dyn PhaseHooks) -> Result<RankCheckpoint> {
    job.validate()?;
    let total_start = Instant::now();
    let mut timings = CheckpointTimings::default();
    let align = job.engine.alignment_bytes as usize;
    let dir = version_dir(job.root, job.version);

    let placements: Vec<&PlacementEntry> = job.plan.rank_entries(rank).collect();
    let mut hashers: BTreeMap<u64, Fnv1a> = BTreeMap::new();
    let mut staged = Vec::with_capacity(placements.len());
    for p in &placements {
        let start = Instant::now();
        let object = job.workload.object(p.object_id).expect("plan validated against workload");
        let len = p.length_bytes as usize;
        let buf_len = if job.plan.direct { p.padded_length_bytes as usize } else { len };
        let mut buf = AlignedBuf::new(buf_len, align);
        fill_at(&mut buf[..len], object.content_seed, p.object_offset);
        hashers.entry(p.object_id).or_default().update(&buf[..len]);
        let elapsed = start.elapsed().as_secs_f64();
        match p.kind {
            ObjectKind::LeanObject => timings.serialize_s += elapsed,
            _ => timings.staging_s += elapsed,
        }
        staged.push(Staged { placement: p, buf });
    }

    let mut engine = Engine::new(job.engine)?;
    hooks.before_window(Window::Write)?;
    let flush_start = Instant::now();
    let mut files = FileTable::new(&dir, job.plan.strategy);
    let mut writes = WriteCounts::default();
    let mut bytes_written = 0;
    match job.mode {
        EmulationMode::Batched => {
            let mut batch = Vec::with_capacity(staged.len());
            for (tag, s) in staged.into_iter().enumerate() {
                let handle = files.open(&mut engine, &s.placement.file_key)?;
                writes.add(s.placement.kind);
                batch.push(IoRequest::write(handle, s.placement.offset_bytes, s.buf, tag as u64));
            }
            engine.submit_batch(batch)?;
            for record in engine.drain()? {
                bytes_written += check_write(&record, &placements)?;
            }
        }
        EmulationMode::PerObjectImmediate | EmulationMode::FragmentedChunks => {
            for (tag, s) in staged.into_iter().enumerate() {
                let handle = files.open(&mut engine, &s.placement.file_key)?;
                writes.add(s.placement.kind);
                engine.submit(IoRequest::write(handle, s.placement.offset_bytes, s.buf, tag as u64))?;
                for record in engine.await_completions(0)? {
                    bytes_written += check_write(&record, &placements)?;
                }
            }
            for record in engine.drain()? {
                bytes_written += check_write(&record, &placements)?;
            }
        }
    }
    timings.flush_s = flush_start.elapsed().as_secs_f64();

    let sync_start = Instant::now();
    for handle in files.handles() {
        engine.sync_file(handle)?;
        engine.close_file(handle)?;
    }
    timings.sync_s = sync_start.elapsed().as_secs_f64();
    hooks.after_window(Window::Write)?;

    let entries = manifest_entries(job.workload, &placements, hashers);
    timings.total_s = total_start.elapsed().as_secs_f64();
    Ok(RankCheckpoint {
        rank,
        bytes_written,
        timings,
        writes,
        engine: engine.stats(),
        files_touched: files.len(),
        entries,
    })
}

fn check_write(record: &crate::engine::CompletionRecord, placements: &[&PlacementEntry]) -> Result<u64> {
    if let Some(err) = record.error {
        let p = placements[record.tag as usize];
        return Err(request_error(
            format!("writing object {} to {} at offset {}", p.object_id, p.file_key, p.offset_bytes),
            err,
        ));
    }
    Ok(record.bytes_transferred)
}

fn manifest_entries(
    workload: &WorkloadSpec,
    placements: &[&PlacementEntry],
    hashers: BTreeMap<u64, Fnv1a>,
) -> Vec<ManifestEntry> {
    let mut extents: BTreeMap<u64, Vec<Extent>> = BTreeMap::new();
    for p in placements {
        extents.entry(p.object_id).or_default().push(Extent {
            file_key: p.file_key.clone(),
            offset: p.offset_bytes,
            length: p.length_bytes,
            padded_length: p.padded_length_bytes,
        });
    }
    hashers
        .into_iter()
        .map(|(id, hasher)| {
            let object = workload.object(id).expect("plan validated against workload");
            ManifestEntry {
                object_id: id,
                rank: object.rank,
                shard: object.shard_index,
                kind: object.kind,
                length: object.size_bytes,
                checksum: hasher.finish(),
                extents: extents.remove(&id).unwrap_or_default(),
            }
        })
        .collect()
}

/// Files opened by one rank, keyed by file key. Fragment directories are
/// created on first use, inside the timed window.
pub(super) struct FileTable<'a> {
    dir: &'a Path,
    strategy: AggregationStrategy,
    open: HashMap<String, FileHandle>,
    order: Vec<FileHandle>,
    created_dirs: HashSet<std::path::PathBuf>,
}

impl<'a> FileTable<'a> {
    pub fn new(dir: &'a Path, strategy: AggregationStrategy) -> Self {
        FileTable { dir, strategy, open: HashMap::new(), order: Vec::new(), created_dirs: HashSet::new() }
    }

    pub fn open(&mut self, engine: &mut Engine, key: &str) -> Result<FileHandle> {
        self.open_with(engine, key, None)
    }

    pub fn open_read(&mut self, engine: &mut Engine, key: &str) -> Result<FileHandle> {
        self.open_with(engine, key, Some(OpenMode::ReadOnly))
    }

    fn open_with(&mut self, engine: &mut Engine, key: &str, mode: Option<OpenMode>) -> Result<FileHandle> {
        if let Some(&h) = self.open.get(key) {
            return Ok(h);
        }
        let path = self.dir.join(key);
        let mode = match mode {
            Some(m) => m,
            None if self.strategy == AggregationStrategy::SingleSharedFile => OpenMode::WriteShared,
            None => {
                if let Some(parent) = path.parent() {
                    if self.created_dirs.insert(parent.to_path_buf()) {
                        fs::create_dir_all(parent).map_err(|e| Error::path(parent, e))?;
                    }
                }
                OpenMode::WriteCreate
            }
        };
        let h = engine.open_file(&path, mode)?;
        self.open.insert(key.to_string(), h);
        self.order.push(h);
        Ok(h)
    }

    pub fn handles(&self) -> Vec<FileHandle> {
        self.order.clone()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }
}

/// Gathers every rank's entries into a manifest and commits it. Returns the
/// manifest and the time spent writing it.
pub fn commit_manifest(job: &CheckpointJob<'_>, mut entries: Vec<ManifestEntry>) -> Result<(Manifest, f64)> {
    let start = Instant::now();
    entries.sort_by_key(|e| e.object_id);
    let expected = job.workload.objects.len();
    if entries.len() != expected {
        return Err(Error::PlanMismatch(format!("gathered {} manifest entries, expected {expected}", entries.len())));
    }
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let manifest = Manifest::new(
        job.version,
        job.workload.name.clone(),
        job.workload.num_ranks,
        job.plan.strategy,
        job.plan.alignment_bytes,
        job.plan.direct,
        created,
        entries,
    );
    manifest.store(&manifest_path(job.root, job.version))?;
    Ok((manifest, start.elapsed().as_secs_f64()))
}

/// Runs every rank in turn in this process, then commits the manifest.
pub fn checkpoint(job: &CheckpointJob<'_>) -> Result<CheckpointOutcome> {
    job.validate()?;
    prepare_version_dir(job.root, job.version, job.plan)?;
    let mut ranks = Vec::with_capacity(job.workload.num_ranks as usize);
    for rank in 0..job.workload.num_ranks {
        ranks.push(checkpoint_rank(job, rank, &mut NoHooks)?);
    }
    let entries = ranks.iter().flat_map(|r| r.entries.iter().cloned()).collect();
    let (manifest, manifest_s) = commit_manifest(job, entries)?;
    if let Some(first) = ranks.first_mut() {
        first.timings.manifest_s = manifest_s;
        first.timings.total_s += manifest_s;
    }
    Ok(CheckpointOutcome { manifest, ranks })
}
