use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::FileTable;
use super::manifest::{Manifest, ManifestEntry};
use super::{manifest_path, version_dir, AllocMode, EmulationMode, NoHooks, PhaseClock, PhaseHooks, Window};
use crate::engine::{
    touch_pages, AlignedBuf, AllocCounters, BufferPool, CompletionRecord, Engine, EngineConfig, EngineStats, IoRequest,
    RequestError,
};
use crate::layout::AggregationStrategy;
use crate::workload::checksum;
use crate::workload::ObjectKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RestoreJob<'a> {
    pub root: &'a Path,
    pub manifest: &'a Manifest,
    pub engine: EngineConfig,
    pub mode: EmulationMode,
    pub alloc: AllocMode,
    pub pool_regions: usize,
    pub region_bytes: usize,
}

impl RestoreJob<'_> {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        let m = self.manifest;
        if self.engine.direct && !m.direct {
            return Err(Error::PlanMismatch(
                "a buffered checkpoint is not padded for direct reads".into(),
            ));
        }
        if self.engine.direct && !m.alignment_bytes.is_multiple_of(self.engine.alignment_bytes) {
            return Err(Error::PlanMismatch(format!(
                "checkpoint alignment {} is not a multiple of engine alignment {}",
                m.alignment_bytes, self.engine.alignment_bytes
            )));
        }
        if self.mode == EmulationMode::FragmentedChunks
            && !matches!(m.strategy, AggregationStrategy::FixedChunkFragmentation { .. })
        {
            return Err(Error::PlanMismatch(format!(
                "fragmented emulation needs a fixed-chunk checkpoint, got {}",
                m.strategy.slug()
            )));
        }
        if self.alloc == AllocMode::Pooled {
            if self.pool_regions == 0 || self.region_bytes == 0 {
                return Err(Error::InvalidArgument("buffer pool needs at least one non-empty region".into()));
            }
            if !(self.region_bytes as u64).is_multiple_of(self.engine.alignment_bytes) {
                return Err(Error::InvalidArgument(format!(
                    "region size {} is not a multiple of the alignment {}",
                    self.region_bytes, self.engine.alignment_bytes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RestoreTimings {
    pub manifest_s: f64,
    pub metadata_s: f64,
    pub lean_s: f64,
    /// Tensor reads, or every read when batched restore coalesces them.
    pub read_s: f64,
    pub allocation_s: f64,
    /// Copies from read buffers into object destinations.
    pub staging_s: f64,
    /// Checksum verification, after the read window.
    pub verify_s: f64,
    pub total_s: f64,
}

impl RestoreTimings {
    /// The timed read window; the stages partition it.
    pub fn window_s(&self) -> f64 {
        self.manifest_s + self.metadata_s + self.lean_s + self.read_s + self.allocation_s + self.staging_s
    }

    pub fn stage_sum(&self) -> f64 {
        self.window_s() + self.verify_s
    }
}

/// Reads issued, by purpose. `manifest_loads` go through the filesystem
/// rather than the engine; the other counters add up to the engine's reads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadCounts {
    pub manifest_loads: u64,
    pub metadata: u64,
    pub lean: u64,
    pub tensor: u64,
    pub coalesced: u64,
}

impl ReadCounts {
    pub fn engine_reads(&self) -> u64 {
        self.metadata + self.lean + self.tensor + self.coalesced
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ObjectStatus {
    Pass,
    ChecksumMismatch { expected: String, actual: String },
    ShortRead { expected: u64, got: u64 },
    IoError { message: String },
    MissingFile { file_key: String },
}

impl ObjectStatus {
    pub fn is_pass(&self) -> bool {
        *self == ObjectStatus::Pass
    }

    pub(super) fn mismatch(expected: u64, actual: u64) -> Self {
        ObjectStatus::ChecksumMismatch { expected: format!("0x{expected:016x}"), actual: format!("0x{actual:016x}") }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectVerification {
    pub object_id: u64,
    pub rank: u32,
    pub kind: ObjectKind,
    pub length: u64,
    #[serde(flatten)]
    pub status: ObjectStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRestore {
    pub rank: u32,
    pub bytes_restored: u64,
    pub timings: RestoreTimings,
    pub reads: ReadCounts,
    pub alloc: AllocCounters,
    pub engine: EngineStats,
    pub objects: Vec<ObjectVerification>,
}

impl RankRestore {
    pub fn passed(&self) -> bool {
        self.objects.iter().all(|o| o.status.is_pass())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ObjectVerification> {
        self.objects.iter().filter(|o| !o.status.is_pass())
    }
}

#[derive(Debug, Clone)]
pub struct RestoreOutcome {
    pub ranks: Vec<RankRestore>,
}

impl RestoreOutcome {
    pub fn passed(&self) -> bool {
        self.ranks.iter().all(RankRestore::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ObjectVerification> {
        self.ranks.iter().flat_map(RankRestore::failures)
    }
}

const MANIFEST: usize = 0;
const METADATA: usize = 1;
const LEAN: usize = 2;
const READ: usize = 3;
const ALLOCATION: usize = 4;
const STAGING: usize = 5;

/// Part of a read that belongs to one object.
#[derive(Debug, Clone, Copy)]
struct Piece {
    object: usize,
    dest_offset: usize,
    buf_offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReadKind {
    Object(ObjectKind),
    Coalesced,
}

#[derive(Debug)]
struct PlannedRead<'m> {
    file_key: &'m str,
    offset: u64,
    len: usize,
    kind: ReadKind,
    pieces: Vec<Piece>,
}

struct Destination {
    data: Vec<u8>,
    received: u64,
    error: Option<String>,
}

/// One request per extent, split into region-sized reads when a pooled
/// region is smaller than the extent.
fn extent_reads<'m>(
    entries: &[&'m ManifestEntry],
    object: usize,
    direct: bool,
    max_read: Option<usize>,
) -> Vec<PlannedRead<'m>> {
    let entry = entries[object];
    let mut reads = Vec::new();
    let mut dest = 0usize;
    for ext in &entry.extents {
        let span = if direct { ext.padded_length } else { ext.length } as usize;
        let step = max_read.unwrap_or(span).max(1);
        let mut at = 0usize;
        while at < span {
            let len = step.min(span - at);
            let data = (ext.length as usize).saturating_sub(at).min(len);
            if data > 0 {
                reads.push(PlannedRead {
                    file_key: &ext.file_key,
                    offset: ext.offset + at as u64,
                    len,
                    kind: ReadKind::Object(entry.kind),
                    pieces: vec![Piece { object, dest_offset: dest + at, buf_offset: 0, len: data }],
                });
            }
            at += len;
        }
        dest += ext.length as usize;
    }
    reads
}

/// Merges physically contiguous extents of each file into runs and covers
/// each run with region-sized windows.
fn coalesced_reads<'m>(entries: &[&'m ManifestEntry], region: usize) -> Vec<PlannedRead<'m>> {
    struct Span {
        offset: u64,
        padded: u64,
        data: u64,
        object: usize,
        dest: usize,
    }
    let mut by_file: BTreeMap<&str, Vec<Span>> = BTreeMap::new();
    for (object, entry) in entries.iter().enumerate() {
        let mut dest = 0usize;
        for ext in &entry.extents {
            by_file.entry(&ext.file_key).or_default().push(Span {
                offset: ext.offset,
                padded: ext.padded_length,
                data: ext.length,
                object,
                dest,
            });
            dest += ext.length as usize;
        }
    }
    let mut reads = Vec::new();
    for (file_key, mut spans) in by_file {
        spans.sort_by_key(|s| s.offset);
        let mut i = 0;
        while i < spans.len() {
            let mut j = i + 1;
            while j < spans.len() && spans[j].offset == spans[j - 1].offset + spans[j - 1].padded {
                j += 1;
            }
            let run = &spans[i..j];
            let start = run[0].offset;
            let end = run[run.len() - 1].offset + run[run.len() - 1].padded;
            let mut w = start;
            while w < end {
                let len = (region as u64).min(end - w);
                let pieces = run
                    .iter()
                    .filter_map(|s| {
                        let lo = s.offset.max(w);
                        let hi = (s.offset + s.data).min(w + len);
                        (lo < hi).then(|| Piece {
                            object: s.object,
                            dest_offset: s.dest + (lo - s.offset) as usize,
                            buf_offset: (lo - w) as usize,
                            len: (hi - lo) as usize,
                        })
                    })
                    .collect();
                reads.push(PlannedRead { file_key, offset: w, len: len as usize, kind: ReadKind::Coalesced, pieces });
                w += len;
            }
            i = j;
        }
    }
    reads
}

/// Objects grouped by shard; within a shard the header comes first, then the
/// lean object, then tensors.
fn serial_order(entries: &[&ManifestEntry]) -> Vec<usize> {
    let rank_of = |k: ObjectKind| match k {
        ObjectKind::MetadataHeader => 0,
        ObjectKind::LeanObject => 1,
        ObjectKind::Tensor => 2,
    };
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| (entries[i].shard, rank_of(entries[i].kind), entries[i].object_id));
    order
}

enum Buffers {
    Pool(BufferPool),
    Fresh { align: usize, allocations: u64 },
}

impl Buffers {
    fn try_get(&mut self, len: usize) -> Option<AlignedBuf> {
        match self {
            Buffers::Pool(pool) => pool.try_acquire(),
            Buffers::Fresh { align, allocations } => {
                *allocations += 1;
                Some(AlignedBuf::new(len, *align))
            }
        }
    }

    fn put(&self, buf: AlignedBuf) -> Result<()> {
        match self {
            Buffers::Pool(pool) => pool.release(buf),
            Buffers::Fresh { .. } => Ok(()),
        }
    }

    fn counters(&self) -> AllocCounters {
        match self {
            Buffers::Pool(pool) => pool.counters(),
            Buffers::Fresh { allocations, .. } => AllocCounters { allocations: *allocations, reuses: 0 },
        }
    }
}

struct Reader<'m> {
    reads: Vec<PlannedRead<'m>>,
    dests: Vec<Destination>,
    buffers: Buffers,
    clock: PhaseClock<6>,
}

impl Reader<'_> {
    fn acquire(&mut self, len: usize) -> Option<AlignedBuf> {
        let prev = self.clock.enter(ALLOCATION);
        let buf = self.buffers.try_get(len);
        self.clock.enter(prev);
        buf
    }

    fn complete(&mut self, record: CompletionRecord) -> Result<()> {
        let prev = self.clock.enter(STAGING);
        let read = &self.reads[record.tag as usize];
        let got = record.bytes_transferred as usize;
        for p in &read.pieces {
            let n = got.saturating_sub(p.buf_offset).min(p.len);
            let dest = &mut self.dests[p.object];
            dest.data[p.dest_offset..p.dest_offset + n].copy_from_slice(&record.buf[p.buf_offset..p.buf_offset + n]);
            dest.received += n as u64;
            if let Some(err) = record.error {
                if err != RequestError::UnexpectedEof && dest.error.is_none() {
                    dest.error = Some(format!("{} at offset {}: {err}", read.file_key, read.offset));
                }
            }
        }
        self.buffers.put(record.buf)?;
        self.clock.enter(prev);
        Ok(())
    }
}

/// Reads back one rank's objects and verifies them. Destination buffers are
/// allocated before the timed window; `hooks` run around it.
pub fn restore_rank(job: &RestoreJob<'_>, rank: u32, hooks: &mut dyn PhaseHooks) -> Result<RankRestore> {
    job.validate()?;
    let total_start = Instant::now();
    let entries: Vec<&ManifestEntry> = job.manifest.rank_entries(rank).collect();
    let direct = job.engine.direct;
    let align = job.engine.alignment_bytes as usize;
    let pooled = job.alloc == AllocMode::Pooled;
    let coalesce = job.mode == EmulationMode::Batched && pooled;

    let reads = if coalesce {
        coalesced_reads(&entries, job.region_bytes)
    } else {
        let order: Vec<usize> = if job.mode == EmulationMode::Batched {
            (0..entries.len()).collect()
        } else {
            serial_order(&entries)
        };
        let max_read = pooled.then_some(job.region_bytes);
        order.into_iter().flat_map(|i| extent_reads(&entries, i, direct, max_read)).collect()
    };
    let mut counts = ReadCounts::default();
    for r in &reads {
        match r.kind {
            ReadKind::Coalesced => counts.coalesced += 1,
            ReadKind::Object(ObjectKind::MetadataHeader) => counts.metadata += 1,
            ReadKind::Object(ObjectKind::LeanObject) => counts.lean += 1,
            ReadKind::Object(ObjectKind::Tensor) => counts.tensor += 1,
        }
    }
    let dests = entries
        .iter()
        .map(|e| {
            let mut data = vec![0u8; e.length as usize];
            touch_pages(&mut data);
            Destination { data, received: 0, error: None }
        })
        .collect();
    let buffers = if pooled {
        let pool = BufferPool::new(job.region_bytes, job.pool_regions, align)?;
        pool.prefill();
        Buffers::Pool(pool)
    } else {
        Buffers::Fresh { align, allocations: 0 }
    };
    let mut engine = Engine::new(job.engine)?;
    let dir = version_dir(job.root, job.manifest.checkpoint_version);
    let mut files = FileTable::new(&dir, job.manifest.strategy);

    hooks.before_window(Window::Read)?;
    let mut reader = Reader { reads, dests, buffers, clock: PhaseClock::start(MANIFEST) };

    let path = manifest_path(job.root, job.manifest.checkpoint_version);
    let text = fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
    let on_disk = Manifest::parse(&text)?;
    counts.manifest_loads += 1;
    if on_disk.entries != job.manifest.entries {
        return Err(Error::ShortManifest("manifest on disk differs from the one being restored".into()));
    }

    if job.mode == EmulationMode::Batched {
        reader.clock.enter(READ);
        let mut batch = Vec::new();
        for tag in 0..reader.reads.len() {
            let (key, offset, len) = {
                let r = &reader.reads[tag];
                (r.file_key, r.offset, r.len)
            };
            let handle = files.open_read(&mut engine, key)?;
            let buf = loop {
                if let Some(buf) = reader.acquire(len) {
                    break buf;
                }
                if !batch.is_empty() {
                    engine.submit_batch(std::mem::take(&mut batch))?;
                }
                for record in engine.await_completions(1)? {
                    reader.complete(record)?;
                }
            };
            batch.push(IoRequest::read(handle, offset, buf, len, tag as u64));
        }
        if !batch.is_empty() {
            engine.submit_batch(batch)?;
        }
        for record in engine.drain()? {
            reader.complete(record)?;
        }
    } else {
        for tag in 0..reader.reads.len() {
            let (key, offset, len, kind) = {
                let r = &reader.reads[tag];
                (r.file_key, r.offset, r.len, r.kind)
            };
            reader.clock.enter(match kind {
                ReadKind::Object(ObjectKind::MetadataHeader) => METADATA,
                ReadKind::Object(ObjectKind::LeanObject) => LEAN,
                _ => READ,
            });
            let handle = files.open_read(&mut engine, key)?;
            let buf = reader.acquire(len).expect("no reads outstanding in serial restore");
            engine.submit(IoRequest::read(handle, offset, buf, len, tag as u64))?;
            for record in engine.await_completions(1)? {
                reader.complete(record)?;
            }
        }
    }
    let alloc = reader.buffers.counters();
    let phases = reader.clock.finish();
    hooks.after_window(Window::Read)?;

    let verify_start = Instant::now();
    let mut bytes_restored = 0;
    let objects = entries
        .iter()
        .zip(reader.dests)
        .map(|(entry, dest)| {
            bytes_restored += dest.received;
            let status = if let Some(message) = dest.error {
                ObjectStatus::IoError { message }
            } else if dest.received < entry.length {
                ObjectStatus::ShortRead { expected: entry.length, got: dest.received }
            } else {
                let actual = checksum(&dest.data);
                if actual == entry.checksum {
                    ObjectStatus::Pass
                } else {
                    ObjectStatus::mismatch(entry.checksum, actual)
                }
            };
            ObjectVerification { object_id: entry.object_id, rank, kind: entry.kind, length: entry.length, status }
        })
        .collect();
    let timings = RestoreTimings {
        manifest_s: phases[MANIFEST],
        metadata_s: phases[METADATA],
        lean_s: phases[LEAN],
        read_s: phases[READ],
        allocation_s: phases[ALLOCATION],
        staging_s: phases[STAGING],
        verify_s: verify_start.elapsed().as_secs_f64(),
        total_s: total_start.elapsed().as_secs_f64(),
    };
    Ok(RankRestore { rank, bytes_restored, timings, reads: counts, alloc, engine: engine.stats(), objects })
}

/// Restores every rank in turn in this process.
pub fn restore(job: &RestoreJob<'_>) -> Result<RestoreOutcome> {
    job.validate()?;
    let ranks = (0..job.manifest.num_ranks)
        .map(|rank| restore_rank(job, rank, &mut NoHooks))
        .collect::<Result<_>>()?;
    Ok(RestoreOutcome { ranks })
}
