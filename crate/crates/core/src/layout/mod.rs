//! Placement of workload objects into checkpoint files.
//!
//! File keys are relative to a checkpoint version directory:
//!
//! | strategy                    | file key                                   |
//! |-----------------------------|--------------------------------------------|
//! | file-per-shard              | `file-per-shard/rank<r>-shard<s>.bin`      |
//! | file-per-process            | `file-per-process/rank<r>.bin`             |
//! | single-shared-file          | `single-shared-file/shared.bin`            |
//! | fixed-chunk-fragmentation   | `fragmented-chunks/obj<id>/chunk<k>.bin`   |
//!
//! In direct mode every object starts on an alignment boundary and is padded
//! to a multiple of the alignment, so any single object can be read back with
//! direct I/O. Buffered plans pack objects back to back.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::{round_up, MIB};
use crate::workload::{ObjectKind, WorkloadSpec};
use crate::{Error, Result};

pub const DEFAULT_ALIGNMENT: u64 = 4096;
pub const DEFAULT_FRAGMENT_BYTES: u64 = 512 * MIB;
pub const SHARED_FILE_KEY: &str = "single-shared-file/shared.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AggregationStrategy {
    FilePerShard,
    FilePerProcess,
    SingleSharedFile,
    FixedChunkFragmentation { chunk_bytes: u64 },
}

impl AggregationStrategy {
    pub const AGGREGATION_SWEEP: [AggregationStrategy; 3] = [
        AggregationStrategy::FilePerShard,
        AggregationStrategy::FilePerProcess,
        AggregationStrategy::SingleSharedFile,
    ];

    pub fn fragmented() -> Self {
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes: DEFAULT_FRAGMENT_BYTES }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            AggregationStrategy::FilePerShard => "file-per-shard",
            AggregationStrategy::FilePerProcess => "file-per-process",
            AggregationStrategy::SingleSharedFile => "single-shared-file",
            AggregationStrategy::FixedChunkFragmentation { .. } => "fragmented-chunks",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file-per-shard" | "file-per-tensor" => Ok(AggregationStrategy::FilePerShard),
            "file-per-process" => Ok(AggregationStrategy::FilePerProcess),
            "single-shared-file" | "shared" => Ok(AggregationStrategy::SingleSharedFile),
            "fragmented-chunks" | "fixed-chunk-fragmentation" => Ok(AggregationStrategy::fragmented()),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementEntry {
    pub object_id: u64,
    pub rank: u32,
    pub kind: ObjectKind,
    pub file_key: String,
    pub offset_bytes: u64,
    pub length_bytes: u64,
    pub padded_length_bytes: u64,
    /// Position of this piece within its object; non-zero only for the
    /// later chunks of a fragmented object.
    pub object_offset: u64,
}

impl PlacementEntry {
    pub fn end(&self) -> u64 {
        self.offset_bytes + self.padded_length_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    pub strategy: AggregationStrategy,
    pub alignment_bytes: u64,
    pub direct: bool,
    pub entries: Vec<PlacementEntry>,
    pub file_count: usize,
    pub per_file_total: BTreeMap<String, u64>,
    /// Start of each rank's region in the shared file. Each value depends on
    /// every lower rank's padded total, which is the serialisation point the
    /// bench harness charges to coordination.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_base_offsets: Vec<u64>,
}

impl LayoutPlan {
    pub fn rank_entries(&self, rank: u32) -> impl Iterator<Item = &PlacementEntry> {
        self.entries.iter().filter(move |e| e.rank == rank)
    }

    /// Files touched by `rank`, in first-use order.
    pub fn rank_files(&self, rank: u32) -> Vec<&str> {
        let mut seen = Vec::<&str>::new();
        for e in self.rank_entries(rank) {
            if seen.last() != Some(&e.file_key.as_str()) && !seen.contains(&e.file_key.as_str()) {
                seen.push(&e.file_key);
            }
        }
        seen
    }

    pub fn rank_bytes(&self, rank: u32) -> u64 {
        self.rank_entries(rank).map(|e| e.padded_length_bytes).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn validate_alignment(alignment_bytes: u64) -> Result<()> {
    if alignment_bytes < 512 || !alignment_bytes.is_power_of_two() {
        return Err(Error::InvalidAlignment(alignment_bytes));
    }
    Ok(())
}

/// Aligned exclusive prefix sums: entry `r` is where rank `r` starts.
pub fn shared_file_prefix_sums(rank_totals: &[u64], alignment: u64) -> Vec<u64> {
    let mut bases = Vec::with_capacity(rank_totals.len());
    let mut cursor = 0u64;
    for &total in rank_totals {
        bases.push(cursor);
        cursor = round_up(cursor + total, alignment);
    }
    bases
}

pub fn plan_layout(
    workload: &WorkloadSpec,
    strategy: AggregationStrategy,
    alignment_bytes: u64,
    direct: bool,
) -> Result<LayoutPlan> {
    validate_alignment(alignment_bytes)?;
    if workload.objects.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    workload.validate()?;
    if let AggregationStrategy::FixedChunkFragmentation { chunk_bytes } = strategy {
        if chunk_bytes == 0 || chunk_bytes % alignment_bytes != 0 {
            return Err(Error::InvalidArgument(format!(
                "fragment size {chunk_bytes} must be a positive multiple of the alignment {alignment_bytes}"
            )));
        }
    }
    let pad = |len: u64| if direct { round_up(len, alignment_bytes) } else { len };

    let mut entries = Vec::with_capacity(workload.objects.len());
    let mut cursors: BTreeMap<String, u64> = BTreeMap::new();
    let mut rank_base_offsets = Vec::new();

    match strategy {
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes } => {
            for o in &workload.objects {
                let mut object_offset = 0;
                let mut k = 0;
                while object_offset < o.size_bytes {
                    let len = chunk_bytes.min(o.size_bytes - object_offset);
                    let file_key = format!("{}/obj{}/chunk{k}.bin", strategy.slug(), o.object_id);
                    cursors.insert(file_key.clone(), pad(len));
                    entries.push(PlacementEntry {
                        object_id: o.object_id,
                        rank: o.rank,
                        kind: o.kind,
                        file_key,
                        offset_bytes: 0,
                        length_bytes: len,
                        padded_length_bytes: pad(len),
                        object_offset,
                    });
                    object_offset += len;
                    k += 1;
                }
            }
        }
        AggregationStrategy::SingleSharedFile => {
            let file_key = SHARED_FILE_KEY.to_string();
            let rank_totals: Vec<u64> = (0..workload.num_ranks)
                .map(|r| workload.rank_objects(r).map(|o| pad(o.size_bytes)).sum())
                .collect();
            let boundary = if direct { alignment_bytes } else { 1 };
            rank_base_offsets = shared_file_prefix_sums(&rank_totals, boundary);
            let mut end = 0;
            for rank in 0..workload.num_ranks {
                let mut cursor = rank_base_offsets[rank as usize];
                for o in workload.rank_objects(rank) {
                    entries.push(whole(o, &file_key, cursor, pad(o.size_bytes)));
                    cursor += pad(o.size_bytes);
                }
                end = end.max(cursor);
            }
            cursors.insert(file_key, end);
        }
        AggregationStrategy::FilePerShard | AggregationStrategy::FilePerProcess => {
            for o in &workload.objects {
                let file_key = match strategy {
                    AggregationStrategy::FilePerShard => {
                        format!("{}/rank{}-shard{}.bin", strategy.slug(), o.rank, o.shard_index)
                    }
                    _ => format!("{}/rank{}.bin", strategy.slug(), o.rank),
                };
                let cursor = cursors.entry(file_key.clone()).or_insert(0);
                entries.push(whole(o, &file_key, *cursor, pad(o.size_bytes)));
                *cursor += pad(o.size_bytes);
            }
        }
    }

    let mut per_file_total: BTreeMap<String, u64> = cursors.keys().map(|k| (k.clone(), 0)).collect();
    for e in &entries {
        *per_file_total.get_mut(&e.file_key).expect("file registered") += e.padded_length_bytes;
    }

    Ok(LayoutPlan {
        strategy,
        alignment_bytes,
        direct,
        file_count: per_file_total.len(),
        per_file_total,
        entries,
        rank_base_offsets,
    })
}

fn whole(o: &crate::workload::ObjectSpec, file_key: &str, offset: u64, padded: u64) -> PlacementEntry {
    PlacementEntry {
        object_id: o.object_id,
        rank: o.rank,
        kind: o.kind,
        file_key: file_key.to_string(),
        offset_bytes: offset,
        length_bytes: o.size_bytes,
        padded_length_bytes: padded,
        object_offset: 0,
    }
}

pub fn total_padded_bytes(plan: &LayoutPlan) -> u64 {
    plan.entries.iter().map(|e| e.padded_length_bytes).sum()
}

pub fn total_object_bytes(plan: &LayoutPlan) -> u64 {
    plan.entries.iter().map(|e| e.length_bytes).sum()
}
