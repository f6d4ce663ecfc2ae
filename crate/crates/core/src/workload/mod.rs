//! Checkpoint workloads: which objects each rank holds, how large they are,
//! and the seeds their content is generated from.

mod content;
mod profile;

pub use content::{
    checksum, derive_seed, expected_checksum, fill_at, fill_buffer, mix64, stream_word, Fnv1a,
};
pub use profile::{builtin_profile, load_profile, ModelProfile, ProfileEntry, BUILTIN_PROFILES};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::KIB;
use crate::{Error, Result};

/// Default size of the serialized remainder of a shard once tensors are detached.
pub const DEFAULT_LEAN_BYTES: u64 = 64 * KIB;
/// Default size of a shard's metadata header.
pub const DEFAULT_HEADER_BYTES: u64 = 4 * KIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Tensor,
    LeanObject,
    MetadataHeader,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Tensor => "tensor",
            ObjectKind::LeanObject => "lean",
            ObjectKind::MetadataHeader => "metadata",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tensor" | "t" => Ok(ObjectKind::Tensor),
            "lean" | "lean-object" | "leanobject" => Ok(ObjectKind::LeanObject),
            "metadata" | "meta" | "header" | "metadata-header" => Ok(ObjectKind::MetadataHeader),
            other => Err(Error::InvalidArgument(format!("unknown object kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: u64,
    pub rank: u32,
    pub shard_index: u32,
    pub kind: ObjectKind,
    pub size_bytes: u64,
    pub content_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    /// Built-in profiles reproduce published aggregates, not exact file lists.
    BuiltIn { approximate: bool },
    File { path: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Synthetic => f.write_str("synthetic"),
            Provenance::BuiltIn { approximate: true } => f.write_str("built-in (approximate)"),
            Provenance::BuiltIn { approximate: false } => f.write_str("built-in"),
            Provenance::File { path } => write!(f, "loaded-from-file ({path})"),
        }
    }
}

/// Objects are listed rank by rank, shard by shard, in on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub num_ranks: u32,
    pub shards_per_rank: u32,
    pub objects: Vec<ObjectSpec>,
    pub master_seed: u64,
    pub provenance: Provenance,
}

impl WorkloadSpec {
    pub fn rank_objects(&self, rank: u32) -> impl Iterator<Item = &ObjectSpec> {
        self.objects.iter().filter(move |o| o.rank == rank)
    }

    pub fn rank_bytes(&self, rank: u32) -> u64 {
        self.rank_objects(rank).map(|o| o.size_bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.objects.iter().map(|o| o.size_bytes).sum()
    }

    /// Bytes held by lean objects and metadata headers.
    pub fn overhead_bytes(&self) -> u64 {
        self.objects
            .iter()
            .filter(|o| o.kind != ObjectKind::Tensor)
            .map(|o| o.size_bytes)
            .sum()
    }

    pub fn object(&self, object_id: u64) -> Option<&ObjectSpec> {
        // Ids are dense and ordered for generated workloads.
        match self.objects.get(object_id as usize) {
            Some(o) if o.object_id == object_id => Some(o),
            _ => self.objects.iter().find(|o| o.object_id == object_id),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ranks == 0 || self.shards_per_rank == 0 {
            return Err(Error::InvalidArgument("workload needs at least one rank and shard".into()));
        }
        if self.objects.is_empty() {
            return Err(Error::EmptyWorkload);
        }
        let mut ids = HashSet::new();
        let mut singletons = HashSet::new();
        for o in &self.objects {
            if o.size_bytes == 0 {
                return Err(Error::InvalidArgument(format!("object {} is empty", o.object_id)));
            }
            if o.rank >= self.num_ranks || o.shard_index >= self.shards_per_rank {
                return Err(Error::InvalidArgument(format!(
                    "object {} placed on rank {} shard {} outside {}x{}",
                    o.object_id, o.rank, o.shard_index, self.num_ranks, self.shards_per_rank
                )));
            }
            if !ids.insert(o.object_id) {
                return Err(Error::InvalidArgument(format!("duplicate object id {}", o.object_id)));
            }
            if o.kind != ObjectKind::Tensor && !singletons.insert((o.rank, o.shard_index, o.kind)) {
                return Err(Error::InvalidArgument(format!(
                    "rank {} shard {} has more than one {}",
                    o.rank, o.shard_index, o.kind
                )));
            }
        }
        Ok(())
    }
}

/// One shard per rank: a lean object, `ceil(total / chunk)` tensors of
/// `chunk_bytes` (the last may be shorter) and a metadata header.
pub fn generate_synthetic(
    total_bytes_per_rank: u64,
    chunk_bytes: u64,
    num_ranks: u32,
    master_seed: u64,
) -> Result<WorkloadSpec> {
    if total_bytes_per_rank == 0 || chunk_bytes == 0 || num_ranks == 0 {
        return Err(Error::InvalidArgument("sizes and rank count must be positive".into()));
    }
    if chunk_bytes > total_bytes_per_rank {
        return Err(Error::InvalidArgument(format!(
            "chunk of {chunk_bytes} bytes exceeds the {total_bytes_per_rank}-byte total"
        )));
    }
    let tensors = total_bytes_per_rank.div_ceil(chunk_bytes);
    let mut builder = Builder::new(master_seed);
    for rank in 0..num_ranks {
        builder.push(rank, 0, ObjectKind::LeanObject, DEFAULT_LEAN_BYTES);
        for i in 0..tensors {
            let size = chunk_bytes.min(total_bytes_per_rank - i * chunk_bytes);
            builder.push(rank, 0, ObjectKind::Tensor, size);
        }
        builder.push(rank, 0, ObjectKind::MetadataHeader, DEFAULT_HEADER_BYTES);
    }
    Ok(WorkloadSpec {
        name: format!("synthetic-{total_bytes_per_rank}x{num_ranks}"),
        num_ranks,
        shards_per_rank: 1,
        objects: builder.objects,
        master_seed,
        provenance: Provenance::Synthetic,
    })
}

/// One object per profile entry, in profile order.
pub fn generate_from_profile(profile: &ModelProfile, master_seed: u64) -> Result<WorkloadSpec> {
    profile.validate()?;
    let shards = profile.shards_per_rank();
    let mut builder = Builder::new(master_seed);
    for (rank, entries) in profile.per_rank.iter().enumerate() {
        for e in entries {
            builder.push(rank as u32, e.shard, e.kind, e.size_bytes);
        }
    }
    let workload = WorkloadSpec {
        name: profile.name.clone(),
        num_ranks: profile.num_ranks,
        shards_per_rank: shards,
        objects: builder.objects,
        master_seed,
        provenance: profile.provenance.clone(),
    };
    workload.validate()?;
    Ok(workload)
}

struct Builder {
    master_seed: u64,
    objects: Vec<ObjectSpec>,
    rank_index: Vec<u64>,
}

impl Builder {
    fn new(master_seed: u64) -> Self {
        Builder { master_seed, objects: Vec::new(), rank_index: Vec::new() }
    }

    fn push(&mut self, rank: u32, shard_index: u32, kind: ObjectKind, size_bytes: u64) {
        let r = rank as usize;
        if self.rank_index.len() <= r {
            self.rank_index.resize(r + 1, 0);
        }
        let index = self.rank_index[r];
        self.rank_index[r] += 1;
        self.objects.push(ObjectSpec {
            object_id: self.objects.len() as u64,
            rank,
            shard_index,
            kind,
            size_bytes,
            content_seed: derive_seed(self.master_seed, rank, index),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{GIB, MIB};

    fn tensor_sizes(w: &WorkloadSpec, rank: u32) -> Vec<u64> {
        w.rank_objects(rank)
            .filter(|o| o.kind == ObjectKind::Tensor)
            .map(|o| o.size_bytes)
            .collect()
    }

    #[test]
    fn eight_gib_in_64_mib_chunks() {
        let w = generate_synthetic(8 * GIB, 64 * MIB, 1, 5).unwrap();
        let sizes = tensor_sizes(&w, 0);
        assert_eq!(sizes.len(), 128);
        assert!(sizes.iter().all(|&s| s == 64 * MIB));
    }

    #[test]
    fn exact_division_across_ranks() {
        let w = generate_synthetic(64 * MIB, 64 * MIB, 4, 5).unwrap();
        for r in 0..4 {
            assert_eq!(tensor_sizes(&w, r), vec![64 * MIB]);
        }
        assert_eq!(w.shards_per_rank, 1);
    }

    #[test]
    fn remainder_chunk() {
        let w = generate_synthetic(100 * MIB, 64 * MIB, 1, 5).unwrap();
        assert_eq!(tensor_sizes(&w, 0), vec![64 * MIB, 36 * MIB]);
    }

    #[test]
    fn synthetic_conservation_and_shape() {
        let w = generate_synthetic(10 * MIB, 3 * MIB, 3, 1).unwrap();
        let tensors: u64 = w.objects.iter().filter(|o| o.kind == ObjectKind::Tensor).map(|o| o.size_bytes).sum();
        assert_eq!(tensors, 3 * 10 * MIB);
        assert_eq!(w.overhead_bytes(), 3 * (DEFAULT_LEAN_BYTES + DEFAULT_HEADER_BYTES));
        for r in 0..3 {
            let kinds: Vec<_> = w.rank_objects(r).map(|o| o.kind).collect();
            assert_eq!(kinds.iter().filter(|k| **k == ObjectKind::LeanObject).count(), 1);
            assert_eq!(kinds.iter().filter(|k| **k == ObjectKind::MetadataHeader).count(), 1);
        }
        w.validate().unwrap();
    }

    #[test]
    fn invalid_synthetic_arguments() {
        assert!(generate_synthetic(0, 1, 1, 0).is_err());
        assert!(generate_synthetic(10, 0, 1, 0).is_err());
        assert!(generate_synthetic(10, 11, 1, 0).is_err());
        assert!(generate_synthetic(10, 5, 0, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(5 * MIB, MIB, 2, 42).unwrap();
        let b = generate_synthetic(5 * MIB, MIB, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(5 * MIB, MIB, 2, 43).unwrap();
        assert_ne!(a.objects[1].content_seed, c.objects[1].content_seed);
    }

    #[test]
    fn seeds_are_distinct_within_a_workload() {
        let w = generate_synthetic(64 * MIB, MIB, 4, 0).unwrap();
        let seeds: HashSet<_> = w.objects.iter().map(|o| o.content_seed).collect();
        assert_eq!(seeds.len(), w.objects.len());
    }
}
