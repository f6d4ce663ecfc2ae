use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::layout::AggregationStrategy;
use crate::workload::ObjectKind;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "ckptbench-manifest";
const FORMAT_VERSION: u32 = 1;

/// Index of a committed checkpoint version. Field order is the serialized
/// order; checksums are rendered as `0x`-prefixed hex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub checkpoint_version: u64,
    pub workload_name: String,
    pub num_ranks: u32,
    pub strategy: AggregationStrategy,
    pub alignment_bytes: u64,
    pub direct: bool,
    pub created_at_unix_ms: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub object_id: u64,
    pub rank: u32,
    pub shard: u32,
    pub kind: ObjectKind,
    pub length: u64,
    #[serde(with = "hex_u64")]
    pub checksum: u64,
    /// One extent per stored piece, in object order; fragmented objects have
    /// several.
    pub extents: Vec<Extent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub file_key: String,
    pub offset: u64,
    pub length: u64,
    pub padded_length: u64,
}

impl Manifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        checkpoint_version: u64,
        workload_name: String,
        num_ranks: u32,
        strategy: AggregationStrategy,
        alignment_bytes: u64,
        direct: bool,
        created_at_unix_ms: u64,
        entries: Vec<ManifestEntry>,
    ) -> Self {
        Manifest {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            checkpoint_version,
            workload_name,
            num_ranks,
            strategy,
            alignment_bytes,
            direct,
            created_at_unix_ms,
            entries,
        }
    }

    pub fn rank_entries(&self, rank: u32) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.rank == rank)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| Error::ShortManifest(e.to_string()))?;
        if manifest.format != FORMAT || manifest.format_version != FORMAT_VERSION {
            return Err(Error::ShortManifest(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.format_version
            )));
        }
        if manifest.entries.is_empty() {
            return Err(Error::ShortManifest("manifest lists no objects".into()));
        }
        for e in &manifest.entries {
            let stored: u64 = e.extents.iter().map(|x| x.length).sum();
            if stored != e.length {
                return Err(Error::ShortManifest(format!(
                    "object {} extents hold {stored} of {} bytes",
                    e.object_id, e.length
                )));
            }
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Manifest::parse(&text)
    }

    /// Writes through a temporary file, syncs it, renames it into place and
    /// syncs the directory, so the manifest either exists whole or not at all.
    pub fn store(&self, path: &Path) -> Result<()> {
        let dir = path.parent().ok_or_else(|| Error::InvalidArgument("manifest path has no parent".into()))?;
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let mut file = File::create(&tmp).map_err(|e| Error::path(&tmp, e))?;
        file.write_all(self.to_json()?.as_bytes()).map_err(|e| Error::path(&tmp, e))?;
        file.sync_all().map_err(|e| Error::path(&tmp, e))?;
        drop(file);
        fs::rename(&tmp, path).map_err(|e| Error::path(path, e))?;
        File::open(dir)
            .and_then(|d| d.sync_all())
            .map_err(|e| Error::path(dir, e))?;
        Ok(())
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{value:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        let digits = text.strip_prefix("0x").unwrap_or(&text);
        u64::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}
