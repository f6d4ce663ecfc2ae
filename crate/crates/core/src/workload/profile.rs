//! Model profiles: per-rank object size lists, either built in or loaded
//! from a text file.
//!
//! The file format is one object per line, `rank shard kind size_bytes`, in
//! on-disk order. `#` starts a comment; a `# name: <name>` comment names the
//! profile. Kinds are `tensor`, `lean` and `metadata`; sizes accept the
//! suffixes understood by [`crate::units::parse_size`].
//!
//! ```text
//! # name: tiny
//! 0 0 lean     64KiB
//! 0 0 tensor   1048576
//! 0 0 metadata 4KiB
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObjectKind, Provenance, DEFAULT_HEADER_BYTES, DEFAULT_LEAN_BYTES};
use crate::units::parse_size;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub shard: u32,
    pub kind: ObjectKind,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub num_ranks: u32,
    pub per_rank: Vec<Vec<ProfileEntry>>,
    pub provenance: Provenance,
}

pub const BUILTIN_PROFILES: [&str; 3] = ["3b", "7b", "13b"];

impl ModelProfile {
    pub fn shards_per_rank(&self) -> u32 {
        self.per_rank
            .iter()
            .flatten()
            .map(|e| e.shard + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        self.per_rank.iter().flatten().map(|e| e.size_bytes).sum()
    }

    pub fn object_count(&self) -> usize {
        self.per_rank.iter().map(Vec::len).sum()
    }

    /// Every rank must use the same shard indices `0..M` and every size must be
    /// positive.
    pub fn validate(&self) -> Result<()> {
        if self.num_ranks as usize != self.per_rank.len() {
            return Err(malformed(format!(
                "profile declares {} ranks but lists {}",
                self.num_ranks,
                self.per_rank.len()
            )));
        }
        if self.num_ranks == 0 || self.object_count() == 0 {
            return Err(malformed("profile has no objects".into()));
        }
        let shards = self.shards_per_rank();
        for (rank, entries) in self.per_rank.iter().enumerate() {
            let mut seen = vec![false; shards as usize];
            for e in entries {
                if e.size_bytes == 0 {
                    return Err(malformed(format!("rank {rank} shard {} has a zero-sized object", e.shard)));
                }
                seen[e.shard as usize] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(malformed(format!(
                    "rank {rank} has no objects for shard {missing} of {shards}"
                )));
            }
        }
        Ok(())
    }

    /// Scales tensor sizes by `factor` (lean objects and headers keep their size).
    pub fn scaled(&self, factor: f64) -> Result<ModelProfile> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad scale factor {factor}")));
        }
        let mut scaled = self.clone();
        for e in scaled.per_rank.iter_mut().flatten() {
            if e.kind == ObjectKind::Tensor {
                e.size_bytes = ((e.size_bytes as f64 * factor).round() as u64).max(1);
            }
        }
        if factor != 1.0 {
            scaled.name = format!("{}@{factor}", self.name);
        }
        Ok(scaled)
    }

    pub fn parse(text: &str, default_name: &str, provenance: Provenance) -> Result<ModelProfile> {
        let mut name = default_name.to_string();
        let mut per_rank: Vec<Vec<ProfileEntry>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let (body, comment) = match raw.find('#') {
                Some(p) => (&raw[..p], Some(raw[p + 1..].trim())),
                None => (raw, None),
            };
            if let Some(n) = comment.and_then(|c| c.strip_prefix("name:")) {
                name = n.trim().to_string();
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::MalformedProfile { line: Some(line_no), reason };
            if fields.len() != 4 {
                return Err(bad(format!("expected `rank shard kind size_bytes`, got {} fields", fields.len())));
            }
            let rank: usize = fields[0].parse().map_err(|_| bad(format!("bad rank `{}`", fields[0])))?;
            let shard: u32 = fields[1].parse().map_err(|_| bad(format!("bad shard `{}`", fields[1])))?;
            let kind: ObjectKind = fields[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let size_bytes = parse_size(fields[3]).map_err(|e| bad(e.to_string()))?;
            if size_bytes == 0 {
                return Err(bad("object size must be positive".into()));
            }
            if per_rank.len() <= rank {
                per_rank.resize(rank + 1, Vec::new());
            }
            per_rank[rank].push(ProfileEntry { shard, kind, size_bytes });
        }
        let profile = ModelProfile { name, num_ranks: per_rank.len() as u32, per_rank, provenance };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<ModelProfile> {
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
        ModelProfile::parse(&text, stem, Provenance::File { path: path.display().to_string() })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# name: {}\n# rank shard kind size_bytes\n", self.name);
        for (rank, entries) in self.per_rank.iter().enumerate() {
            for e in entries {
                out.push_str(&format!("{rank} {} {} {}\n", e.shard, e.kind, e.size_bytes));
            }
        }
        out
    }
}

fn malformed(reason: String) -> Error {
    Error::MalformedProfile { line: None, reason }
}

/// Resolves a built-in name (`3b`, `7b`, `13b`) or a path to a profile file.
pub fn load_profile(selector: &str) -> Result<ModelProfile> {
    if let Some(p) = builtin_profile(selector) {
        return Ok(p);
    }
    let path = Path::new(selector);
    if path.exists() {
        return ModelProfile::load(path);
    }
    Err(Error::UnknownProfile(selector.to_string()))
}

pub fn builtin_profile(name: &str) -> Option<ModelProfile> {
    match name.to_ascii_lowercase().as_str() {
        "3b" | "bloom-3b" => Some(bloom_3b()),
        "7b" | "llama-7b" => Some(llama(LLAMA_7B)),
        "13b" | "llama-13b" => Some(llama(LLAMA_13B)),
        _ => None,
    }
}

const FP16: u64 = 2;

/// Tensor-parallel transformer shape used to synthesise the built-ins.
struct Shape {
    name: &'static str,
    ranks: u32,
    hidden: u64,
    ffn: u64,
    layers: u32,
    vocab: u64,
}

const LLAMA_7B: Shape = Shape { name: "llama-7b", ranks: 8, hidden: 4096, ffn: 11008, layers: 32, vocab: 32000 };
const LLAMA_13B: Shape = Shape { name: "llama-13b", ranks: 16, hidden: 5120, ffn: 13824, layers: 40, vocab: 32000 };

/// Accumulates one rank's shards: each shard is a lean object, its tensors,
/// then a metadata header.
struct RankFiles {
    entries: Vec<ProfileEntry>,
    next_shard: u32,
}

impl RankFiles {
    fn new() -> Self {
        RankFiles { entries: Vec::new(), next_shard: 0 }
    }

    fn file(&mut self, tensors: &[u64]) {
        let shard = self.next_shard;
        self.next_shard += 1;
        let mut push = |kind, size_bytes| self.entries.push(ProfileEntry { shard, kind, size_bytes });
        push(ObjectKind::LeanObject, DEFAULT_LEAN_BYTES);
        for &t in tensors {
            push(ObjectKind::Tensor, t);
        }
        push(ObjectKind::MetadataHeader, DEFAULT_HEADER_BYTES);
    }

    fn tensor_bytes(&self) -> u64 {
        self.entries.iter().filter(|e| e.kind == ObjectKind::Tensor).map(|e| e.size_bytes).sum()
    }

    fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.size_bytes).sum()
    }
}

/// BLOOM-3B on 4 tensor-parallel ranks: 33 files per rank (model states,
/// embedding, 30 layers, optimizer states), 132 files and exactly 42 GB
/// (decimal) in total. The optimizer file absorbs whatever the fp16 weights
/// leave of each rank's 10.5 GB share.
fn bloom_3b() -> ModelProfile {
    const RANKS: u64 = 4;
    const TOTAL: u64 = 42_000_000_000;
    let (h, tp, vocab) = (2560u64, RANKS, 250_880u64);
    let per_rank_target = TOTAL / RANKS;
    let layer = [
        h * FP16,               // input_layernorm.weight
        h * FP16,               // input_layernorm.bias
        3 * h * h / tp * FP16,  // self_attention.query_key_value.weight
        3 * h / tp * FP16,      // self_attention.query_key_value.bias
        h * h / tp * FP16,      // self_attention.dense.weight
        h * FP16,               // self_attention.dense.bias
        h * FP16,               // post_attention_layernorm.weight
        h * FP16,               // post_attention_layernorm.bias
        4 * h * h / tp * FP16,  // mlp.dense_h_to_4h.weight
        4 * h / tp * FP16,      // mlp.dense_h_to_4h.bias
        4 * h * h / tp * FP16,  // mlp.dense_4h_to_h.weight
        h * FP16,               // mlp.dense_4h_to_h.bias
    ];
    let per_rank = (0..RANKS)
        .map(|_| {
            let mut files = RankFiles::new();
            files.file(&[h * FP16, h * FP16, 16 * 1024]); // final norm + rng state
            files.file(&[vocab / tp * h * FP16, h * FP16, h * FP16]);
            for _ in 0..30 {
                files.file(&layer);
            }
            // fp32 master weights, exp_avg, exp_avg_sq
            let remaining = per_rank_target - files.total() - DEFAULT_LEAN_BYTES - DEFAULT_HEADER_BYTES;
            let third = remaining / 3;
            files.file(&[third, third, remaining - 2 * third]);
            files.entries
        })
        .collect();
    ModelProfile {
        name: "bloom-3b".into(),
        num_ranks: RANKS as u32,
        per_rank,
        provenance: Provenance::BuiltIn { approximate: true },
    }
}

/// LLaMA-style model sharded over `ranks` tensor-parallel ranks: model
/// states, embedding, one file per layer, final norm + LM head, optimizer
/// states (fp32 master and two Adam moments, 12 bytes per local parameter).
fn llama(s: Shape) -> ModelProfile {
    let (h, f, tp) = (s.hidden, s.ffn, u64::from(s.ranks));
    let layer = [
        h * FP16,          // input_layernorm
        h * h / tp * FP16, // q_proj
        h * h / tp * FP16, // k_proj
        h * h / tp * FP16, // v_proj
        h * h / tp * FP16, // o_proj
        h * f / tp * FP16, // gate_proj
        h * f / tp * FP16, // up_proj
        f * h / tp * FP16, // down_proj
        h * FP16,          // post_attention_layernorm
    ];
    let per_rank = (0..s.ranks)
        .map(|_| {
            let mut files = RankFiles::new();
            files.file(&[16 * 1024]); // rng and scheduler state
            files.file(&[s.vocab / tp * h * FP16]);
            for _ in 0..s.layers {
                files.file(&layer);
            }
            files.file(&[h * FP16, s.vocab / tp * h * FP16]);
            let params = files.tensor_bytes() / FP16;
            files.file(&[4 * params, 4 * params, 4 * params]);
            files.entries
        })
        .collect();
    ModelProfile {
        name: s.name.into(),
        num_ranks: s.ranks,
        per_rank,
        provenance: Provenance::BuiltIn { approximate: true },
    }
}
