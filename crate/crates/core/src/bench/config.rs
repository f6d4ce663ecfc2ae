use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ckpt::{AllocMode, EmulationMode};
use crate::engine::{Backend, EngineConfig, DEFAULT_POOL_REGIONS, DEFAULT_REGION_BYTES};
use crate::layout::{plan_layout, AggregationStrategy, LayoutPlan, DEFAULT_ALIGNMENT, DEFAULT_FRAGMENT_BYTES};
use crate::units::{GIB, MIB};
use crate::workload::{generate_from_profile, generate_synthetic, load_profile, WorkloadSpec};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 0x5eed_c4e0_2024_0001;
pub const DEFAULT_REPETITIONS: u32 = 3;
pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkloadSelector {
    Synthetic { total_bytes_per_rank: u64, chunk_bytes: u64 },
    /// A built-in profile name or a profile file path; `scale` multiplies
    /// tensor sizes.
    Profile { profile: String, scale: f64 },
}

/// One benchmark configuration. Serialized verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub label: Option<String>,
    pub workload: WorkloadSelector,
    pub strategy: AggregationStrategy,
    pub backend: Backend,
    pub direct: bool,
    pub queue_depth: u32,
    pub alignment_bytes: u64,
    pub emulation: EmulationMode,
    pub alloc: AllocMode,
    pub num_ranks: u32,
    pub repetitions: u32,
    pub target_dir: PathBuf,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub restore: bool,
    pub pool_regions: usize,
    pub region_bytes: usize,
    /// Evict the checkpoint's pages from the page cache before restoring.
    pub drop_cache: bool,
    /// Keep every repetition's checkpoint instead of only the last one.
    pub keep_checkpoints: bool,
    pub rendezvous_timeout_s: f64,
    /// Recorded in reports only; striping is configured on the file system.
    pub stripe_hint: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            label: None,
            workload: WorkloadSelector::Synthetic { total_bytes_per_rank: GIB, chunk_bytes: 64 * MIB },
            strategy: AggregationStrategy::FilePerProcess,
            backend: Backend::Ring,
            direct: true,
            queue_depth: 128,
            alignment_bytes: DEFAULT_ALIGNMENT,
            emulation: EmulationMode::Batched,
            alloc: AllocMode::Pooled,
            num_ranks: 1,
            repetitions: DEFAULT_REPETITIONS,
            target_dir: PathBuf::from("ckptbench-data"),
            output: None,
            seed: DEFAULT_SEED,
            restore: true,
            pool_regions: DEFAULT_POOL_REGIONS,
            region_bytes: DEFAULT_REGION_BYTES,
            drop_cache: true,
            keep_checkpoints: false,
            rendezvous_timeout_s: DEFAULT_TIMEOUT_S,
            stripe_hint: None,
        }
    }
}

impl RunConfig {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            backend: self.backend,
            queue_depth: self.queue_depth,
            direct: self.direct,
            alignment_bytes: self.alignment_bytes,
            sync_on_close: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine_config().validate()?;
        if self.num_ranks == 0 {
            return Err(Error::InvalidArgument("rank count must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.rendezvous_timeout_s.is_nan() || self.rendezvous_timeout_s <= 0.0 {
            return Err(Error::InvalidArgument("rendezvous timeout must be positive".into()));
        }
        if self.emulation == EmulationMode::FragmentedChunks
            && !matches!(self.strategy, AggregationStrategy::FixedChunkFragmentation { .. })
        {
            return Err(Error::InvalidArgument("fragmented emulation needs the fragmented-chunks strategy".into()));
        }
        if self.alloc == AllocMode::Pooled
            && (self.pool_regions == 0 || self.region_bytes == 0 || !(self.region_bytes as u64).is_multiple_of(self.alignment_bytes))
        {
            return Err(Error::InvalidArgument(format!(
                "pool needs at least one region whose size is a multiple of {}",
                self.alignment_bytes
            )));
        }
        if let WorkloadSelector::Profile { scale, .. } = self.workload {
            if scale.is_nan() || scale <= 0.0 {
                return Err(Error::InvalidArgument("profile scale must be positive".into()));
            }
        }
        Ok(())
    }

    /// Builds the workload. Profile workloads bring their own rank count,
    /// which must agree with `num_ranks`.
    pub fn build_workload(&self) -> Result<WorkloadSpec> {
        match &self.workload {
            WorkloadSelector::Synthetic { total_bytes_per_rank, chunk_bytes } => {
                generate_synthetic(*total_bytes_per_rank, *chunk_bytes, self.num_ranks, self.seed)
            }
            WorkloadSelector::Profile { profile, scale } => {
                let mut p = load_profile(profile)?;
                if *scale != 1.0 {
                    p = p.scaled(*scale)?;
                }
                if p.num_ranks != self.num_ranks {
                    return Err(Error::InvalidArgument(format!(
                        "profile {} has {} ranks but the run asks for {}",
                        p.name, p.num_ranks, self.num_ranks
                    )));
                }
                generate_from_profile(&p, self.seed)
            }
        }
    }

    pub fn plan(&self, workload: &WorkloadSpec) -> Result<LayoutPlan> {
        plan_layout(workload, self.strategy, self.alignment_bytes, self.direct)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub const PRESETS: [&str; 4] = ["aggregation-sweep", "odirect-sweep", "engine-comparison", "llm-profiles"];

/// Expands a named experiment matrix around `base`. Fields a preset does not
/// vary are taken from `base`.
pub fn preset(name: &str, base: &RunConfig) -> Result<Vec<RunConfig>> {
    let labeled = |mut c: RunConfig| {
        c.label = Some(name.to_string());
        c
    };
    let fragment = match base.strategy {
        AggregationStrategy::FixedChunkFragmentation { chunk_bytes } => chunk_bytes,
        _ => DEFAULT_FRAGMENT_BYTES,
    };
    let mut runs = Vec::new();
    match name {
        "aggregation-sweep" => {
            for ranks in [1, 2, 4] {
                for strategy in AggregationStrategy::AGGREGATION_SWEEP {
                    runs.push(labeled(RunConfig { strategy, num_ranks: ranks, ..base.clone() }));
                }
            }
        }
        "odirect-sweep" => {
            for direct in [true, false] {
                for strategy in AggregationStrategy::AGGREGATION_SWEEP {
                    runs.push(labeled(RunConfig { strategy, direct, ..base.clone() }));
                }
            }
        }
        "engine-comparison" => {
            let cells = [
                (EmulationMode::Batched, AggregationStrategy::SingleSharedFile, AllocMode::Pooled),
                (EmulationMode::PerObjectImmediate, AggregationStrategy::FilePerShard, AllocMode::PerObject),
                (
                    EmulationMode::FragmentedChunks,
                    AggregationStrategy::FixedChunkFragmentation { chunk_bytes: fragment },
                    AllocMode::PerObject,
                ),
            ];
            for (emulation, strategy, alloc) in cells {
                runs.push(labeled(RunConfig { emulation, strategy, alloc, ..base.clone() }));
            }
        }
        "llm-profiles" => {
            let scale = match base.workload {
                WorkloadSelector::Profile { scale, .. } => scale,
                WorkloadSelector::Synthetic { .. } => 1.0,
            };
            for model in ["bloom-3b", "llama-7b", "llama-13b"] {
                let num_ranks = load_profile(model)?.num_ranks;
                for strategy in AggregationStrategy::AGGREGATION_SWEEP {
                    runs.push(labeled(RunConfig {
                        workload: WorkloadSelector::Profile { profile: model.into(), scale },
                        strategy,
                        num_ranks,
                        ..base.clone()
                    }));
                }
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(runs)
}
