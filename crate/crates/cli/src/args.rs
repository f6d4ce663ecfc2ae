use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ckptbench_core::bench::{ReportFormat, WorkloadSelector};
use ckptbench_core::ckpt::{AllocMode, EmulationMode};
use ckptbench_core::engine::{Backend, DEFAULT_POOL_REGIONS};
use ckptbench_core::units::parse_size;
use ckptbench_core::{AggregationStrategy, RunConfig};

fn size(text: &str) -> Result<u64, String> {
    parse_size(text).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ckptbench", version, about = "Checkpoint/restore I/O benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Checkpoint and restore a synthetic workload of equal-sized tensors.
    Synthetic {
        /// Bytes per rank.
        #[arg(long, default_value = "1GiB", value_parser = size)]
        total_size: u64,
        /// Tensor size.
        #[arg(long, default_value = "64MiB", value_parser = size)]
        chunk_size: u64,
        #[arg(long, default_value_t = 1)]
        ranks: u32,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Checkpoint and restore a model-shaped workload.
    Llm {
        /// Built-in profile (bloom-3b, llama-7b, llama-13b) or a profile file.
        #[arg(long)]
        profile: String,
        /// Multiplies every tensor size, for running large models at desk scale.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check a checkpoint version against its manifest.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        /// Defaults to the newest version in the directory.
        #[arg(long)]
        version: Option<u64>,
    },
    /// Summarize report files, or flatten them to CSV.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Print a table (default) or CSV rows.
        #[arg(long)]
        format: Option<ReportFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the layout plan for a workload without writing data.
    Plan {
        #[arg(long, conflicts_with_all = ["total_size", "chunk_size"])]
        profile: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "1GiB", value_parser = size)]
        total_size: u64,
        #[arg(long, default_value = "64MiB", value_parser = size)]
        chunk_size: u64,
        #[arg(long, default_value_t = 1)]
        ranks: u32,
        #[arg(long, default_value = "file-per-process")]
        strategy: AggregationStrategy,
        #[arg(long, value_parser = size)]
        fragment_size: Option<u64>,
        #[arg(long, default_value = "4096", value_parser = size)]
        alignment: u64,
        #[arg(long)]
        buffered: bool,
        /// Print every placement entry as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "file-per-process")]
    pub strategy: AggregationStrategy,
    /// Chunk size of the fragmented-chunks strategy.
    #[arg(long, value_parser = size)]
    pub fragment_size: Option<u64>,
    #[arg(long, default_value = "ring")]
    pub backend: Backend,
    /// O_DIRECT with aligned, padded extents (default).
    #[arg(long, conflicts_with = "buffered")]
    pub direct: bool,
    /// Go through the page cache.
    #[arg(long)]
    pub buffered: bool,
    #[arg(long, default_value_t = 128)]
    pub queue_depth: u32,
    #[arg(long, default_value = "4096", value_parser = size)]
    pub alignment: u64,
    #[arg(long, default_value = "batched")]
    pub emulation: EmulationMode,
    #[arg(long, default_value = "pooled")]
    pub alloc: AllocMode,
    #[arg(long, default_value_t = DEFAULT_POOL_REGIONS)]
    pub pool_regions: usize,
    #[arg(long, default_value = "64MiB", value_parser = size)]
    pub pool_region_size: u64,
    /// Repetitions.
    #[arg(long, default_value_t = 3)]
    pub runs: u32,
    /// Directory checkpoints are written to.
    #[arg(long, default_value = "ckptbench-data")]
    pub dir: PathBuf,
    /// Report file, or report directory when a preset is given. Reports go
    /// to stdout when omitted for a single run.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    pub format: ReportFormat,
    /// Named experiment matrix: aggregation-sweep, odirect-sweep,
    /// engine-comparison, llm-profiles.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint only.
    #[arg(long)]
    pub no_restore: bool,
    /// Restore from the page cache instead of evicting the checkpoint first.
    #[arg(long)]
    pub keep_cache: bool,
    /// Keep every repetition's checkpoint, not only the last.
    #[arg(long)]
    pub keep_checkpoints: bool,
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
    /// Free-form stripe setting recorded in the report.
    #[arg(long)]
    pub stripe_hint: Option<String>,
}

impl RunArgs {
    pub fn config(&self, workload: WorkloadSelector, num_ranks: u32) -> RunConfig {
        let defaults = RunConfig::default();
        let strategy = match (self.strategy, self.fragment_size) {
            (AggregationStrategy::FixedChunkFragmentation { .. }, Some(chunk_bytes)) => {
                AggregationStrategy::FixedChunkFragmentation { chunk_bytes }
            }
            (s, _) => s,
        };
        RunConfig {
            label: self.preset.clone(),
            workload,
            strategy,
            backend: self.backend,
            direct: !self.buffered,
            queue_depth: self.queue_depth,
            alignment_bytes: self.alignment,
            emulation: self.emulation,
            alloc: self.alloc,
            num_ranks,
            repetitions: self.runs,
            target_dir: self.dir.clone(),
            output: self.out.clone(),
            seed: self.seed.unwrap_or(defaults.seed),
            restore: !self.no_restore,
            pool_regions: self.pool_regions,
            region_bytes: self.pool_region_size as usize,
            drop_cache: !self.keep_cache,
            keep_checkpoints: self.keep_checkpoints,
            rendezvous_timeout_s: self.timeout_secs,
            stripe_hint: self.stripe_hint.clone(),
        }
    }
}
