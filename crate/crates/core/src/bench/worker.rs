use std::env;
use std::fs::{self, File};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::config::RunConfig;
use super::rendezvous::Rendezvous;
use super::report::{PhaseTimings, RankMetrics, MAX_REPORTED_FAILURES};
use crate::ckpt::{
    checkpoint_rank, commit_manifest, manifest_path, prepare_version_dir, restore_rank, version_dir, CheckpointJob,
    Manifest, ManifestEntry, PhaseHooks, RestoreJob, Window,
};
use crate::engine::raise_open_file_limit;
use crate::layout::LayoutPlan;
use crate::{Error, Result};

pub const ENV_RANK: &str = "CKPTBENCH_RANK";
pub const ENV_WORLD: &str = "CKPTBENCH_WORLD";
pub const ENV_RUN_ID: &str = "CKPTBENCH_RUN_ID";
pub const ENV_COORD_DIR: &str = "CKPTBENCH_COORD_DIR";
/// Set to [`FAULT_ABORT_BEFORE_MANIFEST`] to kill a rank after its data is
/// synced but before the manifest is committed.
pub const ENV_FAULT: &str = "CKPTBENCH_FAULT";
/// Rank that the fault applies to; defaults to 0.
pub const ENV_FAULT_RANK: &str = "CKPTBENCH_FAULT_RANK";
pub const FAULT_ABORT_BEFORE_MANIFEST: &str = "abort-before-manifest";

pub const CONFIG_FILE_NAME: &str = "config.json";

pub fn metrics_file(rank: u32) -> String {
    format!("metrics-rank{rank}.json")
}

/// Identity of a rank process, taken from the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerEnv {
    pub rank: u32,
    pub world: u32,
    pub run_id: String,
    pub coord_root: PathBuf,
}

impl WorkerEnv {
    /// `None` when this process is not a rank worker.
    pub fn from_env() -> Result<Option<Self>> {
        let Ok(rank) = env::var(ENV_RANK) else { return Ok(None) };
        let var = |name: &str| env::var(name).map_err(|_| Error::InvalidArgument(format!("{name} is not set")));
        let parse = |name: &str, v: String| {
            v.parse::<u32>().map_err(|_| Error::InvalidArgument(format!("{name}={v} is not a number")))
        };
        Ok(Some(WorkerEnv {
            rank: parse(ENV_RANK, rank)?,
            world: parse(ENV_WORLD, var(ENV_WORLD)?)?,
            run_id: var(ENV_RUN_ID)?,
            coord_root: PathBuf::from(var(ENV_COORD_DIR)?),
        }))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.coord_root.join(&self.run_id)
    }
}

/// Body of a rank process: reads the run configuration from the coordination
/// directory, runs every repetition and writes this rank's metrics back.
pub fn run_worker(env: &WorkerEnv) -> Result<()> {
    let config_path = env.run_dir().join(CONFIG_FILE_NAME);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::path(&config_path, e))?;
    let config = RunConfig::from_json(&text)?;
    if config.num_ranks != env.world {
        return Err(Error::InvalidArgument(format!(
            "world of {} does not match the configured {} ranks",
            env.world, config.num_ranks
        )));
    }
    let timeout = Duration::from_secs_f64(config.rendezvous_timeout_s);
    let mut rdv = Rendezvous::join(&env.coord_root, &env.run_id, env.rank, env.world, timeout)?;
    let metrics = run_rank(&config, &mut rdv)?;
    let path = env.run_dir().join(metrics_file(env.rank));
    fs::write(&path, serde_json::to_vec_pretty(&metrics)?).map_err(|e| Error::path(&path, e))
}

struct BarrierHooks<'a> {
    rdv: &'a mut Rendezvous,
}

impl PhaseHooks for BarrierHooks<'_> {
    fn before_window(&mut self, window: Window) -> Result<()> {
        self.rdv.barrier(match window {
            Window::Write => "write-start",
            Window::Read => "read-start",
        })
    }

    fn after_window(&mut self, window: Window) -> Result<()> {
        self.rdv.barrier(match window {
            Window::Write => "write-end",
            Window::Read => "read-end",
        })
    }
}

fn fault_requested(rank: u32) -> bool {
    env::var(ENV_FAULT).is_ok_and(|f| f == FAULT_ABORT_BEFORE_MANIFEST)
        && env::var(ENV_FAULT_RANK).ok().and_then(|r| r.parse().ok()).unwrap_or(0) == rank
}

/// Asks the kernel to drop cached pages of the rank's files so restore reads
/// come from storage.
fn evict_cached(dir: &Path, plan: &LayoutPlan, rank: u32) {
    for key in plan.rank_files(rank) {
        let path = dir.join(key);
        match File::open(&path) {
            // SAFETY: fadvise on an open descriptor; failure is only advisory.
            Ok(f) => unsafe {
                libc::posix_fadvise(f.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED);
            },
            Err(e) => warn!("cannot evict {}: {e}", path.display()),
        }
    }
}

/// Runs every repetition of `config` as one rank of `rdv`.
pub fn run_rank(config: &RunConfig, rdv: &mut Rendezvous) -> Result<Vec<RankMetrics>> {
    config.validate()?;
    raise_open_file_limit();
    let rank = rdv.rank();
    let workload = config.build_workload()?;
    let local_plan = config.plan(&workload)?;
    let engine = config.engine_config();
    let root = config.target_dir.as_path();
    let mut out = Vec::with_capacity(config.repetitions as usize);

    for repetition in 0..config.repetitions {
        let version = u64::from(repetition);
        let waited_before = rdv.waited();
        rdv.barrier("repetition-start")?;
        let rep_start = Instant::now();

        let payload = if rank == 0 {
            if repetition > 0 && !config.keep_checkpoints {
                let stale = version_dir(root, version - 1);
                if let Err(e) = fs::remove_dir_all(&stale) {
                    warn!("cannot remove {}: {e}", stale.display());
                }
            }
            prepare_version_dir(root, version, &local_plan)?;
            local_plan.to_json()?.into_bytes()
        } else {
            Vec::new()
        };
        let received = rdv.broadcast("plan", &payload)?;
        let plan = LayoutPlan::from_json(&String::from_utf8_lossy(&received))?;
        if plan.rank_base_offsets != local_plan.rank_base_offsets || plan.entries != local_plan.entries {
            return Err(Error::PlanMismatch(format!("rank {rank} disagrees with rank 0's layout plan")));
        }

        let job = CheckpointJob { root, version, workload: &workload, plan: &plan, engine, mode: config.emulation };
        let mut ck = checkpoint_rank(&job, rank, &mut BarrierHooks { rdv: &mut *rdv })?;
        if fault_requested(rank) {
            eprintln!("rank {rank}: injected abort before manifest commit");
            std::process::abort();
        }
        let gathered = rdv.gather("manifest-entries", &serde_json::to_vec(&ck.entries)?)?;
        if let Some(parts) = gathered {
            let mut entries = Vec::new();
            for part in parts {
                entries.extend(serde_json::from_slice::<Vec<ManifestEntry>>(&part)?);
            }
            let (_, manifest_s) = commit_manifest(&job, entries)?;
            ck.timings.manifest_s = manifest_s;
            ck.timings.total_s += manifest_s;
        }
        rdv.barrier("committed")?;

        let restored = if config.restore {
            if config.drop_cache {
                evict_cached(&version_dir(root, version), &plan, rank);
            }
            let manifest = Manifest::load(&manifest_path(root, version))?;
            let job = RestoreJob {
                root,
                manifest: &manifest,
                engine,
                mode: config.emulation,
                alloc: config.alloc,
                pool_regions: config.pool_regions,
                region_bytes: config.region_bytes,
            };
            Some(restore_rank(&job, rank, &mut BarrierHooks { rdv: &mut *rdv })?)
        } else {
            None
        };
        rdv.barrier("repetition-end")?;
        let wall_time_s = rep_start.elapsed().as_secs_f64();
        let coordination_s = (rdv.waited() - waited_before).as_secs_f64();

        let failures: Vec<_> = restored.iter().flat_map(|r| r.failures().cloned()).collect();
        debug!("rank {rank} repetition {repetition}: {} failures", failures.len());
        let read_engine = restored.as_ref().map(|r| r.engine).unwrap_or_default();
        let alloc = restored.as_ref().map(|r| r.alloc).unwrap_or_default();
        out.push(RankMetrics {
            repetition,
            rank,
            timings: PhaseTimings {
                checkpoint: ck.timings,
                restore: restored.as_ref().map(|r| r.timings),
                coordination_s,
            },
            write_window_s: ck.timings.window_s(),
            read_window_s: restored.as_ref().map(|r| r.timings.window_s()),
            wall_time_s,
            bytes_written: ck.bytes_written,
            bytes_read: read_engine.bytes_read,
            write_ops: ck.engine.write_ops,
            read_ops: read_engine.read_ops,
            file_opens: ck.engine.file_opens + read_engine.file_opens,
            allocations: alloc.allocations,
            reuses: alloc.reuses,
            submit_calls: ck.engine.submit_calls + read_engine.submit_calls,
            max_in_flight: ck.engine.max_in_flight.max(read_engine.max_in_flight),
            resubmissions: ck.engine.resubmissions + read_engine.resubmissions,
            writes: ck.writes,
            reads: restored.as_ref().map(|r| r.reads),
            objects_verified: restored.as_ref().map_or(0, |r| r.objects.len()),
            failure_count: failures.len(),
            failures: failures.into_iter().take(MAX_REPORTED_FAILURES).collect(),
        });
    }
    Ok(out)
}
