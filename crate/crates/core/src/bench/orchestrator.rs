use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::{info, warn};

use super::config::RunConfig;
use super::report::{
    aggregate_repetition, summarize, Environment, RankMetrics, RunReport, Verification, WorkloadSummary,
    SCHEMA_VERSION,
};
use super::worker::{metrics_file, CONFIG_FILE_NAME, ENV_COORD_DIR, ENV_RANK, ENV_RUN_ID, ENV_WORLD};
use crate::layout::total_padded_bytes;
use crate::workload::Provenance;
use crate::{Error, Result};

/// Directory under the target directory that holds rendezvous state.
pub const COORD_DIR: &str = ".ckptbench-coord";

/// How to start a rank process. The program must call
/// [`run_worker`](super::run_worker) when it finds the rank environment.
#[derive(Debug, Clone)]
pub struct Launcher {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Launcher {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Launcher { program: program.into(), args: Vec::new() }
    }

    /// The running executable.
    pub fn current_exe() -> Result<Self> {
        let exe = std::env::current_exe().map_err(|e| Error::io("locating the current executable", e))?;
        Ok(Launcher::new(exe))
    }
}

fn new_run_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("run-{}-{nanos}", std::process::id())
}

fn log_tail(path: &Path, lines: usize) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let all: Vec<&str> = text.lines().collect();
    all[all.len().saturating_sub(lines)..].join("\n")
}

fn kill_all(children: &mut [(u32, Child)]) {
    for (_, child) in children.iter_mut() {
        let _ = child.kill();
    }
    for (_, child) in children.iter_mut() {
        let _ = child.wait();
    }
}

/// Runs one configuration: spawns a process per rank, waits for all of them
/// and merges their metrics. Any rank exiting unsuccessfully aborts the run.
pub fn run_experiment(config: &RunConfig, launcher: &Launcher) -> Result<RunReport> {
    config.validate()?;
    let workload = config.build_workload()?;
    let plan = config.plan(&workload)?;
    fs::create_dir_all(&config.target_dir).map_err(|e| Error::path(&config.target_dir, e))?;
    let target_dir = fs::canonicalize(&config.target_dir).map_err(|e| Error::path(&config.target_dir, e))?;
    let coord_root = target_dir.join(COORD_DIR);
    let run_id = new_run_id();
    let run_dir = coord_root.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Error::path(&run_dir, e))?;
    let child_config = RunConfig { target_dir: target_dir.clone(), ..config.clone() };
    let config_path = run_dir.join(CONFIG_FILE_NAME);
    fs::write(&config_path, child_config.to_json()?).map_err(|e| Error::path(&config_path, e))?;
    info!("{run_id}: {} ranks, {} bytes planned", config.num_ranks, total_padded_bytes(&plan));

    let mut children = Vec::with_capacity(config.num_ranks as usize);
    for rank in 0..config.num_ranks {
        let log_path = run_dir.join(format!("rank{rank}.log"));
        let log = fs::File::create(&log_path).map_err(|e| Error::path(&log_path, e))?;
        let spawned = Command::new(&launcher.program)
            .args(&launcher.args)
            .env(ENV_RANK, rank.to_string())
            .env(ENV_WORLD, config.num_ranks.to_string())
            .env(ENV_RUN_ID, &run_id)
            .env(ENV_COORD_DIR, &coord_root)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(log)
            .spawn();
        match spawned {
            Ok(child) => children.push((rank, child)),
            Err(e) => {
                kill_all(&mut children);
                return Err(Error::io(format!("spawning rank {rank}"), e));
            }
        }
    }

    let mut running = children.len();
    let mut done = vec![false; children.len()];
    while running > 0 {
        for (i, (rank, child)) in children.iter_mut().enumerate() {
            if done[i] {
                continue;
            }
            let Some(status) = child.try_wait().map_err(|e| Error::io(format!("waiting for rank {rank}"), e))? else {
                continue;
            };
            done[i] = true;
            running -= 1;
            if !status.success() {
                let rank = *rank;
                let code = match status.code() {
                    Some(c @ 1..=4) => c,
                    Some(_) | None => 3,
                };
                kill_all(&mut children);
                let diagnostics = format!(
                    "{status}; rank log:\n{}\n(coordination state kept in {})",
                    log_tail(&run_dir.join(format!("rank{rank}.log")), 20),
                    run_dir.display()
                );
                return Err(Error::RankFailure { rank, code, diagnostics });
            }
        }
        if running > 0 {
            thread::sleep(Duration::from_millis(5));
        }
    }

    let mut per_rank: Vec<RankMetrics> = Vec::new();
    for rank in 0..config.num_ranks {
        let path = run_dir.join(metrics_file(rank));
        let text = fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
        per_rank.extend(serde_json::from_str::<Vec<RankMetrics>>(&text)?);
    }
    per_rank.sort_by_key(|m| (m.repetition, m.rank));
    if let Err(e) = fs::remove_dir_all(&run_dir) {
        warn!("cannot remove {}: {e}", run_dir.display());
    }
    let _ = fs::remove_dir(&coord_root);
    build_report(run_id, config.clone(), &workload, &plan, per_rank)
}

pub(crate) fn build_report(
    run_id: String,
    config: RunConfig,
    workload: &crate::workload::WorkloadSpec,
    plan: &crate::layout::LayoutPlan,
    per_rank: Vec<RankMetrics>,
) -> Result<RunReport> {
    let repetitions: Vec<_> = (0..config.repetitions)
        .map(|rep| {
            let ranks: Vec<&RankMetrics> = per_rank.iter().filter(|m| m.repetition == rep).collect();
            aggregate_repetition(rep, &ranks)
        })
        .collect();
    let aggregate = summarize(&repetitions)?;
    let objects_checked = per_rank.iter().map(|m| m.objects_verified).sum();
    let objects_failed = per_rank.iter().map(|m| m.failure_count).sum();
    let verification =
        Verification { performed: config.restore, passed: objects_failed == 0, objects_checked, objects_failed };
    let workload_summary = WorkloadSummary {
        name: workload.name.clone(),
        provenance: workload.provenance.to_string(),
        approximate: matches!(workload.provenance, Provenance::BuiltIn { approximate: true }),
        num_ranks: workload.num_ranks,
        objects: workload.objects.len(),
        total_bytes: workload.total_bytes(),
        overhead_bytes: workload.overhead_bytes(),
        planned_files: plan.file_count,
        planned_bytes: total_padded_bytes(plan),
    };
    let environment = Environment::capture(config.stripe_hint.clone());
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        run_id,
        config,
        workload: workload_summary,
        per_rank,
        repetitions,
        aggregate,
        verification,
        environment,
    })
}
