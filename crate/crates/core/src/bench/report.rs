use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::ckpt::{CheckpointTimings, ObjectVerification, ReadCounts, RestoreTimings, WriteCounts};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Stage timings of one rank in one repetition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub checkpoint: CheckpointTimings,
    pub restore: Option<RestoreTimings>,
    /// Barrier waits, plan broadcast and manifest gather.
    pub coordination_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub repetition: u32,
    pub rank: u32,
    pub timings: PhaseTimings,
    pub write_window_s: f64,
    pub read_window_s: Option<f64>,
    /// From the first barrier of the repetition to its end.
    pub wall_time_s: f64,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub write_ops: u64,
    pub read_ops: u64,
    pub file_opens: u64,
    pub allocations: u64,
    pub reuses: u64,
    pub submit_calls: u64,
    pub max_in_flight: u64,
    pub resubmissions: u64,
    pub writes: WriteCounts,
    pub reads: Option<ReadCounts>,
    pub objects_verified: usize,
    /// Up to [`MAX_REPORTED_FAILURES`] failing objects.
    pub failures: Vec<ObjectVerification>,
    pub failure_count: usize,
}

pub const MAX_REPORTED_FAILURES: usize = 16;

/// Totals of one repetition across ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repetition: u32,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub write_window_s: f64,
    pub read_window_s: Option<f64>,
    pub write_throughput_bytes_per_s: f64,
    pub read_throughput_bytes_per_s: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Summary { median, min: v[0], max: v[n - 1] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub write_throughput_bytes_per_s: Summary,
    pub read_throughput_bytes_per_s: Option<Summary>,
    pub wall_time_s: Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    pub name: String,
    pub provenance: String,
    pub approximate: bool,
    pub num_ranks: u32,
    pub objects: usize,
    pub total_bytes: u64,
    pub overhead_bytes: u64,
    pub planned_files: usize,
    pub planned_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub hostname: String,
    pub kernel: String,
    pub timestamp_unix_ms: u64,
    pub stripe_hint: Option<String>,
    pub ring_registered_buffers: bool,
    pub ring_fixed_files: bool,
}

impl Environment {
    pub fn capture(stripe_hint: Option<String>) -> Self {
        Environment {
            hostname: hostname(),
            kernel: kernel_release(),
            timestamp_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
            stripe_hint,
            ring_registered_buffers: false,
            ring_fixed_files: false,
        }
    }
}

fn c_field(bytes: &[libc::c_char]) -> String {
    let raw: Vec<u8> = bytes.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    String::from_utf8_lossy(&raw).into_owned()
}

fn hostname() -> String {
    let mut buf = [0 as libc::c_char; 256];
    // SAFETY: the buffer length is passed and the result is NUL-terminated on success.
    if unsafe { libc::gethostname(buf.as_mut_ptr(), buf.len() - 1) } == 0 {
        c_field(&buf)
    } else {
        "unknown".into()
    }
}

fn kernel_release() -> String {
    // SAFETY: uname fills a zeroed struct.
    unsafe {
        let mut u: libc::utsname = std::mem::zeroed();
        if libc::uname(&mut u) == 0 {
            format!("{} {}", c_field(&u.sysname), c_field(&u.release))
        } else {
            "unknown".into()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub performed: bool,
    pub passed: bool,
    pub objects_checked: usize,
    pub objects_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run_id: String,
    pub config: RunConfig,
    pub workload: WorkloadSummary,
    pub per_rank: Vec<RankMetrics>,
    pub repetitions: Vec<Aggregate>,
    pub aggregate: AggregateSummary,
    pub verification: Verification,
    pub environment: Environment,
}

/// Aggregate throughput: bytes moved by all ranks over the slowest rank's
/// barrier-to-barrier window.
pub fn throughput(bytes: u64, window_s: f64) -> f64 {
    if window_s > 0.0 {
        bytes as f64 / window_s
    } else {
        0.0
    }
}

pub fn aggregate_repetition(repetition: u32, ranks: &[&RankMetrics]) -> Aggregate {
    let bytes_written = ranks.iter().map(|r| r.bytes_written).sum();
    let bytes_read = ranks.iter().map(|r| r.bytes_read).sum();
    let write_window_s = ranks.iter().map(|r| r.write_window_s).fold(0.0, f64::max);
    let read_window_s = ranks
        .iter()
        .map(|r| r.read_window_s)
        .try_fold(0.0, |acc, w| w.map(|w| f64::max(acc, w)));
    Aggregate {
        repetition,
        bytes_written,
        bytes_read,
        write_window_s,
        read_window_s,
        write_throughput_bytes_per_s: throughput(bytes_written, write_window_s),
        read_throughput_bytes_per_s: read_window_s.map(|w| throughput(bytes_read, w)),
        wall_time_s: ranks.iter().map(|r| r.wall_time_s).fold(0.0, f64::max),
    }
}

pub fn summarize(repetitions: &[Aggregate]) -> Result<AggregateSummary> {
    let pick = |f: fn(&Aggregate) -> f64| Summary::of(&repetitions.iter().map(f).collect::<Vec<_>>());
    let empty = || Error::InvalidArgument("report has no repetitions".into());
    let reads: Option<Vec<f64>> = repetitions.iter().map(|a| a.read_throughput_bytes_per_s).collect();
    Ok(AggregateSummary {
        write_throughput_bytes_per_s: pick(|a| a.write_throughput_bytes_per_s).ok_or_else(empty)?,
        read_throughput_bytes_per_s: reads.and_then(|r| Summary::of(&r)),
        wall_time_s: pick(|a| a.wall_time_s).ok_or_else(empty)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

/// Flattened per-(repetition, rank) row.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    schema_version: u32,
    run_id: &'a str,
    label: &'a str,
    workload: &'a str,
    strategy: &'static str,
    backend: String,
    direct: bool,
    emulation: String,
    alloc: String,
    queue_depth: u32,
    alignment_bytes: u64,
    num_ranks: u32,
    repetition: u32,
    rank: u32,
    bytes_written: u64,
    bytes_read: u64,
    write_ops: u64,
    read_ops: u64,
    file_opens: u64,
    allocations: u64,
    reuses: u64,
    coordination_s: f64,
    serialize_s: f64,
    staging_s: f64,
    flush_s: f64,
    sync_s: f64,
    manifest_s: f64,
    checkpoint_total_s: f64,
    write_window_s: f64,
    restore_manifest_s: Option<f64>,
    restore_metadata_s: Option<f64>,
    restore_lean_s: Option<f64>,
    restore_read_s: Option<f64>,
    restore_allocation_s: Option<f64>,
    restore_staging_s: Option<f64>,
    restore_verify_s: Option<f64>,
    restore_total_s: Option<f64>,
    read_window_s: Option<f64>,
    failure_count: usize,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(SCHEMA_VERSION)) {
            return Err(Error::InvalidArgument(format!(
                "report schema version {version:?} is not {SCHEMA_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        RunReport::from_json(&text)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = csv::Writer::from_writer(Vec::new());
        let c = &self.config;
        for m in &self.per_rank {
            let ck = &m.timings.checkpoint;
            let rs = m.timings.restore.as_ref();
            out.serialize(CsvRow {
                schema_version: self.schema_version,
                run_id: &self.run_id,
                label: c.label.as_deref().unwrap_or(""),
                workload: &self.workload.name,
                strategy: c.strategy.slug(),
                backend: c.backend.to_string(),
                direct: c.direct,
                emulation: c.emulation.to_string(),
                alloc: c.alloc.to_string(),
                queue_depth: c.queue_depth,
                alignment_bytes: c.alignment_bytes,
                num_ranks: c.num_ranks,
                repetition: m.repetition,
                rank: m.rank,
                bytes_written: m.bytes_written,
                bytes_read: m.bytes_read,
                write_ops: m.write_ops,
                read_ops: m.read_ops,
                file_opens: m.file_opens,
                allocations: m.allocations,
                reuses: m.reuses,
                coordination_s: m.timings.coordination_s,
                serialize_s: ck.serialize_s,
                staging_s: ck.staging_s,
                flush_s: ck.flush_s,
                sync_s: ck.sync_s,
                manifest_s: ck.manifest_s,
                checkpoint_total_s: ck.total_s,
                write_window_s: m.write_window_s,
                restore_manifest_s: rs.map(|r| r.manifest_s),
                restore_metadata_s: rs.map(|r| r.metadata_s),
                restore_lean_s: rs.map(|r| r.lean_s),
                restore_read_s: rs.map(|r| r.read_s),
                restore_allocation_s: rs.map(|r| r.allocation_s),
                restore_staging_s: rs.map(|r| r.staging_s),
                restore_verify_s: rs.map(|r| r.verify_s),
                restore_total_s: rs.map(|r| r.total_s),
                read_window_s: m.read_window_s,
                failure_count: m.failure_count,
            })?;
        }
        let bytes = out.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::path(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::path(path, e))
}
