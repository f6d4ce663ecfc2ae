//! Staged checkpoint and restore pipelines.
//!
//! A checkpoint version lives in `<root>/ckpt-<version>/`: data files under
//! the strategy directory named by the layout plan, and `manifest.json`,
//! which is written last, after every data file has been synced. A version
//! without a manifest is not a checkpoint.

mod checkpoint;
mod manifest;
mod restore;
mod verify;

pub use checkpoint::{
    checkpoint, checkpoint_rank, commit_manifest, prepare_version_dir, CheckpointJob, CheckpointOutcome,
    CheckpointTimings, RankCheckpoint, WriteCounts,
};
pub use manifest::{Extent, Manifest, ManifestEntry, MANIFEST_FILE};
pub use restore::{
    restore, restore_rank, ObjectStatus, ObjectVerification, RankRestore, ReadCounts, RestoreJob,
    RestoreOutcome, RestoreTimings,
};
pub use verify::{latest_version, verify_checkpoint, verify_version, VerifyReport};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the pipeline issues its I/O.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmulationMode {
    /// Stage everything, then flush in queue-depth batches; restore coalesces
    /// contiguous extents into large reads.
    Batched,
    /// One submission per object as soon as it is ready; restore reads one
    /// object at a time, waiting for each.
    #[serde(rename = "per-object")]
    PerObjectImmediate,
    /// Per-object submission over fixed-size chunk files in per-object
    /// directories. Requires the fixed-chunk fragmentation layout.
    #[serde(rename = "fragmented")]
    FragmentedChunks,
}

impl fmt::Display for EmulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmulationMode::Batched => "batched",
            EmulationMode::PerObjectImmediate => "per-object",
            EmulationMode::FragmentedChunks => "fragmented",
        })
    }
}

impl FromStr for EmulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batched" => Ok(EmulationMode::Batched),
            "per-object" | "per-object-immediate" => Ok(EmulationMode::PerObjectImmediate),
            "fragmented" | "fragmented-chunks" => Ok(EmulationMode::FragmentedChunks),
            other => Err(Error::InvalidArgument(format!("unknown emulation mode `{other}`"))),
        }
    }
}

/// Where restore reads land before being copied to their destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocMode {
    /// Regions from a bounded, reused buffer pool.
    Pooled,
    /// A fresh allocation for every extent read.
    PerObject,
}

impl fmt::Display for AllocMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocMode::Pooled => "pooled",
            AllocMode::PerObject => "per-object",
        })
    }
}

impl FromStr for AllocMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" | "pool" => Ok(AllocMode::Pooled),
            "per-object" => Ok(AllocMode::PerObject),
            other => Err(Error::InvalidArgument(format!("unknown alloc mode `{other}`"))),
        }
    }
}

/// The timed write or read window of a rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Write,
    Read,
}

/// Called around the timed window so a coordinator can line ranks up on a
/// barrier. Time spent inside the hooks is not part of the window.
pub trait PhaseHooks {
    fn before_window(&mut self, _window: Window) -> Result<()> {
        Ok(())
    }

    fn after_window(&mut self, _window: Window) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl PhaseHooks for NoHooks {}

pub fn version_dir(root: &Path, version: u64) -> PathBuf {
    root.join(format!("ckpt-{version}"))
}

pub fn manifest_path(root: &Path, version: u64) -> PathBuf {
    version_dir(root, version).join(MANIFEST_FILE)
}

/// Splits elapsed time into named phases; switching phase charges the time
/// since the last switch to the phase being left.
pub(crate) struct PhaseClock<const N: usize> {
    current: usize,
    since: Instant,
    acc: [f64; N],
}

impl<const N: usize> PhaseClock<N> {
    pub fn start(phase: usize) -> Self {
        PhaseClock { current: phase, since: Instant::now(), acc: [0.0; N] }
    }

    /// Returns the phase that was active, so callers can switch back.
    pub fn enter(&mut self, phase: usize) -> usize {
        let now = Instant::now();
        self.acc[self.current] += now.duration_since(self.since).as_secs_f64();
        self.since = now;
        std::mem::replace(&mut self.current, phase)
    }

    pub fn finish(mut self) -> [f64; N] {
        self.enter(self.current);
        self.acc
    }
}

pub(crate) fn request_error(context: String, err: crate::engine::RequestError) -> Error {
    use crate::engine::RequestError;
    let source = match err {
        RequestError::Os(errno) => std::io::Error::from_raw_os_error(errno),
        RequestError::UnexpectedEof => std::io::ErrorKind::UnexpectedEof.into(),
        RequestError::ClosedHandle => std::io::Error::from_raw_os_error(libc::EBADF),
    };
    Error::Io { context, source }
}

#[cfg(test)]
mod tests;
