use std::fs::{self, File};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::restore::{ObjectStatus, ObjectVerification};
use super::{manifest_path, version_dir};
use crate::workload::Fnv1a;
use crate::{Error, Result};

/// Offline check of a checkpoint version. A version without a readable
/// manifest is reported as unusable rather than as an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version_dir: PathBuf,
    pub usable: bool,
    pub problem: Option<String>,
    pub objects_checked: usize,
    pub objects_failed: usize,
    pub objects: Vec<ObjectVerification>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.usable && self.objects_failed == 0
    }

    fn unusable(dir: PathBuf, problem: String) -> Self {
        VerifyReport { version_dir: dir, usable: false, problem: Some(problem), objects_checked: 0, objects_failed: 0, objects: Vec::new() }
    }
}

/// Re-reads every object listed in `manifest` with plain positional reads
/// and compares checksums.
pub fn verify_checkpoint(root: &Path, manifest: &Manifest) -> Result<VerifyReport> {
    let dir = version_dir(root, manifest.checkpoint_version);
    let mut objects = Vec::with_capacity(manifest.entries.len());
    let mut buf = vec![0u8; 1 << 20];
    for entry in &manifest.entries {
        let mut hasher = Fnv1a::new();
        let mut got = 0u64;
        let mut status = None;
        'extents: for ext in &entry.extents {
            let path = dir.join(&ext.file_key);
            let file = match File::open(&path) {
                Ok(f) => f,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    status = Some(ObjectStatus::MissingFile { file_key: ext.file_key.clone() });
                    break;
                }
                Err(e) => return Err(Error::path(&path, e)),
            };
            let mut done = 0u64;
            while done < ext.length {
                let want = (ext.length - done).min(buf.len() as u64) as usize;
                let n = match file.read_at(&mut buf[..want], ext.offset + done) {
                    Ok(0) => break 'extents,
                    Ok(n) => n,
                    Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                    Err(e) => {
                        status = Some(ObjectStatus::IoError { message: format!("{}: {e}", ext.file_key) });
                        break 'extents;
                    }
                };
                hasher.update(&buf[..n]);
                done += n as u64;
                got += n as u64;
            }
        }
        let status = status.unwrap_or_else(|| {
            if got < entry.length {
                ObjectStatus::ShortRead { expected: entry.length, got }
            } else if hasher.finish() != entry.checksum {
                ObjectStatus::mismatch(entry.checksum, hasher.finish())
            } else {
                ObjectStatus::Pass
            }
        });
        objects.push(ObjectVerification {
            object_id: entry.object_id,
            rank: entry.rank,
            kind: entry.kind,
            length: entry.length,
            status,
        });
    }
    let failed = objects.iter().filter(|o| !o.status.is_pass()).count();
    Ok(VerifyReport {
        version_dir: dir,
        usable: true,
        problem: None,
        objects_checked: objects.len(),
        objects_failed: failed,
        objects,
    })
}

/// Loads the manifest of `version` and verifies it.
pub fn verify_version(root: &Path, version: u64) -> Result<VerifyReport> {
    let dir = version_dir(root, version);
    match Manifest::load(&manifest_path(root, version)) {
        Ok(manifest) => verify_checkpoint(root, &manifest),
        Err(Error::MissingFile(_)) => Ok(VerifyReport::unusable(dir, "no committed manifest".into())),
        Err(Error::ShortManifest(reason)) => Ok(VerifyReport::unusable(dir, format!("manifest is unreadable: {reason}"))),
        Err(e) => Err(e),
    }
}

/// Highest `ckpt-<n>` version directory under `root`, committed or not.
pub fn latest_version(root: &Path) -> Result<Option<u64>> {
    let dir = match fs::read_dir(root) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::path(root, e)),
    };
    let mut best = None;
    for entry in dir {
        let entry = entry.map_err(|e| Error::path(root, e))?;
        let name = entry.file_name();
        if let Some(v) = name.to_str().and_then(|n| n.strip_prefix("ckpt-")).and_then(|n| n.parse::<u64>().ok()) {
            best = best.max(Some(v));
        }
    }
    Ok(best)
}
