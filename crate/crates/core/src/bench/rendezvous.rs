use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use crate::{Error, Result};

/// File-system rendezvous among the ranks of one run.
///
/// Every operation is numbered, so ranks must call the same sequence of
/// barriers, broadcasts and gathers. Arrival is signalled by atomically
/// renaming a marker into place; waiting polls for the other ranks' markers.
#[derive(Debug)]
pub struct Rendezvous {
    dir: PathBuf,
    rank: u32,
    world: u32,
    timeout: Duration,
    seq: u64,
    waited: Duration,
}

impl Rendezvous {
    /// Joins the rendezvous for `run_id` under `coord_root`.
    pub fn join(coord_root: &Path, run_id: &str, rank: u32, world: u32, timeout: Duration) -> Result<Self> {
        if world == 0 || rank >= world {
            return Err(Error::InvalidArgument(format!("rank {rank} is outside a world of {world}")));
        }
        let dir = coord_root.join(run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::path(&dir, e))?;
        Ok(Rendezvous { dir, rank, world, timeout, seq: 0, waited: Duration::ZERO })
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn world(&self) -> u32 {
        self.world
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Total time spent waiting in this rendezvous so far.
    pub fn waited(&self) -> Duration {
        self.waited
    }

    fn key(&mut self, kind: &str, label: &str) -> String {
        self.seq += 1;
        format!("{:04}-{kind}-{label}", self.seq)
    }

    fn publish(&self, name: &str, payload: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let path = self.dir.join(name);
        fs::write(&tmp, payload).map_err(|e| Error::path(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::path(&path, e))
    }

    fn wait_for(&mut self, label: &str, paths: &[PathBuf]) -> Result<()> {
        let start = Instant::now();
        let mut pause = Duration::from_micros(50);
        loop {
            let arrived = paths.iter().filter(|p| p.exists()).count();
            if arrived == paths.len() {
                break;
            }
            let waited = start.elapsed();
            if waited >= self.timeout {
                self.waited += waited;
                return Err(Error::RendezvousTimeout {
                    label: label.to_string(),
                    arrived,
                    world: paths.len(),
                    waited,
                });
            }
            thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(2));
        }
        self.waited += start.elapsed();
        Ok(())
    }

    fn arrive_and_wait(&mut self, key: &str, payload: &[u8]) -> Result<Vec<PathBuf>> {
        self.publish(&format!("{key}.rank{}", self.rank), payload)?;
        let paths: Vec<PathBuf> = (0..self.world).map(|r| self.dir.join(format!("{key}.rank{r}"))).collect();
        self.wait_for(key, &paths)?;
        Ok(paths)
    }

    /// Returns once every rank has called `barrier` with this sequence number.
    pub fn barrier(&mut self, label: &str) -> Result<()> {
        let key = self.key("barrier", label);
        self.arrive_and_wait(&key, b"")?;
        Ok(())
    }

    /// Rank 0's `payload` is delivered to every rank. Other ranks' payloads
    /// are ignored.
    pub fn broadcast(&mut self, label: &str, payload: &[u8]) -> Result<Vec<u8>> {
        let key = self.key("broadcast", label);
        let paths = self.arrive_and_wait(&key, if self.rank == 0 { payload } else { b"" })?;
        fs::read(&paths[0]).map_err(|e| Error::path(&paths[0], e))
    }

    /// Every rank's payload, in rank order, is returned on rank 0; other
    /// ranks get `None`.
    pub fn gather(&mut self, label: &str, payload: &[u8]) -> Result<Option<Vec<Vec<u8>>>> {
        let key = self.key("gather", label);
        let paths = self.arrive_and_wait(&key, payload)?;
        if self.rank != 0 {
            return Ok(None);
        }
        paths.iter().map(|p| fs::read(p).map_err(|e| Error::path(p, e))).collect::<Result<_>>().map(Some)
    }
}
