//! Batched asynchronous I/O engine.
//!
//! An [`Engine`] owns a set of open files and a submission queue bounded by
//! `queue_depth`. [`Engine::submit_batch`] starts as many requests as there
//! are free slots and parks the rest; [`Engine::await_completions`] harvests
//! finished requests and refills the freed slots. The `Ring` backend drives an
//! io_uring instance (no registered buffers, no fixed files); the `Blocking`
//! backend performs each transfer with `pwrite`/`pread` when it is started but
//! keeps the same slot accounting, so both backends see identical call
//! sequences.
//!
//! Short transfers are resubmitted internally: a completion is either the
//! whole request or an error. An engine is confined to one thread.

mod buffer;
mod driver;
mod pool;

pub use buffer::{touch_pages, AlignedBuf};
pub use pool::{AllocCounters, BufferPool, DEFAULT_POOL_REGIONS, DEFAULT_REGION_BYTES};

use std::collections::VecDeque;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::OpenOptionsExt;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::layout::{validate_alignment, DEFAULT_ALIGNMENT};
use crate::{Error, Result};
use driver::{BlockingDriver, Driver, RingDriver, Transfer, MAX_TRANSFER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Ring,
    Blocking,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ring => "ring",
            Backend::Blocking => "blocking",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" | "io-uring" | "io_uring" => Ok(Backend::Ring),
            "blocking" | "posix" => Ok(Backend::Blocking),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub backend: Backend,
    pub queue_depth: u32,
    pub direct: bool,
    pub alignment_bytes: u64,
    pub sync_on_close: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            backend: Backend::Ring,
            queue_depth: 128,
            direct: true,
            alignment_bytes: DEFAULT_ALIGNMENT,
            sync_on_close: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_depth == 0 {
            return Err(Error::InvalidArgument("queue depth must be at least 1".into()));
        }
        if self.direct {
            validate_alignment(self.alignment_bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    ReadOnly,
    /// Create or truncate, read-write.
    WriteCreate,
    /// Create if missing but keep existing contents; used when several ranks
    /// write disjoint regions of one file.
    WriteShared,
}

impl OpenMode {
    fn describe(self) -> &'static str {
        match self {
            OpenMode::ReadOnly => "read-only",
            OpenMode::WriteCreate => "write-create",
            OpenMode::WriteShared => "write-shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FileHandle(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IoOp {
    Write,
    Read,
}

#[derive(Debug)]
pub struct IoRequest {
    pub file: FileHandle,
    pub op: IoOp,
    pub offset: u64,
    pub buf: AlignedBuf,
    /// Bytes to transfer from the start of `buf`.
    pub len: usize,
    pub tag: u64,
}

impl IoRequest {
    pub fn write(file: FileHandle, offset: u64, buf: AlignedBuf, tag: u64) -> Self {
        let len = buf.len();
        IoRequest { file, op: IoOp::Write, offset, buf, len, tag }
    }

    pub fn read(file: FileHandle, offset: u64, buf: AlignedBuf, len: usize, tag: u64) -> Self {
        IoRequest { file, op: IoOp::Read, offset, buf, len, tag }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestError {
    Os(i32),
    /// End of file before the request was satisfied.
    UnexpectedEof,
    /// The handle was closed before the request started.
    ClosedHandle,
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestError::Os(errno) => write!(f, "{}", io::Error::from_raw_os_error(*errno)),
            RequestError::UnexpectedEof => f.write_str("unexpected end of file"),
            RequestError::ClosedHandle => f.write_str("file handle was closed"),
        }
    }
}

#[derive(Debug)]
pub struct CompletionRecord {
    pub tag: u64,
    pub op: IoOp,
    pub offset: u64,
    pub bytes_transferred: u64,
    pub error: Option<RequestError>,
    pub resubmissions: u32,
    pub submit_time: Instant,
    pub complete_time: Instant,
    pub buf: AlignedBuf,
}

impl CompletionRecord {
    pub fn latency(&self) -> Duration {
        self.complete_time.duration_since(self.submit_time)
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub write_ops: u64,
    pub read_ops: u64,
    pub bytes_written: u64,
    pub bytes_read: u64,
    pub failed_ops: u64,
    pub submit_calls: u64,
    pub resubmissions: u64,
    pub file_opens: u64,
    pub syncs: u64,
    pub max_in_flight: u64,
}

struct FileSlot {
    file: Option<File>,
    path: PathBuf,
    mode: OpenMode,
}

struct InFlight {
    tag: u64,
    op: IoOp,
    fd: i32,
    offset: u64,
    buf: AlignedBuf,
    len: usize,
    done: usize,
    resubmissions: u32,
    submit_time: Instant,
}

const MAX_INTERRUPT_RETRIES: u32 = 64;

pub struct Engine {
    config: EngineConfig,
    driver: Box<dyn Driver>,
    files: Vec<FileSlot>,
    pending: VecDeque<IoRequest>,
    slots: Vec<Option<InFlight>>,
    free_slots: Vec<usize>,
    in_flight: usize,
    completed: Vec<CompletionRecord>,
    reaped: Vec<(u64, i64)>,
    stats: EngineStats,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let driver: Box<dyn Driver> = match config.backend {
            Backend::Ring => Box::new(
                RingDriver::new(config.queue_depth).map_err(|e| Error::io("creating io_uring instance", e))?,
            ),
            Backend::Blocking => Box::<BlockingDriver>::default(),
        };
        let depth = config.queue_depth as usize;
        Ok(Engine {
            config,
            driver,
            files: Vec::new(),
            pending: VecDeque::new(),
            slots: (0..depth).map(|_| None).collect(),
            free_slots: (0..depth).rev().collect(),
            in_flight: 0,
            completed: Vec::new(),
            reaped: Vec::with_capacity(depth),
            stats: EngineStats::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn queued(&self) -> usize {
        self.pending.len()
    }

    /// Requests submitted but not yet returned by `await_completions`.
    pub fn outstanding(&self) -> usize {
        self.pending.len() + self.in_flight + self.completed.len()
    }

    pub fn open_file(&mut self, path: &Path, mode: OpenMode) -> Result<FileHandle> {
        let mut options = OpenOptions::new();
        match mode {
            OpenMode::ReadOnly => options.read(true),
            OpenMode::WriteCreate => options.read(true).write(true).create(true).truncate(true),
            OpenMode::WriteShared => options.read(true).write(true).create(true),
        };
        if self.config.direct {
            options.custom_flags(libc::O_DIRECT);
        }
        let file = options
            .open(path)
            .map_err(|e| classify_open_error(path, e, self.config.direct))?;
        self.stats.file_opens += 1;
        self.files.push(FileSlot { file: Some(file), path: path.to_path_buf(), mode });
        Ok(FileHandle(self.files.len() as u32 - 1))
    }

    fn slot(&self, handle: FileHandle) -> Result<&FileSlot> {
        self.files.get(handle.0 as usize).ok_or(Error::InvalidHandle(handle.0))
    }

    pub fn path(&self, handle: FileHandle) -> Result<&Path> {
        Ok(&self.slot(handle)?.path)
    }

    /// Flushes file data and metadata to stable storage.
    pub fn sync_file(&mut self, handle: FileHandle) -> Result<Duration> {
        let slot = self.slot(handle)?;
        let file = slot.file.as_ref().ok_or(Error::InvalidHandle(handle.0))?;
        let start = Instant::now();
        file.sync_all().map_err(|e| Error::path(&slot.path, e))?;
        self.stats.syncs += 1;
        Ok(start.elapsed())
    }

    /// Requests already in flight finish normally; queued requests for this
    /// handle complete with [`RequestError::ClosedHandle`].
    pub fn close_file(&mut self, handle: FileHandle) -> Result<()> {
        if self.config.sync_on_close && self.slot(handle)?.mode != OpenMode::ReadOnly {
            self.sync_file(handle)?;
        }
        let slot = self.files.get_mut(handle.0 as usize).ok_or(Error::InvalidHandle(handle.0))?;
        slot.file = None;
        Ok(())
    }

    fn validate(&self, req: &IoRequest) -> Result<()> {
        let slot = self.slot(req.file)?;
        if req.op == IoOp::Write && slot.mode == OpenMode::ReadOnly {
            return Err(Error::ModeViolation(slot.mode.describe()));
        }
        if req.len > req.buf.len() {
            return Err(Error::InvalidArgument(format!(
                "request of {} bytes exceeds its {}-byte buffer",
                req.len,
                req.buf.len()
            )));
        }
        if req.len == 0 {
            return Err(Error::InvalidArgument("zero-length request".into()));
        }
        if self.config.direct {
            let a = self.config.alignment_bytes;
            let checks = [
                ("offset", req.offset),
                ("length", req.len as u64),
                ("buffer address", req.buf.as_ptr() as usize as u64),
            ];
            for (what, value) in checks {
                if value % a != 0 {
                    return Err(Error::AlignmentViolation { what, value, alignment: a });
                }
            }
        }
        Ok(())
    }

    /// Validates every request, then starts as many as the queue allows.
    /// Returns how many requests of this batch were started immediately; the
    /// rest start as completions free slots.
    pub fn submit_batch(&mut self, requests: Vec<IoRequest>) -> Result<usize> {
        for r in &requests {
            self.validate(r)?;
        }
        let before = self.pending.len();
        let batch = requests.len();
        self.pending.extend(requests);
        let started = self.pump()?;
        // Older queued requests start first.
        Ok(started.saturating_sub(before).min(batch))
    }

    pub fn submit(&mut self, request: IoRequest) -> Result<usize> {
        self.submit_batch(vec![request])
    }

    fn pump(&mut self) -> Result<usize> {
        let mut started = 0;
        while self.in_flight < self.config.queue_depth as usize {
            let Some(req) = self.pending.pop_front() else { break };
            started += 1;
            let fd = self.files[req.file.0 as usize].file.as_ref().map(AsRawFd::as_raw_fd);
            let now = Instant::now();
            let Some(fd) = fd else {
                self.finish(req.tag, req.op, req.offset, req.buf, 0, Some(RequestError::ClosedHandle), 0, now);
                continue;
            };
            let slot = self.free_slots.pop().expect("free slot while below queue depth");
            let op = InFlight {
                tag: req.tag,
                op: req.op,
                fd,
                offset: req.offset,
                buf: req.buf,
                len: req.len,
                done: 0,
                resubmissions: 0,
                submit_time: now,
            };
            self.in_flight += 1;
            assert!(self.in_flight <= self.config.queue_depth as usize, "in-flight bound exceeded");
            self.stats.max_in_flight = self.stats.max_in_flight.max(self.in_flight as u64);
            self.start(slot, op)?;
        }
        if started > 0 {
            self.stats.submit_calls += 1;
            self.driver.submit().map_err(|e| Error::io("submitting I/O", e))?;
        }
        Ok(started)
    }

    fn start(&mut self, slot: usize, mut op: InFlight) -> Result<()> {
        let len = (op.len - op.done).min(MAX_TRANSFER);
        let transfer = Transfer {
            op: op.op,
            fd: op.fd,
            offset: op.offset + op.done as u64,
            // SAFETY: done < len <= buf.len()
            ptr: unsafe { op.buf.as_mut_ptr().add(op.done) },
            len,
        };
        self.slots[slot] = Some(op);
        self.driver.start(slot as u64, transfer).map_err(|e| Error::io("queueing I/O", e))
    }

    /// Blocks until at least `min_count` requests have completed, then returns
    /// every completion available. Per-request failures are reported inside
    /// the records.
    pub fn await_completions(&mut self, min_count: usize) -> Result<Vec<CompletionRecord>> {
        if min_count > self.outstanding() {
            return Err(Error::InvalidArgument(format!(
                "waiting for {min_count} completions with {} outstanding",
                self.outstanding()
            )));
        }
        self.poll(false)?;
        while self.completed.len() < min_count {
            if self.in_flight == 0 {
                self.pump()?;
                if self.in_flight == 0 {
                    break;
                }
            }
            self.poll(true)?;
        }
        Ok(std::mem::take(&mut self.completed))
    }

    fn poll(&mut self, wait: bool) -> Result<()> {
        let mut reaped = std::mem::take(&mut self.reaped);
        reaped.clear();
        self.driver.reap(wait, &mut reaped).map_err(|e| Error::io("reaping completions", e))?;
        for &(slot, res) in &reaped {
            self.complete_slot(slot as usize, res)?;
        }
        self.reaped = reaped;
        self.pump()?;
        Ok(())
    }

    fn complete_slot(&mut self, slot: usize, res: i64) -> Result<()> {
        let mut op = self.slots[slot].take().expect("completion for an idle slot");
        let align = self.config.alignment_bytes;
        let outcome = if res == -i64::from(libc::EINTR) || res == -i64::from(libc::EAGAIN) {
            if op.resubmissions >= MAX_INTERRUPT_RETRIES {
                Some(RequestError::Os(-res as i32))
            } else {
                None
            }
        } else if res < 0 {
            Some(RequestError::Os(-res as i32))
        } else if res == 0 {
            Some(RequestError::UnexpectedEof)
        } else {
            let res = res as usize;
            op.done += res;
            if op.done >= op.len {
                self.retire(slot, op, None);
                return Ok(());
            }
            let requested = (op.len - (op.done - res)).min(MAX_TRANSFER);
            if self.config.direct && res < requested && !(res as u64).is_multiple_of(align) {
                // Direct transfers only come back unaligned at end of file.
                Some(RequestError::UnexpectedEof)
            } else {
                None
            }
        };
        match outcome {
            Some(err) => self.retire(slot, op, Some(err)),
            None => {
                op.resubmissions += 1;
                self.stats.resubmissions += 1;
                self.start(slot, op)?;
                self.driver.submit().map_err(|e| Error::io("resubmitting I/O", e))?;
            }
        }
        Ok(())
    }

    fn retire(&mut self, slot: usize, op: InFlight, error: Option<RequestError>) {
        self.in_flight -= 1;
        self.free_slots.push(slot);
        let now = Instant::now();
        self.finish(op.tag, op.op, op.offset, op.buf, op.done as u64, error, op.resubmissions, op.submit_time);
        if let Some(rec) = self.completed.last_mut() {
            rec.complete_time = now;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        tag: u64,
        op: IoOp,
        offset: u64,
        buf: AlignedBuf,
        bytes: u64,
        error: Option<RequestError>,
        resubmissions: u32,
        submit_time: Instant,
    ) {
        match op {
            IoOp::Write => {
                self.stats.write_ops += 1;
                self.stats.bytes_written += bytes;
            }
            IoOp::Read => {
                self.stats.read_ops += 1;
                self.stats.bytes_read += bytes;
            }
        }
        if error.is_some() {
            self.stats.failed_ops += 1;
        }
        self.completed.push(CompletionRecord {
            tag,
            op,
            offset,
            bytes_transferred: bytes,
            error,
            resubmissions,
            submit_time,
            complete_time: Instant::now(),
            buf,
        });
    }

    /// Waits for everything outstanding.
    pub fn drain(&mut self) -> Result<Vec<CompletionRecord>> {
        let n = self.outstanding();
        self.await_completions(n)
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        // Buffers of in-flight ring operations must outlive the kernel's use.
        if self.in_flight > 0 {
            let _ = self.drain();
        }
    }
}

/// `EINVAL` on an `O_DIRECT` open means the filesystem refused cache bypass.
pub fn classify_open_error(path: &Path, err: io::Error, direct: bool) -> Error {
    if direct && err.raw_os_error() == Some(libc::EINVAL) {
        Error::DirectUnsupported { path: path.to_path_buf(), source: err }
    } else {
        Error::path(path, err)
    }
}

/// Raises the soft open-file limit to the hard limit; file-per-shard and
/// fragmented layouts keep many files open at once.
pub fn raise_open_file_limit() {
    // SAFETY: plain getrlimit/setrlimit on a stack struct.
    unsafe {
        let mut lim = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
        if libc::getrlimit(libc::RLIMIT_NOFILE, &mut lim) == 0 && lim.rlim_cur < lim.rlim_max {
            lim.rlim_cur = lim.rlim_max;
            libc::setrlimit(libc::RLIMIT_NOFILE, &lim);
        }
    }
}
