//! Kernel-facing halves of the two backends. Both report raw results
//! (`bytes` or `-errno`) keyed by slot; the engine owns all retry logic.

use std::collections::VecDeque;
use std::io;
use std::os::unix::io::RawFd;

use io_uring::{opcode, squeue, types, IoUring};

use super::IoOp;

/// Largest single kernel transfer; longer requests continue as resubmissions.
pub(crate) const MAX_TRANSFER: usize = 1 << 30;

pub(crate) struct Transfer {
    pub op: IoOp,
    pub fd: RawFd,
    pub offset: u64,
    pub ptr: *mut u8,
    pub len: usize,
}

pub(crate) trait Driver {
    fn start(&mut self, slot: u64, t: Transfer) -> io::Result<()>;
    fn submit(&mut self) -> io::Result<()>;
    /// Appends finished transfers to `out`; waits for at least one if `wait`.
    fn reap(&mut self, wait: bool, out: &mut Vec<(u64, i64)>) -> io::Result<()>;
}

pub(crate) struct RingDriver {
    ring: IoUring,
}

impl RingDriver {
    pub fn new(queue_depth: u32) -> io::Result<Self> {
        let entries = queue_depth.max(1).next_power_of_two();
        Ok(RingDriver { ring: IoUring::new(entries)? })
    }

    fn entry(slot: u64, t: &Transfer) -> squeue::Entry {
        let fd = types::Fd(t.fd);
        let len = t.len as u32;
        match t.op {
            IoOp::Write => opcode::Write::new(fd, t.ptr, len).offset(t.offset).build(),
            IoOp::Read => opcode::Read::new(fd, t.ptr, len).offset(t.offset).build(),
        }
        .user_data(slot)
    }
}

impl Driver for RingDriver {
    fn start(&mut self, slot: u64, t: Transfer) -> io::Result<()> {
        let entry = Self::entry(slot, &t);
        loop {
            // SAFETY: the engine keeps the buffer behind `t.ptr` alive and
            // untouched until this slot's completion has been reaped.
            let pushed = unsafe { self.ring.submission().push(&entry) };
            if pushed.is_ok() {
                return Ok(());
            }
            self.ring.submit()?;
        }
    }

    fn submit(&mut self) -> io::Result<()> {
        loop {
            match self.ring.submit() {
                Err(e) if e.raw_os_error() == Some(libc::EINTR) => continue,
                other => return other.map(|_| ()),
            }
        }
    }

    fn reap(&mut self, wait: bool, out: &mut Vec<(u64, i64)>) -> io::Result<()> {
        let before = out.len();
        out.extend(self.ring.completion().map(|c| (c.user_data(), i64::from(c.result()))));
        if wait && out.len() == before {
            loop {
                match self.ring.submit_and_wait(1) {
                    Err(e) if e.raw_os_error() == Some(libc::EINTR) => continue,
                    Err(e) => return Err(e),
                    Ok(_) => break,
                }
            }
            out.extend(self.ring.completion().map(|c| (c.user_data(), i64::from(c.result()))));
        }
        Ok(())
    }
}

/// Executes each transfer with a single `pwrite`/`pread` at start time.
#[derive(Default)]
pub(crate) struct BlockingDriver {
    ready: VecDeque<(u64, i64)>,
}

impl Driver for BlockingDriver {
    fn start(&mut self, slot: u64, t: Transfer) -> io::Result<()> {
        // SAFETY: ptr/len describe a live buffer owned by the engine.
        let res = unsafe {
            match t.op {
                IoOp::Write => libc::pwrite(t.fd, t.ptr as *const libc::c_void, t.len, t.offset as libc::off_t),
                IoOp::Read => libc::pread(t.fd, t.ptr as *mut libc::c_void, t.len, t.offset as libc::off_t),
            }
        };
        let res = if res < 0 {
            -i64::from(io::Error::last_os_error().raw_os_error().unwrap_or(libc::EIO))
        } else {
            res as i64
        };
        self.ready.push_back((slot, res));
        Ok(())
    }

    fn submit(&mut self) -> io::Result<()> {
        Ok(())
    }

    fn reap(&mut self, _wait: bool, out: &mut Vec<(u64, i64)>) -> io::Result<()> {
        out.extend(self.ready.drain(..));
        Ok(())
    }
}
