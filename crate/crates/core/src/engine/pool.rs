use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::{touch_pages, AlignedBuf};
use crate::units::MIB;
use crate::{Error, Result};

pub const DEFAULT_POOL_REGIONS: usize = 4;
pub const DEFAULT_REGION_BYTES: usize = 64 * MIB as usize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocCounters {
    pub allocations: u64,
    pub reuses: u64,
}

/// Bounded set of aligned regions, created lazily and reused LIFO.
///
/// `acquire` blocks while every region is checked out; single-threaded
/// callers use `try_acquire` and release regions by harvesting completions.
#[derive(Debug)]
pub struct BufferPool {
    region_size: usize,
    region_count: usize,
    alignment: usize,
    state: Mutex<PoolState>,
    available: Condvar,
}

#[derive(Debug, Default)]
struct PoolState {
    free: Vec<AlignedBuf>,
    created: usize,
    counters: AllocCounters,
}

impl BufferPool {
    pub fn new(region_size: usize, region_count: usize, alignment: usize) -> Result<Self> {
        if region_size == 0 || region_count == 0 {
            return Err(Error::InvalidArgument("buffer pool needs at least one non-empty region".into()));
        }
        if !alignment.is_power_of_two() || !region_size.is_multiple_of(alignment) {
            return Err(Error::InvalidArgument(format!(
                "region size {region_size} must be a multiple of the power-of-two alignment {alignment}"
            )));
        }
        Ok(BufferPool {
            region_size,
            region_count,
            alignment,
            state: Mutex::new(PoolState::default()),
            available: Condvar::new(),
        })
    }

    pub fn region_size(&self) -> usize {
        self.region_size
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn alignment(&self) -> usize {
        self.alignment
    }

    pub fn acquire(&self) -> AlignedBuf {
        let mut state = self.state.lock().expect("pool lock");
        loop {
            if let Some(buf) = self.take(&mut state) {
                return buf;
            }
            state = self.available.wait(state).expect("pool lock");
        }
    }

    pub fn try_acquire(&self) -> Option<AlignedBuf> {
        let mut state = self.state.lock().expect("pool lock");
        self.take(&mut state)
    }

    fn take(&self, state: &mut PoolState) -> Option<AlignedBuf> {
        if let Some(buf) = state.free.pop() {
            state.counters.reuses += 1;
            return Some(buf);
        }
        if state.created < self.region_count {
            state.created += 1;
            state.counters.allocations += 1;
            return Some(AlignedBuf::new(self.region_size, self.alignment));
        }
        None
    }

    /// Creates every remaining region up front and touches its pages, so
    /// later acquires never allocate or fault.
    pub fn prefill(&self) {
        let mut state = self.state.lock().expect("pool lock");
        while state.created < self.region_count {
            let mut buf = AlignedBuf::new(self.region_size, self.alignment);
            touch_pages(&mut buf);
            state.created += 1;
            state.counters.allocations += 1;
            state.free.push(buf);
        }
    }

    pub fn release(&self, region: AlignedBuf) -> Result<()> {
        if region.len() != self.region_size || region.align() != self.alignment {
            return Err(Error::InvalidArgument("region does not belong to this pool".into()));
        }
        let mut state = self.state.lock().expect("pool lock");
        debug_assert!(state.free.len() < state.created);
        state.free.push(region);
        drop(state);
        self.available.notify_one();
        Ok(())
    }

    pub fn counters(&self) -> AllocCounters {
        self.state.lock().expect("pool lock").counters
    }

    pub fn in_use(&self) -> usize {
        let state = self.state.lock().expect("pool lock");
        state.created - state.free.len()
    }
}
