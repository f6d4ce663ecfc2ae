//! Deterministic object content and checksums.
//!
//! Content is a SplitMix64 word stream written little-endian. Word `i` of the
//! stream for `seed` is
//!
//! ```text
//! z = seed + (i + 1) * 0x9E3779B97F4A7C15        (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! word = z ^ (z >> 31)
//! ```
//!
//! so any 8-byte aligned window of an object can be generated on its own. A
//! buffer of `n` bytes holds the first `n` bytes of the stream; a trailing
//! partial word is truncated.
//!
//! The checksum is 64-bit FNV-1a over the bytes (offset basis
//! `0xcbf29ce484222325`, prime `0x100000001b3`).

use crate::{Error, Result};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Word `index` of the stream seeded by `seed`.
#[inline]
pub fn stream_word(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Fills `buf` with the stream bytes starting at `byte_offset`, which must be
/// a multiple of 8.
pub fn fill_at(buf: &mut [u8], seed: u64, byte_offset: u64) {
    assert_eq!(byte_offset % 8, 0, "stream offsets are word aligned");
    let mut index = byte_offset / 8;
    let mut words = buf.chunks_exact_mut(8);
    for word in &mut words {
        word.copy_from_slice(&stream_word(seed, index).to_le_bytes());
        index += 1;
    }
    let tail = words.into_remainder();
    if !tail.is_empty() {
        let bytes = stream_word(seed, index).to_le_bytes();
        tail.copy_from_slice(&bytes[..tail.len()]);
    }
}

/// Incremental FNV-1a, so objects written in several chunks can be hashed in
/// order without reassembly.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(FNV_OFFSET_BASIS)
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(&mut self, bytes: &[u8]) {
        let mut hash = self.0;
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
        self.0 = hash;
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

/// Fills `buffer` from `seed` and returns the checksum of the result.
pub fn fill_buffer(buffer: &mut [u8], seed: u64) -> Result<u64> {
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("cannot fill an empty buffer".into()));
    }
    fill_at(buffer, seed, 0);
    Ok(checksum(buffer))
}

/// Seed of the `index`-th object of `rank`.
pub fn derive_seed(master_seed: u64, rank: u32, index: u64) -> u64 {
    stream_word(stream_word(master_seed, u64::from(rank)), index)
}

/// Checksum of the first `len` stream bytes of `seed`, computed without
/// materialising the whole object.
pub fn expected_checksum(seed: u64, len: u64) -> u64 {
    let mut scratch = vec![0u8; 1 << 16];
    let mut hasher = Fnv1a::new();
    let mut offset = 0u64;
    while offset < len {
        let n = (len - offset).min(scratch.len() as u64) as usize;
        fill_at(&mut scratch[..n], seed, offset);
        hasher.update(&scratch[..n]);
        offset += n as u64;
    }
    hasher.finish()
}
