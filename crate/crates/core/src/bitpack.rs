//! Fixed-width bit packing of codebook indices.
//!
//! Values are written least-significant bit first, filling each byte from
//! bit 0 upward. Trailing pad bits in the last byte are zero.

use crate::{Error, Result};

/// Bits needed for indices into a codebook of `m` entries: `ceil(log2 m)`,
/// never less than 1.
pub fn index_bits(m: usize) -> u32 {
    if m <= 2 {
        1
    } else {
        usize::BITS - (m - 1).leading_zeros()
    }
}

pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}

pub fn pack(values: &[u32], bits: u32) -> Vec<u8> {
    assert!((1..=32).contains(&bits));
    let mut out = vec![0u8; packed_len(values.len(), bits)];
    let mut bitpos = 0usize;
    for &v in values {
        debug_assert!(bits == 32 || v < (1u32 << bits));
        let mut v = v as u64;
        let mut left = bits as usize;
        while left > 0 {
            let byte = bitpos / 8;
            let off = bitpos % 8;
            let take = (8 - off).min(left);
            out[byte] |= ((v & ((1 << take) - 1)) as u8) << off;
            v >>= take;
            bitpos += take;
            left -= take;
        }
    }
    out
}

pub fn unpack(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<u32>> {
    assert!((1..=32).contains(&bits));
    if bytes.len() != packed_len(count, bits) {
        return Err(Error::CorruptStream(format!(
            "packed index table is {} bytes, expected {} for {count} x {bits} bits",
            bytes.len(),
            packed_len(count, bits)
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut bitpos = 0usize;
    for _ in 0..count {
        let mut v = 0u64;
        let mut got = 0usize;
        while got < bits as usize {
            let byte = bitpos / 8;
            let off = bitpos % 8;
            let take = (8 - off).min(bits as usize - got);
            let chunk = (bytes[byte] >> off) as u64 & ((1 << take) - 1);
            v |= chunk << got;
            got += take;
            bitpos += take;
        }
        out.push(v as u32);
    }
    Ok(out)
}
