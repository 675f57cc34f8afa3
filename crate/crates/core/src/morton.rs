//! Morton (z-order) codes for voxel coordinates.
//!
//! Bit `i` of `x` lands at output bit `3i`, `y` at `3i + 1` and `z` at
//! `3i + 2`. Up to 21 bits per axis fit a `u64`.

use crate::error::{Error, Result};

pub const MAX_BITS: u32 = 21;

/// Spreads the low 21 bits of `v` so that two zero bits separate each one.
#[inline]
fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x1f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x1f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

/// Interleaves three coordinates, each required to be below `2^bits`.
pub fn morton_code(x: u32, y: u32, z: u32, bits: u32) -> Result<u64> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidArgument(format!(
            "morton bit count {bits} must be in 1..={MAX_BITS}"
        )));
    }
    let limit = 1u64 << bits;
    for v in [x, y, z] {
        if u64::from(v) >= limit {
            return Err(Error::CoordinateOutOfRange {
                value: i64::from(v),
                bitdepth: bits as u8,
            });
        }
    }
    Ok(encode(x, y, z))
}

/// Unchecked interleave of the low 21 bits of each coordinate.
#[inline]
pub fn encode(x: u32, y: u32, z: u32) -> u64 {
    spread(u64::from(x)) | (spread(u64::from(y)) << 1) | (spread(u64::from(z)) << 2)
}

#[inline]
pub fn encode_point(p: &[u32; 3]) -> u64 {
    encode(p[0], p[1], p[2])
}

#[inline]
pub fn decode(code: u64) -> [u32; 3] {
    [
        compact(code) as u32,
        compact(code >> 1) as u32,
        compact(code >> 2) as u32,
    ]
}

/// Permutation that sorts `points` by Morton code (stable on ties).
pub fn morton_order(points: &[[u32; 3]]) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (encode_point(p), i))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}
