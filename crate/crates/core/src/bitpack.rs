//! Fixed-width integer packing.
//!
//! Values are laid out back to back, least significant bit first within
//! each byte, with no per-value padding. The last byte is zero-filled.

use crate::error::{Error, Result};

fn check_width(bit_width: u8) -> Result<()> {
    if !(1..=32).contains(&bit_width) {
        return Err(Error::domain(format!("bit width must be in 1..=32, got {bit_width}")));
    }
    Ok(())
}

/// Number of bytes needed for `count` values of `bit_width` bits.
pub fn packed_len(count: usize, bit_width: u8) -> usize {
    (count * bit_width as usize).div_ceil(8)
}

pub fn pack_bits(values: &[u32], bit_width: u8) -> Result<Vec<u8>> {
    check_width(bit_width)?;
    let limit = 1u64 << bit_width;
    let mut out = Vec::with_capacity(packed_len(values.len(), bit_width));
    let mut acc: u64 = 0;
    let mut filled: u32 = 0;
    for (index, &v) in values.iter().enumerate() {
        if v as u64 >= limit {
            return Err(Error::Overflow {
                index,
                value: v as u64,
                bit_width,
            });
        }
        acc |= (v as u64) << filled;
        filled += bit_width as u32;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

pub fn unpack_bits(bytes: &[u8], bit_width: u8, count: usize) -> Result<Vec<u32>> {
    check_width(bit_width)?;
    let need = packed_len(count, bit_width);
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("packed stream truncated: need {need} bytes for {count} values"),
        ));
    }
    let mask = (1u64 << bit_width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled: u32 = 0;
    let mut pos = 0;
    for _ in 0..count {
        while filled < bit_width as u32 {
            acc |= (bytes[pos] as u64) << filled;
            pos += 1;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= bit_width;
        filled -= bit_width as u32;
    }
    Ok(out)
}

/// Smallest width that holds `max_value`, at least 1.
pub fn bit_width_for(max_value: u32) -> u8 {
    (32 - max_value.leading_zeros()).max(1) as u8
}
