//! Fixed-width index packing.
//!
//! Each code takes exactly `⌈log₂ n⌉` bits. Codes are appended LSB-first into
//! a little-endian bit stream: bit `k` of the stream is bit `k mod 8` of byte
//! `⌊k/8⌋`. Unused high bits of the final byte are zero.

use crate::error::{invalid, FormatError, Result};
use crate::grids::index_bits;

/// Bytes needed to hold `count` codes for an `n`-point grid.
pub fn packed_len(count: usize, n: usize) -> usize {
    (count * index_bits(n) as usize).div_ceil(8)
}

pub fn pack_indices(codes: &[u32], n: usize) -> Result<Vec<u8>> {
    let bits = index_bits(n);
    let mut out = Vec::with_capacity(packed_len(codes.len(), n));
    let (mut acc, mut filled) = (0u64, 0u32);
    for &c in codes {
        if c as usize >= n {
            return Err(invalid(format!("code {c} out of range for n = {n}")));
        }
        acc |= (c as u64) << filled;
        filled += bits;
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

pub fn unpack_indices(bytes: &[u8], count: usize, n: usize) -> Result<Vec<u32>> {
    let bits = index_bits(n);
    let need = packed_len(count, n);
    if bytes.len() < need {
        return Err(FormatError::Truncated { needed: need, have: bytes.len() }.into());
    }
    let mask = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity(count);
    let (mut acc, mut filled, mut pos) = (0u64, 0u32, 0usize);
    for _ in 0..count {
        while filled < bits {
            acc |= (bytes[pos] as u64) << filled;
            pos += 1;
            filled += 8;
        }
        let c = (acc & mask) as u32;
        acc >>= bits;
        filled -= bits;
        if c as usize >= n {
            return Err(FormatError::CodeOutOfRange { code: c, n: n as u32 }.into());
        }
        out.push(c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn nibbles_are_lsb_first() {
        assert_eq!(pack_indices(&[1, 2], 16).unwrap(), vec![0x21]);
        assert_eq!(pack_indices(&[1, 0, 1, 1, 0, 0, 0, 0], 2).unwrap(), vec![0x0D]);
    }

    #[test]
    fn single_point_grid_needs_no_bits() {
        assert!(pack_indices(&[0, 0, 0], 1).unwrap().is_empty());
        assert_eq!(unpack_indices(&[], 3, 1).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn seven_bit_round_trip_large() {
        let mut r = crate::rng::stream(5, &[]);
        let codes: Vec<u32> = (0..100_000).map(|_| r.random_range(0..88)).collect();
        let bytes = pack_indices(&codes, 88).unwrap();
        assert_eq!(bytes.len(), (100_000 * 7usize).div_ceil(8));
        assert_eq!(unpack_indices(&bytes, codes.len(), 88).unwrap(), codes);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(pack_indices(&[3], 3), Err(Error::InvalidArgument(_))));
        // 2 bits can hold 3 even though n = 3 does not allow it.
        assert!(matches!(
            unpack_indices(&[0b11], 1, 3),
            Err(Error::Corrupt(FormatError::CodeOutOfRange { code: 3, n: 3 }))
        ));
        assert!(matches!(
            unpack_indices(&[0xff], 3, 16),
            Err(Error::Corrupt(FormatError::Truncated { .. }))
        ));
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..=4096, raw in prop::collection::vec(any::<u32>(), 0..300)) {
            let codes: Vec<u32> = raw.iter().map(|c| c % n as u32).collect();
            let bytes = pack_indices(&codes, n).unwrap();
            prop_assert_eq!(bytes.len(), packed_len(codes.len(), n));
            prop_assert_eq!(unpack_indices(&bytes, codes.len(), n).unwrap(), codes);
        }
    }
}
