//! `HQTZ` quantized-tensor format, little-endian.
//!
//! | field      | type                         |
//! |------------|------------------------------|
//! | magic      | `b"HQTZ"`                    |
//! | version    | u16 (= 1)                    |
//! | rank       | u8                           |
//! | dims       | rank × u64                   |
//! | D          | u64                          |
//! | g          | u32                          |
//! | p          | u16                          |
//! | n          | u32 (0 = lossless)           |
//! | scale_bits | u8 (16, 32 or 64)            |
//! | pad_len    | u16                          |
//! | seed       | u64                          |
//! | grid crc   | u32 (0 when lossless)        |
//! | scales     | D/g × (f16 / f32 / f64)      |
//! | indices    | ⌈D/p⌉ codes packed at ⌈log₂ n⌉ bits, or D × f64 when lossless |
//! | crc        | u32, CRC-32 of all prior bytes |

use half::f16;

use super::{packed_len, unpack_indices, Payload, QuantConfig, QuantizedTensor, ScaleBits};
use crate::error::{FormatError, Result};
use crate::format::Reader;
use crate::hadamard::RhtSeed;

pub const TENSOR_MAGIC: [u8; 4] = *b"HQTZ";
pub const TENSOR_VERSION: u16 = 1;

fn header_len(rank: usize) -> usize {
    4 + 2 + 1 + 8 * rank + 8 + 4 + 2 + 4 + 1 + 2 + 8 + 4
}

pub fn tensor_to_bytes(q: &QuantizedTensor) -> Vec<u8> {
    let c = q.config();
    let mut out = Vec::with_capacity(header_len(q.shape().len()) + (q.payload_bits() as usize).div_ceil(8) + 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(q.shape().len() as u8);
    for &d in q.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(q.len() as u64).to_le_bytes());
    out.extend_from_slice(&(c.g as u32).to_le_bytes());
    out.extend_from_slice(&(c.p as u16).to_le_bytes());
    out.extend_from_slice(&(c.n as u32).to_le_bytes());
    out.push(c.scale_bits.bits() as u8);
    out.extend_from_slice(&(q.pad_len() as u16).to_le_bytes());
    out.extend_from_slice(&c.seed.0.to_le_bytes());
    out.extend_from_slice(&c.grid_crc.to_le_bytes());
    for &s in q.scales() {
        match c.scale_bits {
            ScaleBits::F16 => out.extend_from_slice(&f16::from_f64(s).to_le_bytes()),
            ScaleBits::F32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
            ScaleBits::F64 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    match q.payload() {
        Payload::Packed(b) => out.extend_from_slice(b),
        Payload::Exact(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn field(msg: impl Into<String>) -> crate::Error {
    FormatError::InvalidField(msg.into()).into()
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<QuantizedTensor> {
    let mut r = Reader::new(bytes);
    r.expect_magic(TENSOR_MAGIC)?;
    let version = r.u16()?;
    if version != TENSOR_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let rank = r.u8()? as usize;
    if rank == 0 {
        return Err(field("rank 0"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(usize::try_from(r.u64()?).map_err(|_| field("dimension overflows usize"))?);
    }
    let d = usize::try_from(r.u64()?).map_err(|_| field("D overflows usize"))?;
    let g = r.u32()? as usize;
    let p = r.u16()? as usize;
    let n = r.u32()? as usize;
    let scale_bits = r.u8()?;
    let pad_len = r.u16()? as usize;
    let seed = r.u64()?;
    let grid_crc = r.u32()?;

    let product = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    if product != Some(d) || d == 0 {
        return Err(field(format!("dims {shape:?} do not multiply to D = {d}")));
    }
    let scale_bits = ScaleBits::from_bits(scale_bits as u32)
        .ok_or_else(|| field(format!("scale_bits {scale_bits}")))?;
    let config = QuantConfig { g, p, n, grid_crc, seed: RhtSeed(seed), scale_bits };
    config.validate().map_err(|e| field(e.to_string()))?;
    if d % g != 0 {
        return Err(field(format!("D = {d} not divisible by g = {g}")));
    }
    if pad_len != (p - d % p) % p {
        return Err(field(format!("pad_len {pad_len} inconsistent with D = {d}, p = {p}")));
    }
    let groups = d / g;
    let scale_bytes = groups * scale_bits.bits() as usize / 8;
    let index_bytes = if config.is_lossless() {
        d.checked_mul(8).ok_or_else(|| field("D too large"))?
    } else {
        packed_len(d.div_ceil(p), n)
    };
    let body = header_len(rank)
        .checked_add(scale_bytes)
        .and_then(|x| x.checked_add(index_bytes))
        .ok_or_else(|| field("length overflow"))?;
    r.check_crc_at(body)?;

    let raw = r.take(scale_bytes)?;
    let width = scale_bits.bits() as usize / 8;
    let scales: Vec<f64> = raw
        .chunks_exact(width)
        .map(|b| match scale_bits {
            ScaleBits::F16 => f16::from_le_bytes([b[0], b[1]]).to_f64(),
            ScaleBits::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            ScaleBits::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
        .collect();
    if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(field("scales must be finite and non-negative"));
    }
    let block = r.take(index_bytes)?;
    let payload = if config.is_lossless() {
        let v: Vec<f64> = block.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(field("non-finite rotated value"));
        }
        Payload::Exact(v)
    } else {
        unpack_indices(block, d.div_ceil(p), n)?;
        Payload::Packed(block.to_vec())
    };
    QuantizedTensor::from_parts(shape, config, scales, payload).map_err(|e| field(e.to_string()))
}
