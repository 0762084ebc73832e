//! Group-wise RHT vector quantization of flat tensors.
//!
//! Each group of `g` consecutive weights is normalized by its L2 norm `s`,
//! rotated with [`rht_forward`](crate::hadamard::rht_forward) (entries then
//! have mean square 1), and the rotated tensor is cut into contiguous
//! `p`-chunks that are rounded to the nearest grid point. When `p` does not
//! divide `D` the last chunk is zero-padded; padded positions are dropped on
//! decode. The stored scale is `s/√g`, so decode is
//! `rht_inverse(ŵ†) · stored · √g`.
//!
//! Codes are 0-based. A config with `n = 0` is the lossless mode: the
//! rotated values are kept as f64 and nothing is rounded.

mod io;
mod pack;

pub use io::{tensor_from_bytes, tensor_to_bytes, TENSOR_MAGIC, TENSOR_VERSION};
pub use pack::{pack_indices, packed_len, unpack_indices};

use half::f16;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FormatError, Result};
use crate::grids::io::grid_crc;
use crate::grids::{index_bits, Grid};
use crate::hadamard::{rht_forward_in_place, rht_inverse_in_place, RhtSeed, SignVector};

/// Precision of stored per-group scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleBits {
    F16,
    F32,
    F64,
}

impl ScaleBits {
    pub fn bits(self) -> u32 {
        match self {
            ScaleBits::F16 => 16,
            ScaleBits::F32 => 32,
            ScaleBits::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            16 => Some(ScaleBits::F16),
            32 => Some(ScaleBits::F32),
            64 => Some(ScaleBits::F64),
            _ => None,
        }
    }

    /// Round to the storage precision.
    pub fn round(self, x: f64) -> f64 {
        match self {
            ScaleBits::F16 => f16::from_f64(x).to_f64(),
            ScaleBits::F32 => x as f32 as f64,
            ScaleBits::F64 => x,
        }
    }
}

/// `log₂(n)/p + scale_bits/g` bits per weight.
pub fn effective_bitwidth(p: usize, n: usize, g: usize, scale_bits: u32) -> f64 {
    (n as f64).log2() / p as f64 + scale_bits as f64 / g as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub g: usize,
    pub p: usize,
    /// Grid size; 0 selects lossless mode.
    pub n: usize,
    pub grid_crc: u32,
    pub seed: RhtSeed,
    pub scale_bits: ScaleBits,
}

impl QuantConfig {
    /// Config for `grid` with 16-bit scales.
    pub fn for_grid(grid: &Grid, g: usize, seed: RhtSeed) -> Result<Self> {
        let c = Self {
            g,
            p: grid.dim(),
            n: grid.len(),
            grid_crc: grid_crc(grid),
            seed,
            scale_bits: ScaleBits::F16,
        };
        c.validate()?;
        Ok(c)
    }

    /// Rounding bypassed; rotated values and scales kept at f64.
    pub fn lossless(g: usize, seed: RhtSeed) -> Result<Self> {
        let c = Self { g, p: 1, n: 0, grid_crc: 0, seed, scale_bits: ScaleBits::F64 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_scale_bits(mut self, scale_bits: ScaleBits) -> Self {
        self.scale_bits = scale_bits;
        self
    }

    pub fn is_lossless(&self) -> bool {
        self.n == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g.is_power_of_two() {
            return Err(invalid(format!("group size {} is not a power of two", self.g)));
        }
        if self.p == 0 || self.p > self.g {
            return Err(invalid(format!("need 1 <= p <= g, got p = {}, g = {}", self.p, self.g)));
        }
        if self.is_lossless() && (self.p != 1 || self.scale_bits != ScaleBits::F64) {
            return Err(invalid("lossless mode requires p = 1 and 64-bit scales"));
        }
        Ok(())
    }

    /// Bits per value in the index block.
    pub fn code_bits(&self) -> u32 {
        if self.is_lossless() {
            64
        } else {
            index_bits(self.n)
        }
    }

    pub fn effective_bits(&self) -> f64 {
        if self.is_lossless() {
            64.0 + self.scale_bits.bits() as f64 / self.g as f64
        } else {
            effective_bitwidth(self.p, self.n, self.g, self.scale_bits.bits())
        }
    }

    /// Exact payload size of a `d`-element tensor: index bits plus scale bits.
    pub fn cost_bits(&self, d: usize) -> u64 {
        let chunks = d.div_ceil(self.p) as u64;
        let groups = (d / self.g) as u64;
        chunks * self.code_bits() as u64 + groups * self.scale_bits.bits() as u64
    }

    fn check_grid(&self, grid: Option<&Grid>) -> Result<()> {
        match (self.is_lossless(), grid) {
            (true, _) => Ok(()),
            (false, None) => Err(invalid("a grid is required unless the config is lossless")),
            (false, Some(grid)) => {
                if grid.dim() != self.p || grid.len() != self.n {
                    return Err(invalid(format!(
                        "grid is (p = {}, n = {}), config expects (p = {}, n = {})",
                        grid.dim(),
                        grid.len(),
                        self.p,
                        self.n
                    )));
                }
                let found = grid_crc(grid);
                if found != self.grid_crc {
                    return Err(FormatError::GridMismatch { expected: self.grid_crc, found }.into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Payload {
    Packed(Vec<u8>),
    Exact(Vec<f64>),
}

/// Encoded tensor. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    config: QuantConfig,
    scales: Vec<f64>,
    payload: Payload,
}

impl QuantizedTensor {
    pub(crate) fn from_parts(
        shape: Vec<usize>,
        config: QuantConfig,
        scales: Vec<f64>,
        payload: Payload,
    ) -> Result<Self> {
        config.validate()?;
        let d: usize = shape.iter().product();
        if shape.is_empty() || d == 0 || d % config.g != 0 {
            return Err(invalid(format!("shape {shape:?} incompatible with g = {}", config.g)));
        }
        if scales.len() != d / config.g {
            return Err(invalid("scale count must be D/g"));
        }
        let chunks = d.div_ceil(config.p);
        let ok = match &payload {
            Payload::Packed(b) => !config.is_lossless() && b.len() == packed_len(chunks, config.n),
            Payload::Exact(v) => config.is_lossless() && v.len() == d,
        };
        if !ok {
            return Err(invalid("payload size does not match config"));
        }
        Ok(Self { shape, config, scales, payload })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    /// Stored scales `s_i/√g`, already rounded to the storage precision.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Zero entries appended to complete the final `p`-chunk.
    pub fn pad_len(&self) -> usize {
        (self.config.p - self.len() % self.config.p) % self.config.p
    }

    pub fn chunk_count(&self) -> usize {
        self.len().div_ceil(self.config.p)
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.len() {
            return Err(invalid(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Grid codes, one per `p`-chunk. Empty in lossless mode.
    pub fn codes(&self) -> Result<Vec<u32>> {
        match &self.payload {
            Payload::Packed(b) => unpack_indices(b, self.chunk_count(), self.config.n),
            Payload::Exact(_) => Ok(Vec::new()),
        }
    }

    pub(crate) fn payload(&self) -> &Payload {
        &self.payload
    }

    /// Bits actually held by the index and scale blocks.
    pub fn payload_bits(&self) -> u64 {
        let index = match &self.payload {
            Payload::Packed(_) => self.chunk_count() as u64 * index_bits(self.config.n) as u64,
            Payload::Exact(v) => v.len() as u64 * 64,
        };
        index + self.scales.len() as u64 * self.config.scale_bits.bits() as u64
    }

    /// Rotated-space reconstruction `ŵ†` for flat positions `start..end`.
    fn rotated_range(&self, grid: Option<&Grid>, codes: &[u32], start: usize, end: usize) -> Vec<f64> {
        match (&self.payload, grid) {
            (Payload::Exact(v), _) => v[start..end].to_vec(),
            (Payload::Packed(_), Some(grid)) => {
                let p = self.config.p;
                (start..end).map(|k| grid.point(codes[k / p] as usize)[k % p]).collect()
            }
            (Payload::Packed(_), None) => unreachable!("grid checked by caller"),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Quantize a flat tensor. The result has shape `[D]`; see [`QuantizedTensor::reshape`].
///
/// `grid` may be `None` only for a lossless config.
pub fn encode(w: &[f64], grid: Option<&Grid>, config: &QuantConfig) -> Result<QuantizedTensor> {
    config.validate()?;
    config.check_grid(grid)?;
    let (d, g, p) = (w.len(), config.g, config.p);
    if d == 0 || d % g != 0 {
        return Err(invalid(format!("tensor length {d} is not a positive multiple of g = {g}")));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(invalid("tensor contains non-finite values"));
    }
    let signs = SignVector::from_seed(config.seed, g);
    let sqrt_g = (g as f64).sqrt();

    let mut rotated = w.to_vec();
    let scales: Vec<f64> = rotated
        .par_chunks_mut(g)
        .map(|group| {
            let s = l2(group);
            if s == 0.0 {
                return Ok(0.0);
            }
            let stored = config.scale_bits.round(s / sqrt_g);
            if stored == 0.0 || !stored.is_finite() {
                return Err(invalid(format!(
                    "group scale {} is not representable with {}-bit scales",
                    s / sqrt_g,
                    config.scale_bits.bits()
                )));
            }
            // Normalize by the stored scale so decode undoes exactly this.
            let norm = stored * sqrt_g;
            group.iter_mut().for_each(|x| *x /= norm);
            rht_forward_in_place(group, &signs)?;
            Ok(stored)
        })
        .collect::<Result<_>>()?;

    let payload = match grid {
        _ if config.is_lossless() => Payload::Exact(rotated),
        None => unreachable!("checked above"),
        Some(grid) => {
            let search = grid.searcher();
            let codes: Vec<u32> = (0..d.div_ceil(p))
                .into_par_iter()
                .map(|c| {
                    let (lo, hi) = (c * p, ((c + 1) * p).min(d));
                    if (lo / g..=(hi - 1) / g).all(|k| scales[k] == 0.0) {
                        return 0;
                    }
                    let mut chunk = [0.0; crate::grids::MAX_DIM];
                    chunk[..hi - lo].copy_from_slice(&rotated[lo..hi]);
                    search.nearest(&chunk[..p]).0 as u32
                })
                .collect();
            Payload::Packed(pack_indices(&codes, config.n)?)
        }
    };
    QuantizedTensor::from_parts(vec![d], *config, scales, payload)
}

/// Reconstruct the flat tensor.
pub fn decode(q: &QuantizedTensor, grid: Option<&Grid>) -> Result<Vec<f64>> {
    q.config.check_grid(grid)?;
    let g = q.config.g;
    let codes = q.codes()?;
    let signs = SignVector::from_seed(q.config.seed, g);
    let sqrt_g = (g as f64).sqrt();
    let mut out = vec![0.0; q.len()];
    out.par_chunks_mut(g).enumerate().try_for_each(|(k, group)| {
        let stored = q.scales[k];
        if stored == 0.0 {
            return Ok(());
        }
        group.copy_from_slice(&q.rotated_range(grid, &codes, k * g, (k + 1) * g));
        rht_inverse_in_place(group, &signs)?;
        let s = stored * sqrt_g;
        group.iter_mut().for_each(|x| *x *= s);
        Ok::<_, crate::Error>(())
    })?;
    Ok(out)
}

/// `‖decode(q) − w‖² / ‖w‖²`.
pub fn measure_relative_error(w: &[f64], q: &QuantizedTensor, grid: Option<&Grid>) -> Result<f64> {
    if w.len() != q.len() {
        return Err(invalid("tensor length differs from the quantized tensor"));
    }
    let norm2: f64 = w.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Err(invalid("relative error undefined for a zero tensor"));
    }
    let w_hat = decode(q, grid)?;
    let err: f64 = w.iter().zip(&w_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / norm2)
}

/// `decode(q) · x` for a `[rows, cols]` tensor, computed in rotated space.
///
/// `x` is rotated once per column group; each row is reconstructed only as
/// grid values and dotted against the rotated activations.
pub fn rotated_matvec(q: &QuantizedTensor, x: &[f64], grid: Option<&Grid>) -> Result<Vec<f64>> {
    q.config.check_grid(grid)?;
    let [rows, cols] = q.shape[..] else {
        return Err(invalid(format!("rotated_matvec needs a matrix, got shape {:?}", q.shape)));
    };
    let g = q.config.g;
    if cols % g != 0 {
        return Err(invalid(format!("input dimension {cols} is not a multiple of g = {g}")));
    }
    if x.len() != cols {
        return Err(invalid(format!("activation length {} != input dimension {cols}", x.len())));
    }
    let signs = SignVector::from_seed(q.config.seed, g);
    let sqrt_g = (g as f64).sqrt();
    let mut xr = x.to_vec();
    for block in xr.chunks_mut(g) {
        rht_forward_in_place(block, &signs)?;
        block.iter_mut().for_each(|v| *v /= sqrt_g);
    }
    let codes = q.codes()?;
    let per_row = cols / g;
    Ok((0..rows)
        .into_par_iter()
        .map(|r| {
            let row = q.rotated_range(grid, &codes, r * cols, (r + 1) * cols);
            (0..per_row)
                .map(|k| {
                    let stored = q.scales[r * per_row + k];
                    if stored == 0.0 {
                        return 0.0;
                    }
                    let dot: f64 =
                        row[k * g..(k + 1) * g].iter().zip(&xr[k * g..(k + 1) * g]).map(|(a, b)| a * b).sum();
                    stored * dot
                })
                .sum()
        })
        .collect())
}
