//! Grid file formats.
//!
//! Binary `HGRD` layout, little-endian:
//!
//! | field       | type        |
//! |-------------|-------------|
//! | magic       | `b"HGRD"`   |
//! | version     | u16 (= 1)   |
//! | p           | u32         |
//! | n           | u32         |
//! | metric      | u8 (0 = L2, 1 = L1) |
//! | mse_per_dim | f64         |
//! | points      | n·p × f64, row-major |
//! | crc         | u32, CRC-32 of all prior bytes |
//!
//! Provenance is not part of the binary format; grids read back carry the
//! builder tag `"file"`. The JSON export keeps everything and is meant for
//! inspection.

use super::{Grid, Metric, Provenance};
use crate::error::{FormatError, Result};
use crate::format::Reader;

pub const GRID_MAGIC: [u8; 4] = *b"HGRD";
pub const GRID_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 8;

pub fn grid_to_bytes(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.points.len() * 8 + 4);
    out.extend_from_slice(&GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.p as u32).to_le_bytes());
    out.extend_from_slice(&(grid.n as u32).to_le_bytes());
    out.push(grid.metric.to_byte());
    out.extend_from_slice(&grid.mse_per_dim.to_le_bytes());
    for x in &grid.points {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn grid_from_bytes(bytes: &[u8]) -> Result<Grid> {
    let mut r = Reader::new(bytes);
    r.expect_magic(GRID_MAGIC)?;
    let version = r.u16()?;
    if version != GRID_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let p = r.u32()? as usize;
    let n = r.u32()? as usize;
    let metric_byte = r.u8()?;
    let mse = r.f64()?;
    let count = n
        .checked_mul(p)
        .ok_or_else(|| FormatError::InvalidField("n·p overflows".into()))?;
    r.check_crc_at(HEADER_LEN + count * 8)?;
    let metric = Metric::from_byte(metric_byte)
        .ok_or_else(|| FormatError::InvalidField(format!("metric byte {metric_byte}")))?;
    let points = (0..count).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
    Grid::new(p, points, metric, mse, Provenance::new("file", String::new(), None))
        .map_err(|e| FormatError::InvalidField(e.to_string()).into())
}

/// CRC-32 identifying a grid: the trailing checksum of its binary encoding.
pub fn grid_crc(grid: &Grid) -> u32 {
    let bytes = grid_to_bytes(grid);
    u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
}

pub fn grid_to_json(grid: &Grid) -> Result<String> {
    #[derive(serde::Serialize)]
    struct View<'a> {
        p: usize,
        n: usize,
        metric: Metric,
        mse_per_dim: f64,
        provenance: &'a Provenance,
        points: Vec<&'a [f64]>,
    }
    let view = View {
        p: grid.p,
        n: grid.n,
        metric: grid.metric,
        mse_per_dim: grid.mse_per_dim,
        provenance: &grid.provenance,
        points: grid.points.chunks(grid.p).collect(),
    };
    Ok(serde_json::to_string_pretty(&view)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::grids::{build_af_grid, lloyd_max_1d};

    #[test]
    fn binary_round_trip_is_bit_exact() {
        for g in [lloyd_max_1d(4, 1e-12).unwrap(), build_af_grid(3, 1e-12).unwrap()] {
            let bytes = grid_to_bytes(&g);
            let back = grid_from_bytes(&bytes).unwrap();
            assert_eq!(back.points(), g.points());
            assert_eq!(back.mse_per_dim().to_bits(), g.mse_per_dim().to_bits());
            assert_eq!(back.metric(), g.metric());
            assert_eq!(grid_to_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_corruption_with_distinct_errors() {
        let g = lloyd_max_1d(4, 1e-12).unwrap();
        let bytes = grid_to_bytes(&g);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(grid_from_bytes(&bad_magic), Err(Error::Corrupt(FormatError::BadMagic { .. }))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            grid_from_bytes(&bad_version),
            Err(Error::Corrupt(FormatError::UnsupportedVersion(9)))
        ));

        let mut flipped = bytes.clone();
        flipped[30] ^= 0x40;
        assert!(matches!(grid_from_bytes(&flipped), Err(Error::Corrupt(FormatError::CrcMismatch { .. }))));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(grid_from_bytes(truncated), Err(Error::Corrupt(FormatError::Truncated { .. }))));
    }

    #[test]
    fn json_export_lists_points() {
        let g = lloyd_max_1d(2, 1e-12).unwrap();
        let v: serde_json::Value = serde_json::from_str(&grid_to_json(&g).unwrap()).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["points"].as_array().unwrap().len(), 2);
        assert_eq!(v["provenance"]["builder"], "lloydmax");
    }
}
