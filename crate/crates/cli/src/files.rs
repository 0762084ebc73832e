//! Reading inputs and writing artifacts atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use higgs::grids::{grid_from_bytes, Grid};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Write `bytes` to a temp file next to `path`, then rename over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Grid, CliError> {
    Ok(grid_from_bytes(&read_bytes(path)?)?)
}

/// Fail early if an input is missing or an output directory does not exist.
pub fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    for p in inputs {
        if !p.is_file() {
            return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
        }
    }
    for p in outputs {
        let dir = match p.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")));
        }
    }
    Ok(())
}

/// Path with `.json` appended to the full file name.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
    dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "txt")
}

/// Load a `.txt` file of numbers (one row per line) or a raw little-endian
/// blob described by `<file>.json`.
pub fn read_tensor(path: &Path) -> Result<Tensor, CliError> {
    if is_text(path) {
        return parse_text(&read_text(path)?).map_err(|m| CliError::Corrupt(format!("{}: {m}", path.display())));
    }
    let meta_path = sidecar(path);
    let meta: TensorMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| CliError::Corrupt(format!("{}: {e}", meta_path.display())))?;
    let bytes = read_bytes(path)?;
    let count: usize = meta.shape.iter().product();
    let width = match meta.dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if meta.shape.is_empty() || bytes.len() != count * width {
        return Err(CliError::Corrupt(format!(
            "{}: {} bytes but shape {:?} of {:?} needs {}",
            path.display(),
            bytes.len(),
            meta.shape,
            meta.dtype,
            count * width
        )));
    }
    let data = match meta.dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Tensor { shape: meta.shape, data })
}

fn parse_text(text: &str) -> Result<Tensor, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| format!("line {}: {s:?}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("no values".into());
    }
    let cols = rows[0].len();
    let shape = if rows.len() > 1 && rows.iter().all(|r| r.len() == cols) {
        vec![rows.len(), cols]
    } else {
        vec![rows.iter().map(Vec::len).sum()]
    };
    Ok(Tensor { shape, data: rows.concat() })
}

/// Write a tensor as text (`.txt`) or as a raw blob plus JSON sidecar.
pub fn write_tensor(path: &Path, t: &Tensor, dtype: Dtype) -> Result<(), CliError> {
    if is_text(path) {
        let cols = if t.shape.len() == 2 { t.shape[1] } else { t.data.len() };
        let mut s = String::new();
        for row in t.data.chunks(cols.max(1)) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        return write_atomic(path, s.as_bytes());
    }
    let bytes: Vec<u8> = match dtype {
        Dtype::F32 => t.data.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect(),
        Dtype::F64 => t.data.iter().flat_map(|x| x.to_le_bytes()).collect(),
    };
    let meta = serde_json::to_string_pretty(&TensorMeta { shape: t.shape.clone(), dtype })
        .map_err(|e| CliError::Lib(e.into()))?;
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar(path), meta.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_rows_become_a_matrix() {
        let t = parse_text("1 2 3\n4,5,6\n").unwrap();
        assert_eq!(t.shape, vec![2, 3]);
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = parse_text("# comment\n1\n2 3\n").unwrap();
        assert_eq!(t.shape, vec![3]);
        assert!(parse_text("1 x").is_err());
        assert!(parse_text("\n").is_err());
    }

    #[test]
    fn blob_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let t = Tensor { shape: vec![2, 2], data: vec![0.1, -2.5, 3.0, 1e-300] };
        write_tensor(&p, &t, Dtype::F64).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), t);
        let txt = dir.path().join("w.txt");
        write_tensor(&txt, &t, Dtype::F64).unwrap();
        assert_eq!(read_tensor(&txt).unwrap(), t);
    }

    #[test]
    fn short_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let t = Tensor { shape: vec![4], data: vec![1.0; 4] };
        write_tensor(&p, &t, Dtype::F32).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(read_tensor(&p), Err(CliError::Corrupt(_))));
    }
}
