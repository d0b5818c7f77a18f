//! A minimal binary tensor container plus CSV export.
//!
//! Layout: 8 magic bytes, a little-endian u32 rank, `rank` little-endian u64
//! dimensions, then the row-major payload of little-endian f64 values.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NNTENS01";

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch(format!(
            "dims {:?} imply {} values, got {}",
            dims,
            expected,
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(8 + 4 + dims.len() * 8 + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |reason: &str| Error::MalformedTensor {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(malformed("missing magic bytes"));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + rank * 8;
    if bytes.len() < header {
        return Err(malformed("truncated dimension list"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            u64::from_le_bytes(bytes[12 + i * 8..20 + i * 8].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count * 8 {
        return Err(malformed("payload size does not match dimensions"));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn write_matrix(path: &Path, m: &ArrayView2<f64>) -> Result<()> {
    let data: Vec<f64> = m.iter().cloned().collect();
    write_tensor(path, &[m.nrows(), m.ncols()], &data)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(Error::MalformedTensor {
            path: path.to_path_buf(),
            reason: format!("expected rank 2, got {}", dims.len()),
        });
    }
    Array2::from_shape_vec((dims[0], dims[1]), data).map_err(|e| Error::MalformedTensor {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// CSV with row/column headers for inspection. `labels` name both axes.
pub fn write_labeled_csv(path: &Path, labels: &[String], m: &ArrayView2<f64>) -> Result<()> {
    let mut out = String::new();
    out.push_str("id");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, row) in m.rows().into_iter().enumerate() {
        out.push_str(&labels[i]);
        for v in row {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn tensor_roundtrip_preserves_bits() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.tsr");
        let data = vec![0.0, 1.5, -2.25, f64::MIN_POSITIVE, 1e300, 0.1];
        write_tensor(&path, &[2, 3], &data).unwrap();
        let (dims, back) = read_tensor(&path).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(back, data);
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.tsr");
        let m = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        write_matrix(&path, &m.view()).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.tsr");
        fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(Error::MalformedTensor { .. })
        ));
    }

    #[test]
    fn labeled_csv_has_headers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![[1.0, 0.5], [0.5, 1.0]];
        write_labeled_csv(&path, &["1".into(), "2".into()], &m.view()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,1,2\n1,1,0.5\n2,0.5,1\n"));
    }
}
