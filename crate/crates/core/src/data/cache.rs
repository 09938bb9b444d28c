use std::io::{Read, Write};
use std::path::Path;

use super::{DatasetSplit, SplitTag};
use crate::diff::Matrix;
use crate::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"MBFD";
pub const CACHE_VERSION: u32 = 1;

fn label_to_f64(l: Option<u8>) -> f64 {
    l.map_or(-1.0, f64::from)
}

fn f64_to_label(v: f64) -> Result<Option<u8>> {
    match v {
        -1.0 => Ok(None),
        0.0 => Ok(Some(0)),
        1.0 => Ok(Some(1)),
        x => Err(Error::Format(format!("bad label value {x} in cache"))),
    }
}

/// Writes features followed by `t` and `s` columns (`-1` for a missing label)
/// as little-endian `f64`, row-major, after a 16-byte header.
pub fn write_cache(path: &Path, split: &DatasetSplit) -> Result<()> {
    let rows = u32::try_from(split.len()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(split.dim() + 2).map_err(|_| Error::Format("too many columns".into()))?;
    let mut buf = Vec::with_capacity(16 + 8 * rows as usize * cols as usize);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for i in 0..split.len() {
        for v in split.features.row(i) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&label_to_f64(split.t[i]).to_le_bytes());
        buf.extend_from_slice(&label_to_f64(split.s[i]).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_cache(path: &Path, tag: SplitTag) -> Result<DatasetSplit> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset cache", path.display())));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    if cols < 2 || bytes.len() != 16 + 8 * rows * cols {
        return Err(Error::Format("cache size does not match its header".into()));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let d = cols - 2;
    let mut features = Vec::with_capacity(rows * d);
    let mut t = Vec::with_capacity(rows);
    let mut s = Vec::with_capacity(rows);
    for r in values.chunks_exact(cols) {
        features.extend_from_slice(&r[..d]);
        t.push(f64_to_label(r[d])?);
        s.push(f64_to_label(r[d + 1])?);
    }
    DatasetSplit::new(Matrix::from_vec(rows, d, features)?, t, s, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let split = DatasetSplit::new(
            Matrix::from_rows(&[[0.1, -2.5e-300], [1.0 / 3.0, 7.0]]).unwrap(),
            vec![Some(1), None],
            vec![Some(0), Some(1)],
            SplitTag::Test,
        )
        .unwrap();
        write_cache(&path, &split).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MBFD");
        assert_eq!(bytes.len(), 16 + 8 * 2 * 4);
        assert_eq!(read_cache(&path, SplitTag::Test).unwrap(), split);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"MBFD\x01\0\0\0\x01\0\0\0\x03\0\0\0").unwrap();
        assert!(read_cache(&path, SplitTag::Train).is_err());
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(read_cache(&path, SplitTag::Train).is_err());
    }
}
