//! Flat binary dataset file.
//!
//! Layout (little-endian): `b"SEPLABDS"`, version `u8`, `n: u64`,
//! `d: u64`, `C: u64`, `n` labels as `i32`, then `n*d` features as `f64`.
//! On read, a matrix whose every value is exactly `k/255` is restored to
//! byte storage so separation stays in exact integer units.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{byte_value, Dataset, Features};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SEPLABDS";
pub const DATASET_VERSION: u8 = 1;
const HEADER: usize = 8 + 1 + 8 * 3;

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&[DATASET_VERSION])?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.dim() as u64).to_le_bytes())?;
    w.write_all(&u64::from(ds.class_count()).to_le_bytes())?;
    for &l in ds.labels() {
        w.write_all(&(l as i32).to_le_bytes())?;
    }
    match ds.features() {
        Features::Real(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Features::Byte(b) => {
            for &p in b {
                w.write_all(&byte_value(p).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn le_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < HEADER || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::format("magic", format!("{} is not a SEPLABDS file", path.display())));
    }
    if bytes[8] != DATASET_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported dataset version {}", bytes[8]),
        ));
    }
    let n = le_u64(&bytes, 9) as usize;
    let d = le_u64(&bytes, 17) as usize;
    let c = le_u64(&bytes, 25);
    let c = u32::try_from(c).map_err(|_| Error::format("class count", format!("{c} too large")))?;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|f| f.checked_add(n * 4 + HEADER))
        .ok_or_else(|| Error::format("header", "n*d overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            "length",
            format!("expected {expected} bytes for n={n}, d={d}, found {}", bytes.len()),
        ));
    }
    let mut labels = Vec::with_capacity(n);
    for chunk in bytes[HEADER..HEADER + 4 * n].chunks_exact(4) {
        let l = i32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if l < 1 {
            return Err(Error::format("labels", format!("label {l} is not positive")));
        }
        labels.push(l as u32);
    }
    let feats: Vec<f64> = bytes[HEADER + 4 * n..]
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if let Some(pixels) = as_pixels(&feats) {
        Dataset::from_bytes(pixels, d, labels, c, name)
    } else {
        Dataset::from_real(feats, d, labels, c, name)
    }
}

fn as_pixels(feats: &[f64]) -> Option<Vec<u8>> {
    feats
        .iter()
        .map(|&v| {
            let k = (v * 255.0).round();
            if (0.0..=255.0).contains(&k) && byte_value(k as u8) == v {
                Some(k as u8)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_real_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ds");
        let real = Dataset::from_real(vec![0.1, 0.7, 0.3333, 1.0], 2, vec![2, 1], 3, "a").unwrap();
        write_dataset(&real, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert!(back.bytes().is_none());
        assert_eq!(back.row(1).as_ref(), real.row(1).as_ref());
        assert_eq!(back.labels(), real.labels());
        assert_eq!(back.class_count(), 3);

        let bytes = Dataset::from_bytes(vec![0, 17, 255, 4], 2, vec![1, 2], 2, "b").unwrap();
        write_dataset(&bytes, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.bytes().unwrap(), &[0, 17, 255, 4]);
    }

    #[test]
    fn header_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.ds");
        let ds = Dataset::from_real(vec![0.5], 1, vec![1], 2, "h").unwrap();
        write_dataset(&ds, &p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        let mut want = b"SEPLABDS".to_vec();
        want.push(1);
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1i32.to_le_bytes());
        want.extend_from_slice(&0.5f64.to_le_bytes());
        assert_eq!(raw, want);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ds");
        std::fs::write(&p, b"NOTADATASET_____________________________").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
        let ds = Dataset::from_real(vec![0.5, 0.25], 1, vec![1, 2], 2, "c").unwrap();
        write_dataset(&ds, &p).unwrap();
        let mut raw = std::fs::read(&p).unwrap();
        raw.pop();
        std::fs::write(&p, &raw).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
    }
}
