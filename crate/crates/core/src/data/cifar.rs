use std::path::PathBuf;

use super::Dataset;
use crate::error::{Error, Result};

const RECORD: usize = 3073;
const PIXELS: usize = 3072;

/// Loads CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per
/// record, red/green/blue planes row-major). Labels `0..=9` map to `1..=10`.
pub fn load_cifar10_binary(batch_paths: &[PathBuf]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::format(
                "record length",
                format!(
                    "{} has {} bytes, not a multiple of {RECORD}",
                    path.display(),
                    bytes.len()
                ),
            ));
        }
        pixels.reserve(bytes.len() / RECORD * PIXELS);
        for rec in bytes.chunks_exact(RECORD) {
            if rec[0] > 9 {
                return Err(Error::format(
                    "label",
                    format!("{}: label byte {} out of range", path.display(), rec[0]),
                ));
            }
            labels.push(u32::from(rec[0]) + 1);
            pixels.extend_from_slice(&rec[1..]);
        }
    }
    Dataset::from_bytes(pixels, PIXELS, labels, 10, "cifar10")
}

/// Canonical batch file names inside `cifar-10-batches-bin/`.
pub fn cifar10_batch_names(train: bool) -> Vec<String> {
    if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".to_string()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_record_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![3u8];
        bytes.extend((0..PIXELS).map(|i| (i % 256) as u8));
        bytes.push(9);
        bytes.extend(std::iter::repeat_n(255u8, PIXELS));
        let p = dir.path().join("b.bin");
        std::fs::write(&p, &bytes).unwrap();
        let ds = load_cifar10_binary(&[p]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3072);
        assert_eq!(ds.labels(), &[4, 10]);
        assert_eq!(ds.row(0)[255], 1.0);
        assert_eq!(ds.row(0)[256], 0.0);
        assert!(ds.row(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bad_lengths_and_empty_list() {
        assert!(matches!(load_cifar10_binary(&[]), Err(Error::InvalidInput(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        std::fs::write(&p, vec![0u8; RECORD + 5]).unwrap();
        let e = load_cifar10_binary(&[p]).unwrap_err().to_string();
        assert!(e.contains("record length"), "{e}");
    }
}
