use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], offset: usize, field: &str, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                field,
                format!("{} is truncated before the {field} header", path.display()),
            )
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::format(
            "magic",
            format!("{} is gzip-compressed; decompress it first", path.display()),
        ));
    }
    Ok(bytes)
}

/// Loads an MNIST image/label IDX pair. Pixels become `byte / 255`, digits
/// `0..=9` become labels `1..=10`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, "image magic", images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            "image magic",
            format!("expected {IMAGES_MAGIC}, found {magic}"),
        ));
    }
    let count = be_u32(&img, 4, "image count", images_path)? as usize;
    let rows = be_u32(&img, 8, "image rows", images_path)? as usize;
    let cols = be_u32(&img, 12, "image columns", images_path)? as usize;
    let dim = rows * cols;
    let body = &img[16..];
    if body.len() != count * dim {
        return Err(Error::format(
            "image data",
            format!(
                "expected {count} x {rows} x {cols} = {} pixel bytes, found {}",
                count * dim,
                body.len()
            ),
        ));
    }

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, "label magic", labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            "label magic",
            format!("expected {LABELS_MAGIC}, found {magic}"),
        ));
    }
    let label_count = be_u32(&lab, 4, "label count", labels_path)? as usize;
    if label_count != count {
        return Err(Error::format(
            "label count",
            format!("{label_count} labels for {count} images"),
        ));
    }
    let digits = &lab[8..];
    if digits.len() != label_count {
        return Err(Error::format(
            "label data",
            format!("expected {label_count} label bytes, found {}", digits.len()),
        ));
    }
    if let Some(bad) = digits.iter().find(|&&d| d > 9) {
        return Err(Error::format("label data", format!("digit {bad} out of range")));
    }
    let labels = digits.iter().map(|&d| u32::from(d) + 1).collect();
    Dataset::from_bytes(body.to_vec(), dim, labels, 10, "mnist")
}

/// Loads `train` or `t10k` files from a directory holding the canonical
/// uncompressed file names.
pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let ds = load_mnist_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    Ok(ds.with_name(if train { "mnist-train" } else { "mnist-test" }))
}
