//! Dataset source strings.
//!
//! * `mnist:<dir>:train|test`
//! * `cifar10:<dir>:train|test`
//! * `idx:<images>,<labels>`
//! * anything else is a path to a `SEPLABDS` file

use std::path::{Path, PathBuf};

use seplab_core::data::{cifar10_batch_names, load_cifar10_binary, load_mnist_idx, read_dataset};
use seplab_core::Dataset;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Mnist { dir: PathBuf, train: bool },
    Cifar10 { dir: PathBuf, train: bool },
    Idx { images: PathBuf, labels: PathBuf },
    File(PathBuf),
}

fn split_part(s: &str) -> CliResult<bool> {
    match s {
        "train" => Ok(true),
        "test" => Ok(false),
        other => Err(CliError::usage(format!("expected `train` or `test`, found `{other}`"))),
    }
}

impl Source {
    pub fn parse(spec: &str) -> CliResult<Self> {
        if let Some(rest) = spec.strip_prefix("mnist:").or_else(|| spec.strip_prefix("cifar10:")) {
            let (dir, part) = rest
                .rsplit_once(':')
                .ok_or_else(|| CliError::usage(format!("`{spec}`: expected <kind>:<dir>:train|test")))?;
            let train = split_part(part)?;
            let dir = PathBuf::from(dir);
            return Ok(if spec.starts_with("mnist:") {
                Source::Mnist { dir, train }
            } else {
                Source::Cifar10 { dir, train }
            });
        }
        if let Some(rest) = spec.strip_prefix("idx:") {
            let (images, labels) = rest
                .split_once(',')
                .ok_or_else(|| CliError::usage(format!("`{spec}`: expected idx:<images>,<labels>")))?;
            return Ok(Source::Idx {
                images: images.into(),
                labels: labels.into(),
            });
        }
        Ok(Source::File(spec.into()))
    }

    /// Files read when loading, in a fixed order.
    pub fn files(&self) -> Vec<PathBuf> {
        match self {
            Source::Mnist { dir, train } => {
                let p = if *train { "train" } else { "t10k" };
                vec![
                    dir.join(format!("{p}-images-idx3-ubyte")),
                    dir.join(format!("{p}-labels-idx1-ubyte")),
                ]
            }
            Source::Cifar10 { dir, train } => cifar10_batch_names(*train).iter().map(|n| dir.join(n)).collect(),
            Source::Idx { images, labels } => vec![images.clone(), labels.clone()],
            Source::File(p) => vec![p.clone()],
        }
    }

    pub fn load(&self) -> CliResult<Dataset> {
        for f in self.files() {
            if !f.is_file() {
                return Err(CliError::data(format!("{}: no such file", f.display())));
            }
        }
        let files = self.files();
        let ds = match self {
            Source::Mnist { train, .. } => load_mnist_idx(&files[0], &files[1])
                .map(|d| d.with_name(if *train { "mnist-train" } else { "mnist-test" })),
            Source::Cifar10 { train, .. } => load_cifar10_binary(&files)
                .map(|d| d.with_name(if *train { "cifar10-train" } else { "cifar10-test" })),
            Source::Idx { .. } => load_mnist_idx(&files[0], &files[1]),
            Source::File(p) => read_dataset(p),
        };
        ds.map_err(|e| match e {
            seplab_core::Error::InvalidInput(m) => CliError::data(m),
            other => other.into(),
        })
    }
}

pub fn load(spec: &str, inputs: &mut Vec<PathBuf>) -> CliResult<Dataset> {
    let src = Source::parse(spec)?;
    let ds = src.load()?;
    inputs.extend(src.files());
    Ok(ds)
}

pub fn existing(path: &Path, inputs: &mut Vec<PathBuf>) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    inputs.push(path.to_path_buf());
    Ok(())
}
