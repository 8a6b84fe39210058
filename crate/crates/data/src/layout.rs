//! On-disk layout under the data root:
//!
//! ```text
//! mnist/train-images-idx3-ubyte   (or train-images.idx3-ubyte)
//! mnist/train-labels-idx1-ubyte
//! mnist/t10k-images-idx3-ubyte
//! mnist/t10k-labels-idx1-ubyte
//! cifar-10-batches-bin/data_batch_{1..5}.bin, test_batch.bin
//! cifar-100-binary/train.bin, test.bin
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{load_cifar_binary, load_mnist_idx, CifarVariant, DataError, Dataset, Result};

pub const DATA_DIR_ENV: &str = "QAGREL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetId {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetId::Mnist | DatasetId::Cifar10 => 10,
            DatasetId::Cifar100 => 100,
        }
    }

    /// `[h, w, c]`.
    pub fn image_shape(self) -> [usize; 3] {
        match self {
            DatasetId::Mnist => [28, 28, 1],
            _ => [32, 32, 3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar100 => "cifar100",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "cifar10" => Ok(DatasetId::Cifar10),
            "cifar100" => Ok(DatasetId::Cifar100),
            other => Err(format!("unknown dataset {other:?} (expected mnist, cifar10 or cifar100)")),
        }
    }
}

/// `$QAGREL_DATA_DIR`, or `./data` when unset.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn mnist_file(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    let candidates = [
        format!("{stem}-{kind}"),
        format!("{stem}.{kind}"),
    ];
    candidates
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| DataError::NotFound(format!("{} (looked for {})", dir.display(), candidates.join(" or "))))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(DataError::NotFound(path.display().to_string()))
    }
}

/// Loads the official `(train, test)` pair for `id` from `root`.
pub fn load_dataset(root: &Path, id: DatasetId) -> Result<(Dataset, Dataset)> {
    match id {
        DatasetId::Mnist => {
            let dir = root.join("mnist");
            let train = load_mnist_idx(
                mnist_file(&dir, "train-images", "idx3-ubyte")?,
                mnist_file(&dir, "train-labels", "idx1-ubyte")?,
            )?;
            let test = load_mnist_idx(
                mnist_file(&dir, "t10k-images", "idx3-ubyte")?,
                mnist_file(&dir, "t10k-labels", "idx1-ubyte")?,
            )?;
            Ok((train, test))
        }
        DatasetId::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let train: Vec<PathBuf> = (1..=5)
                .map(|i| require(dir.join(format!("data_batch_{i}.bin"))))
                .collect::<Result<_>>()?;
            let test = [require(dir.join("test_batch.bin"))?];
            Ok((
                load_cifar_binary(&train, CifarVariant::C10)?,
                load_cifar_binary(&test, CifarVariant::C10)?,
            ))
        }
        DatasetId::Cifar100 => {
            let dir = root.join("cifar-100-binary");
            let train = [require(dir.join("train.bin"))?];
            let test = [require(dir.join("test.bin"))?];
            Ok((
                load_cifar_binary(&train, CifarVariant::C100)?,
                load_cifar_binary(&test, CifarVariant::C100)?,
            ))
        }
    }
}
