//! Dataset ingestion: MNIST (IDX) and CIFAR-10/100 (binary batches).
//!
//! Pixels are scaled to `[0, 1]` by dividing by 255; no other preprocessing.
//! Images are stored `[n, h, w, c]`.

mod cifar;
mod dataset;
mod error;
pub mod fixtures;
mod idx;
mod layout;
mod split;

pub use cifar::{load_cifar_binary, parse_cifar, CifarVariant};
pub use dataset::Dataset;
pub use error::{DataError, Result};
pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use layout::{data_root, load_dataset, DatasetId, DATA_DIR_ENV};
pub use split::{split_validation, SplitDataset};
