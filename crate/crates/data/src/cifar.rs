//! CIFAR binary batches.
//!
//! CIFAR-10 records are `label, R[1024], G[1024], B[1024]` (3073 bytes);
//! CIFAR-100 records carry a coarse and a fine label byte first (3074 bytes).
//! The fine label is used.

use std::path::Path;

use qagrel_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::{DataError, Dataset, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const PIXELS: usize = 3 * PLANE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::C10 => 1,
            CifarVariant::C100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }
}

/// Appends the records in `bytes` to `pixels` (HWC, scaled) and `labels`.
pub fn parse_cifar(
    bytes: &[u8],
    variant: CifarVariant,
    what: &str,
    pixels: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<usize> {
    let record_len = variant.record_len();
    let complete = bytes.len() / record_len;
    if !bytes.len().is_multiple_of(record_len) {
        return Err(DataError::Framing {
            what: what.into(),
            offset: complete * record_len,
            record_len,
        });
    }
    let num_classes = variant.num_classes();
    pixels.reserve(complete * PIXELS);
    labels.reserve(complete);
    for (r, record) in bytes.chunks_exact(record_len).enumerate() {
        let label_at = variant.label_bytes() - 1;
        let label = usize::from(record[label_at]);
        if label >= num_classes {
            return Err(DataError::LabelOutOfRange {
                what: what.into(),
                offset: r * record_len + label_at,
                label,
                num_classes,
            });
        }
        labels.push(label);
        let planes = &record[variant.label_bytes()..];
        for i in 0..PLANE {
            for c in 0..3 {
                pixels.push(f64::from(planes[c * PLANE + i]) / 255.0);
            }
        }
    }
    Ok(complete)
}

/// Loads and concatenates CIFAR batch files of one variant.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        parse_cifar(&bytes, variant, &path.display().to_string(), &mut pixels, &mut labels)?;
    }
    let images = Tensor::new(vec![labels.len(), SIDE, SIDE, 3], pixels)?;
    let ds = Dataset::new(images, labels, variant.num_classes())?;
    log::info!(
        "loaded {} {:?} samples from {} file(s)",
        ds.len(),
        variant,
        paths.len()
    );
    Ok(ds)
}
