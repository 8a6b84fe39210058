//! IDX format: big-endian `u32` magic, one `u32` per dimension, then raw `u8`s.

use std::path::Path;

use qagrel_core::Tensor;

use crate::{DataError, Dataset, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Validates the header and returns the dimension sizes and payload.
fn parse_header<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated {
            what: what.into(),
            expected: 4,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            what: what.into(),
            expected: magic,
            found,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(DataError::Truncated {
            what: what.into(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            what: what.into(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::Framing {
            what: what.into(),
            offset: expected,
            record_len: dims[1..].iter().product::<usize>().max(1),
        });
    }
    Ok((dims, &bytes[header..]))
}

/// Images as `[n, rows, cols, 1]`, each byte divided by 255.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Tensor> {
    let (dims, payload) = parse_header(bytes, IDX_IMAGES_MAGIC, what)?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![dims[0], dims[1], dims[2], 1], data)?)
}

pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>> {
    let (_, payload) = parse_header(bytes, IDX_LABELS_MAGIC, what)?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Loads an MNIST image/label file pair.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read(ip)?, &ip.display().to_string())?;
    let labels = parse_idx_labels(&read(lp)?, &lp.display().to_string())?;
    if images.shape()[0] != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        });
    }
    if let Some((i, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= MNIST_CLASSES) {
        return Err(DataError::LabelOutOfRange {
            what: lp.display().to_string(),
            offset: 8 + i,
            label,
            num_classes: MNIST_CLASSES,
        });
    }
    let ds = Dataset::new(images, labels, MNIST_CLASSES)?;
    log::info!(
        "loaded {} MNIST samples from {}, label histogram {:?}",
        ds.len(),
        ip.display(),
        ds.label_histogram()
    );
    Ok(ds)
}
