use qagrel_core::Tensor;

use crate::{DataError, Result};

/// Images `[n, h, w, c]` in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = images.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(DataError::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some((i, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                what: "dataset".into(),
                offset: i,
                label,
                num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[h, w, c]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Copies the selected samples into a batch `[indices.len(), h, w, c]`.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let width = self.images.row_width();
        let mut data = Vec::with_capacity(indices.len() * width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        (Tensor::new(shape, data).expect("gathered rows"), labels)
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let (images, labels) = self.gather(&(0..n).collect::<Vec<_>>());
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}
