use qagrel_core::SeededRng;

use crate::{DataError, Dataset, Result};

/// Train/validation partition of a training pool, by index, plus the
/// optional official test set.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub pool: Dataset,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Option<Dataset>,
    pub split_seed: u64,
}

impl SplitDataset {
    pub fn validation_set(&self) -> Dataset {
        self.subset(&self.validation)
    }

    pub fn train_set(&self) -> Dataset {
        self.subset(&self.train)
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.pool.gather(indices);
        Dataset {
            images,
            labels,
            num_classes: self.pool.num_classes,
        }
    }

    pub fn with_test(mut self, test: Dataset) -> Self {
        self.test = Some(test);
        self
    }
}

/// Shuffles the pool indices with `seed`; the first `n_val` become validation.
pub fn split_validation(ds: Dataset, n_val: usize, seed: u64) -> Result<SplitDataset> {
    let n = ds.len();
    if n_val >= n {
        return Err(DataError::InvalidSplit { n_val, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let train = order.split_off(n_val);
    Ok(SplitDataset {
        pool: ds,
        train,
        validation: order,
        test: None,
        split_seed: seed,
    })
}
