//! Byte-exact synthetic files in the on-disk formats, for tests and smoke
//! runs where the real datasets are not at hand.

use std::io;
use std::path::Path;

use qagrel_core::SeededRng;

use crate::{CifarVariant, DatasetId, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

pub fn idx_images_bytes(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        b.extend_from_slice(&(d as u32).to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

pub fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// One record: label byte(s) then R, G, B planes of 1024 bytes each.
pub fn cifar_record(variant: CifarVariant, label: u8, pixels: &[u8; 3072]) -> Vec<u8> {
    let mut r = match variant {
        CifarVariant::C10 => vec![label],
        CifarVariant::C100 => vec![label / 5, label],
    };
    r.extend_from_slice(pixels);
    r
}

fn random_records(variant: CifarVariant, n: usize, rng: &mut SeededRng) -> Vec<u8> {
    let classes = variant.num_classes();
    let mut out = Vec::with_capacity(n * variant.record_len());
    let mut px = [0u8; 3072];
    for i in 0..n {
        for p in px.iter_mut() {
            *p = rng.below(256) as u8;
        }
        out.extend(cifar_record(variant, (i % classes) as u8, &px));
    }
    out
}

/// Writes a random MNIST-layout directory (`root/mnist`) with `n_train` and
/// `n_test` 28x28 images and cyclic labels.
pub fn write_synthetic_mnist(root: &Path, n_train: usize, n_test: usize, seed: u64) -> io::Result<()> {
    let dir = root.join("mnist");
    std::fs::create_dir_all(&dir)?;
    let mut rng = SeededRng::new(seed);
    for (stem, n) in [("train", n_train), ("t10k", n_test)] {
        let pixels: Vec<u8> = (0..n * 784).map(|_| rng.below(256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), idx_images_bytes(n, 28, 28, &pixels))?;
        std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), idx_labels_bytes(&labels))?;
    }
    Ok(())
}

/// Writes random CIFAR batch files in the layout `load_dataset` expects.
/// CIFAR-10 training records are split evenly over the five batch files.
pub fn write_synthetic_cifar(root: &Path, id: DatasetId, n_train: usize, n_test: usize, seed: u64) -> io::Result<()> {
    let mut rng = SeededRng::new(seed);
    match id {
        DatasetId::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            std::fs::create_dir_all(&dir)?;
            assert!(n_train.is_multiple_of(5), "CIFAR-10 training size must split over five batches");
            for b in 1..=5 {
                let bytes = random_records(CifarVariant::C10, n_train / 5, &mut rng);
                std::fs::write(dir.join(format!("data_batch_{b}.bin")), bytes)?;
            }
            std::fs::write(dir.join("test_batch.bin"), random_records(CifarVariant::C10, n_test, &mut rng))
        }
        DatasetId::Cifar100 => {
            let dir = root.join("cifar-100-binary");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("train.bin"), random_records(CifarVariant::C100, n_train, &mut rng))?;
            std::fs::write(dir.join("test.bin"), random_records(CifarVariant::C100, n_test, &mut rng))
        }
        DatasetId::Mnist => write_synthetic_mnist(root, n_train, n_test, seed),
    }
}
