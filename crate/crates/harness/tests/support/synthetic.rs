//! Small learnable stand-in for MNIST: each class lights one image row.

use dpsgd_core::data::{Dataset, N_CLASSES};
use dpsgd_core::Tensor;
use dpsgd_harness::train::TrainingData;

pub fn dataset(n: usize) -> Dataset {
    let mut data = Vec::with_capacity(n * 784);
    for i in 0..n {
        let class = i % N_CLASSES;
        for p in 0..784 {
            let jitter = ((i * 7919 + p * 104_729) % 97) as f64 / 970.0;
            data.push(if p / 28 == 2 * class + 4 {
                2.0 - jitter
            } else {
                -0.4 + jitter
            });
        }
    }
    let labels = (0..n).map(|i| i % N_CLASSES).collect();
    Dataset::new(Tensor::new(vec![n, 1, 28, 28], data).unwrap(), labels).unwrap()
}

pub fn training_data(n: usize) -> TrainingData {
    let ds = dataset(n);
    TrainingData {
        train: ds.clone(),
        val: ds,
    }
}
