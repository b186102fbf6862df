use rayon::prelude::*;

use super::{Mode, Network};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{l2_norm, Tensor};

/// One gradient row per sample, `rows × cols` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PerSampleGrads {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged gradient rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub(crate) fn par_rows_mut(&mut self) -> impl IndexedParallelIterator<Item = &mut [f64]> {
        self.data.par_chunks_exact_mut(self.cols.max(1))
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows_iter().map(l2_norm).collect()
    }

    /// Column sums accumulated in row order.
    pub fn sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for row in self.rows_iter() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.rows.max(1) as f64;
        self.sum().into_iter().map(|v| v / n).collect()
    }
}

/// Samples per accumulation chunk in [`Network::batch_gradient`]; fixed so
/// the reduction order does not depend on the worker count.
const BATCH_CHUNK: usize = 32;

impl Network {
    fn check_labels(&self, batch: &Tensor, labels: &[usize]) -> Result<usize> {
        let b = self.check_batch(batch)?;
        if b != labels.len() {
            return Err(Error::Input(format!("{b} samples but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Input(format!("label {bad} out of range")));
        }
        Ok(b)
    }

    /// Gradient of each sample's own loss, plus the mean loss.
    ///
    /// Row `i` uses the dropout mask keyed by position `i`, exactly as a
    /// single-sample backward would. Rows are computed independently and the
    /// loss mean is reduced in index order, so the output is bit-identical for
    /// any worker count.
    pub fn per_sample_gradients(&self, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<(PerSampleGrads, f64)> {
        let b = self.check_labels(batch, labels)?;
        let mut grads = PerSampleGrads::zeros(b, self.param_count());
        let mut losses = vec![0.0; b];
        grads
            .par_rows_mut()
            .zip(losses.par_iter_mut())
            .enumerate()
            .for_each(|(i, (row, loss))| {
                let trace = self.trace_one(batch.outer(i), mode, i);
                let mut grad_logits = vec![0.0; self.n_classes];
                *loss = ops::softmax_cross_entropy_raw(trace.logits(), labels[i], &mut grad_logits);
                trace.backward(self, &grad_logits, row);
            });
        let mean = losses.iter().sum::<f64>() / b.max(1) as f64;
        Ok((grads, mean))
    }

    /// Gradient of the mean batch loss, accumulated directly into shared
    /// buffers without materialising per-sample rows.
    pub fn batch_gradient(&self, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<(Vec<f64>, f64)> {
        let b = self.check_labels(batch, labels)?;
        let p = self.param_count();
        let partials: Vec<(Vec<f64>, f64)> = (0..b)
            .collect::<Vec<_>>()
            .par_chunks(BATCH_CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; p];
                let mut loss = 0.0;
                for &i in chunk {
                    let trace = self.trace_one(batch.outer(i), mode, i);
                    let mut grad_logits = vec![0.0; self.n_classes];
                    loss += ops::softmax_cross_entropy_raw(trace.logits(), labels[i], &mut grad_logits);
                    trace.backward(self, &grad_logits, &mut acc);
                }
                (acc, loss)
            })
            .collect();
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        for (acc, l) in partials {
            for (g, a) in grad.iter_mut().zip(acc) {
                *g += a;
            }
            loss += l;
        }
        let n = b.max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((grad, loss / n))
    }

    /// Mean loss of a batch (no gradients); used by finite-difference checks.
    pub fn batch_loss(&self, batch: &Tensor, labels: &[usize], mode: Mode) -> Result<f64> {
        let b = self.check_labels(batch, labels)?;
        let total: f64 = (0..b)
            .map(|i| {
                let trace = self.trace_one(batch.outer(i), mode, i);
                let mut scratch = vec![0.0; self.n_classes];
                ops::softmax_cross_entropy_raw(trace.logits(), labels[i], &mut scratch)
            })
            .sum();
        Ok(total / b.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ArchConfig, LayerSpec};
    use crate::ops::fd;
    use crate::rng::{self, DropoutStream, Stream};
    use rand::Rng;

    fn random_batch(b: usize, shape: [usize; 3], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, Stream::Shuffle);
        let n = b * shape.iter().product::<usize>();
        Tensor::new(
            vec![b, shape[0], shape[1], shape[2]],
            (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn tiny_net(seed: u64, dropout: f64) -> Network {
        let arch = [
            LayerSpec::conv(2, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Dropout { p: dropout },
            LayerSpec::Flatten,
            LayerSpec::dense(5),
            LayerSpec::Relu,
            LayerSpec::dense(3),
        ];
        Network::build(&arch, [1, 8, 8], 3, seed).unwrap()
    }

    #[test]
    fn single_sample_row_is_plain_gradient() {
        let net = tiny_net(1, 0.0);
        let x = random_batch(1, [1, 8, 8], 1);
        let (rows, loss) = net.per_sample_gradients(&x, &[2], Mode::Eval).unwrap();
        let (full, full_loss) = net.batch_gradient(&x, &[2], Mode::Eval).unwrap();
        assert_eq!(rows.rows(), 1);
        assert_eq!(rows.row(0), full.as_slice());
        assert_eq!(loss, full_loss);
    }

    #[test]
    fn rows_average_to_batch_gradient() {
        let net = Network::mnist(
            &ArchConfig {
                dropout: 0.0,
                ..ArchConfig::default()
            },
            5,
        )
        .unwrap();
        let x = random_batch(40, [1, 28, 28], 5);
        let labels: Vec<usize> = (0..40).map(|i| (i * 7) % 10).collect();
        let (rows, _) = net.per_sample_gradients(&x, &labels, Mode::Eval).unwrap();
        let (full, _) = net.batch_gradient(&x, &labels, Mode::Eval).unwrap();
        assert!(fd::rel_err(&rows.mean(), &full) <= 1e-10);
    }

    #[test]
    fn rows_match_finite_differences() {
        let net = tiny_net(7, 0.5);
        let x = random_batch(3, [1, 8, 8], 7);
        let labels = [0, 2, 1];
        let mode = Mode::Train {
            dropout: DropoutStream::new(3),
            step: 11,
        };
        let (rows, _) = net.per_sample_gradients(&x, &labels, mode).unwrap();
        #[allow(clippy::needless_range_loop)]
        for i in 0..3 {
            let sample = Tensor::new(vec![1, 1, 8, 8], x.outer(i).to_vec()).unwrap();
            let mut probe = net.clone();
            // Single-sample loss under the same mask key (position i).
            let numeric = fd::gradient(net.params(), 1e-5, |p| {
                probe.set_params(p.to_vec()).unwrap();
                let trace = probe.trace_one(sample.outer(0), mode, i);
                let mut scratch = vec![0.0; 3];
                ops::softmax_cross_entropy_raw(trace.logits(), labels[i], &mut scratch)
            });
            let err = fd::rel_err(rows.row(i), &numeric);
            assert!(err <= 1e-6, "row {i}: {err}");
        }
    }

    #[test]
    fn label_mismatch() {
        let net = tiny_net(0, 0.0);
        let x = random_batch(2, [1, 8, 8], 0);
        assert!(matches!(
            net.per_sample_gradients(&x, &[0], Mode::Eval),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            net.per_sample_gradients(&x, &[0, 3], Mode::Eval),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn bit_stable_across_pool_sizes() {
        let net = Network::mnist(&ArchConfig::default(), 9).unwrap();
        let x = random_batch(24, [1, 28, 28], 9);
        let labels: Vec<usize> = (0..24).map(|i| i % 10).collect();
        let mode = Mode::Train {
            dropout: DropoutStream::new(1),
            step: 2,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let rows = net.per_sample_gradients(&x, &labels, mode).unwrap();
                    let batch = net.batch_gradient(&x, &labels, mode).unwrap();
                    (rows, batch)
                })
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.0 .0, b.0 .0);
        assert_eq!(a.0 .1.to_bits(), b.0 .1.to_bits());
        assert_eq!(a.1 .0, b.1 .0);
    }
}
