//! Differentiable primitives with explicit forward and backward passes.
//!
//! Each forward returns the output together with a context holding whatever
//! the backward pass needs. Backward functions take the context by value, so
//! a context cannot be replayed.
//!
//! Shapes are per sample (`[channels, height, width]` or `[features]`); the
//! network batches by iterating samples. The `*_raw` kernels operate on
//! slices of the flat parameter vector and accumulate into caller-owned
//! gradient buffers.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{dropout_backward, dropout_forward, relu_backward, relu_forward, DropoutContext, ReluContext};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dConfig, Conv2dContext, Conv2dGrads, ConvGeometry};
pub use dense::{dense_backward, dense_forward, DenseContext, DenseGrads};
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, MaxPoolContext};

pub(crate) use activation::{check_dropout_rate, dropout_mask, relu_backward_raw, relu_forward_raw};
pub(crate) use conv::{conv2d_backward_raw, conv2d_forward_raw};
pub(crate) use dense::{dense_backward_raw, dense_forward_raw};
pub(crate) use loss::softmax_cross_entropy_raw;
pub(crate) use pool::{maxpool2x2_backward_raw, maxpool2x2_forward_raw};

#[cfg(test)]
pub(crate) mod fd {
    //! Central finite differences for gradient checks.

    /// Numerical gradient of `f` at `x` with step `h`.
    pub fn gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = probe[i];
                probe[i] = orig + h;
                let plus = f(&probe);
                probe[i] = orig - h;
                let minus = f(&probe);
                probe[i] = orig;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    /// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; absolute when both vanish.
    pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = crate::tensor::l2_norm(a).max(crate::tensor::l2_norm(b));
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }
}
