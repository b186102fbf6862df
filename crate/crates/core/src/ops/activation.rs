use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn relu_forward_raw(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.max(0.0);
    }
}

/// Gradient passes where the forward output was positive.
pub(crate) fn relu_backward_raw(y: &[f64], grad_out: &[f64], grad_x: &mut [f64]) {
    for ((d, &g), &v) in grad_x.iter_mut().zip(grad_out).zip(y) {
        if v > 0.0 {
            *d += g;
        }
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1/(1−p)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub(crate) fn check_dropout_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {p} outside [0, 1)")))
    }
}

#[derive(Debug, Clone)]
pub struct ReluContext {
    output: Tensor,
}

pub fn relu_forward(x: &Tensor) -> (Tensor, ReluContext) {
    let mut out = Tensor::zeros(x.shape());
    relu_forward_raw(x.data(), out.data_mut());
    (out.clone(), ReluContext { output: out })
}

pub fn relu_backward(ctx: ReluContext, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != ctx.output.shape() {
        return Err(Error::Dimension("relu grad_out shape mismatch".into()));
    }
    let mut gx = Tensor::zeros(grad_out.shape());
    relu_backward_raw(ctx.output.data(), grad_out.data(), gx.data_mut());
    Ok(gx)
}

#[derive(Debug, Clone)]
pub struct DropoutContext {
    mask: Option<Vec<f64>>,
}

/// Inverted dropout. `rng = None` is evaluation mode (identity, no mask drawn).
pub fn dropout_forward(x: &Tensor, p: f64, rng: Option<&mut dyn rand::RngCore>) -> Result<(Tensor, DropoutContext)> {
    check_dropout_rate(p)?;
    let Some(rng) = rng else {
        return Ok((x.clone(), DropoutContext { mask: None }));
    };
    let mask = dropout_mask(x.len(), p, rng);
    let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((
        Tensor::new(x.shape().to_vec(), data)?,
        DropoutContext { mask: Some(mask) },
    ))
}

pub fn dropout_backward(ctx: DropoutContext, grad_out: &Tensor) -> Result<Tensor> {
    match ctx.mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            if mask.len() != grad_out.len() {
                return Err(Error::Dimension("dropout grad_out shape mismatch".into()));
            }
            let data = grad_out.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
    }
}
