use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out = W x + b` with `W: [n_out, n_in]`.
pub(crate) fn dense_forward_raw(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (y, bias)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dW += g xᵀ`, `db += g` and, when given, `dx += Wᵀ g`.
pub(crate) fn dense_backward_raw(
    w: &[f64],
    x: &[f64],
    grad_out: &[f64],
    grad_x: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let n_in = x.len();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in grad_w[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(gx) = grad_x {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &wv) in gx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += g * wv;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseContext {
    input: Tensor,
    weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(Tensor, DenseContext)> {
    let &[n_out, n_in] = weights.shape() else {
        return Err(Error::Dimension(format!(
            "weights must be 2-D, got {:?}",
            weights.shape()
        )));
    };
    if x.shape() != [n_in] || bias.shape() != [n_out] {
        return Err(Error::Dimension(format!(
            "dense {n_in}->{n_out} got input {:?}, bias {:?}",
            x.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![0.0; n_out];
    dense_forward_raw(weights.data(), bias.data(), x.data(), &mut out);
    Ok((
        Tensor::new(vec![n_out], out)?,
        DenseContext {
            input: x.clone(),
            weights: weights.clone(),
        },
    ))
}

pub fn dense_backward(ctx: DenseContext, grad_out: &Tensor) -> Result<DenseGrads> {
    let (n_out, n_in) = (ctx.weights.shape()[0], ctx.weights.shape()[1]);
    if grad_out.shape() != [n_out] {
        return Err(Error::Dimension(format!(
            "grad_out shape {:?}, expected [{n_out}]",
            grad_out.shape()
        )));
    }
    let mut gx = vec![0.0; n_in];
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    dense_backward_raw(
        ctx.weights.data(),
        ctx.input.data(),
        grad_out.data(),
        Some(&mut gx),
        &mut gw,
        &mut gb,
    );
    Ok(DenseGrads {
        input: Tensor::new(vec![n_in], gx)?,
        weights: Tensor::new(vec![n_out, n_in], gw)?,
        bias: Tensor::new(vec![n_out], gb)?,
    })
}
