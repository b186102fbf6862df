use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2x2 max pooling with stride 2 over `[c, h, w]`; odd trailing rows/columns
/// are dropped. Writes the winning input offset of each output into `argmax`.
pub(crate) fn maxpool2x2_forward_raw(shape: [usize; 3], x: &[f64], out: &mut [f64], argmax: &mut [usize]) {
    let [c, h, w] = shape;
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + 2 * oi * w + 2 * oj;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + oi) * ow + oj;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub(crate) fn maxpool2x2_backward_raw(argmax: &[usize], grad_out: &[f64], grad_x: &mut [f64]) {
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        grad_x[idx] += g;
    }
}

#[derive(Debug, Clone)]
pub struct MaxPoolContext {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, MaxPoolContext)> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Dimension(format!(
            "maxpool expects [c,h,w], got {:?}",
            x.shape()
        )));
    };
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("input {h}x{w} too small for 2x2 pooling")));
    }
    let n = c * (h / 2) * (w / 2);
    let mut out = vec![0.0; n];
    let mut argmax = vec![0; n];
    maxpool2x2_forward_raw([c, h, w], x.data(), &mut out, &mut argmax);
    Ok((
        Tensor::new(vec![c, h / 2, w / 2], out)?,
        MaxPoolContext {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(ctx: MaxPoolContext, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != ctx.argmax.len() {
        return Err(Error::Dimension("grad_out does not match pooled output".into()));
    }
    let mut gx = Tensor::zeros(&ctx.input_shape);
    maxpool2x2_backward_raw(&ctx.argmax, grad_out.data(), gx.data_mut());
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maxima() {
        let x = Tensor::new(
            vec![1, 4, 4],
            vec![
                1.0, 2.0, 0.0, -1.0, //
                3.0, 0.5, -2.0, -3.0, //
                9.0, 8.0, 7.0, 6.0, //
                1.0, 1.0, 6.5, 1.0,
            ],
        )
        .unwrap();
        let (y, ctx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0, 9.0, 7.0]);
        let g = maxpool2x2_backward(ctx, &Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let mut expect = vec![0.0; 16];
        expect[4] = 1.0;
        expect[2] = 2.0;
        expect[8] = 3.0;
        expect[10] = 4.0;
        assert_eq!(g.data(), expect.as_slice());
    }

    #[test]
    fn odd_extent_drops_remainder() {
        let x = Tensor::filled(&[2, 5, 3], 1.0);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
    }
}
