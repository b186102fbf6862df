use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

/// Resolved extents of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 3], kernel: [usize; 4], cfg: Conv2dConfig) -> Result<Self> {
        let [c_in, h, w] = input;
        let [c_out, kc, kh, kw] = kernel;
        if kc != c_in {
            return Err(Error::Dimension(format!(
                "kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if cfg.stride == 0 || kh == 0 || kw == 0 || c_out == 0 {
            return Err(Error::Config("zero stride or empty kernel".into()));
        }
        let (ph, pw) = (h + 2 * cfg.padding, w + 2 * cfg.padding);
        if kh > ph || kw > pw {
            return Err(Error::Config(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        if (ph - kh) % cfg.stride != 0 || (pw - kw) % cfg.stride != 0 {
            return Err(Error::Config(format!(
                "stride {} does not tile padded input {ph}x{pw} with kernel {kh}x{kw}",
                cfg.stride
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride: cfg.stride,
            padding: cfg.padding,
            out_h: (ph - kh) / cfg.stride + 1,
            out_w: (pw - kw) / cfg.stride + 1,
        })
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.out_h * self.out_w
    }

    /// Input row touched by output row `oi` at kernel row `ki`, if inside the image.
    #[inline]
    fn input_row(&self, oi: usize, ki: usize) -> Option<usize> {
        (oi * self.stride + ki)
            .checked_sub(self.padding)
            .filter(|&r| r < self.h)
    }

    /// Output columns `[lo, hi)` whose tap at kernel column `kj` lands inside the image.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.padding > kj {
            (self.padding - kj).div_ceil(s)
        } else {
            0
        };
        let hi = if self.w + self.padding > kj {
            ((self.w + self.padding - kj - 1) / s + 1).min(self.out_w)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward_raw(g: &ConvGeometry, x: &[f64], k: &[f64], bias: &[f64], out: &mut [f64]) {
    let plane = g.out_h * g.out_w;
    let (in_plane, ksize) = (g.h * g.w, g.kh * g.kw);
    for co in 0..g.c_out {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        out_c.fill(bias[co]);
        for ci in 0..g.c_in {
            let x_c = &x[ci * in_plane..(ci + 1) * in_plane];
            let k_c = &k[(co * g.c_in + ci) * ksize..][..ksize];
            for ki in 0..g.kh {
                for oi in 0..g.out_h {
                    let Some(ii) = g.input_row(oi, ki) else { continue };
                    let x_row = &x_c[ii * g.w..(ii + 1) * g.w];
                    let out_row = &mut out_c[oi * g.out_w..(oi + 1) * g.out_w];
                    for kj in 0..g.kw {
                        let wgt = k_c[ki * g.kw + kj];
                        let (lo, hi) = g.col_range(kj);
                        if g.stride == 1 {
                            let start = lo + kj - g.padding;
                            let src = &x_row[start..start + (hi - lo)];
                            for (o, &xv) in out_row[lo..hi].iter_mut().zip(src) {
                                *o += wgt * xv;
                            }
                        } else {
                            for oj in lo..hi {
                                out_row[oj] += wgt * x_row[oj * g.stride + kj - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates gradients into `grad_k`, `grad_b` and, when given, `grad_x`.
pub(crate) fn conv2d_backward_raw(
    g: &ConvGeometry,
    x: &[f64],
    k: &[f64],
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    grad_k: &mut [f64],
    grad_b: &mut [f64],
) {
    let plane = g.out_h * g.out_w;
    let (in_plane, ksize) = (g.h * g.w, g.kh * g.kw);
    for co in 0..g.c_out {
        let g_c = &grad_out[co * plane..(co + 1) * plane];
        grad_b[co] += g_c.iter().sum::<f64>();
        for ci in 0..g.c_in {
            let x_c = &x[ci * in_plane..(ci + 1) * in_plane];
            let kbase = (co * g.c_in + ci) * ksize;
            for ki in 0..g.kh {
                for oi in 0..g.out_h {
                    let Some(ii) = g.input_row(oi, ki) else { continue };
                    let x_row = &x_c[ii * g.w..(ii + 1) * g.w];
                    let g_row = &g_c[oi * g.out_w..(oi + 1) * g.out_w];
                    for kj in 0..g.kw {
                        let (lo, hi) = g.col_range(kj);
                        let kidx = kbase + ki * g.kw + kj;
                        if g.stride == 1 {
                            let start = lo + kj - g.padding;
                            let src = &x_row[start..start + (hi - lo)];
                            grad_k[kidx] += g_row[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gx) = grad_x.as_deref_mut() {
                                let wgt = k[kidx];
                                let dst = &mut gx[ci * in_plane + ii * g.w + start..][..hi - lo];
                                for (d, &gv) in dst.iter_mut().zip(&g_row[lo..hi]) {
                                    *d += wgt * gv;
                                }
                            }
                        } else {
                            for (oj, &gv) in g_row.iter().enumerate().take(hi).skip(lo) {
                                let col = oj * g.stride + kj - g.padding;
                                grad_k[kidx] += gv * x_row[col];
                                if let Some(gx) = grad_x.as_deref_mut() {
                                    gx[ci * in_plane + ii * g.w + col] += k[kidx] * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Saved state of a [`conv2d_forward`] call.
#[derive(Debug, Clone)]
pub struct Conv2dContext {
    geom: ConvGeometry,
    input: Tensor,
    kernels: Tensor,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Cross-correlation of `x: [c_in, h, w]` with `kernels: [c_out, c_in, kh, kw]` plus bias.
pub fn conv2d_forward(
    x: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    cfg: Conv2dConfig,
) -> Result<(Tensor, Conv2dContext)> {
    let (&[c, h, w], &[co, kc, kh, kw]) = (x.shape(), kernels.shape()) else {
        return Err(Error::Dimension(format!(
            "conv2d expects [c,h,w] input and [co,ci,kh,kw] kernels, got {:?} and {:?}",
            x.shape(),
            kernels.shape()
        )));
    };
    let geom = ConvGeometry::new([c, h, w], [co, kc, kh, kw], cfg)?;
    if bias.shape() != [co] {
        return Err(Error::Dimension(format!(
            "bias shape {:?}, expected [{co}]",
            bias.shape()
        )));
    }
    let mut out = vec![0.0; geom.output_len()];
    conv2d_forward_raw(&geom, x.data(), kernels.data(), bias.data(), &mut out);
    let out = Tensor::new(vec![co, geom.out_h, geom.out_w], out)?;
    Ok((
        out,
        Conv2dContext {
            geom,
            input: x.clone(),
            kernels: kernels.clone(),
        },
    ))
}

pub fn conv2d_backward(ctx: Conv2dContext, grad_out: &Tensor) -> Result<Conv2dGrads> {
    let g = ctx.geom;
    if grad_out.shape() != [g.c_out, g.out_h, g.out_w] {
        return Err(Error::Dimension(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.c_out, g.out_h, g.out_w]
        )));
    }
    let mut gx = vec![0.0; g.input_len()];
    let mut gk = vec![0.0; g.kernel_len()];
    let mut gb = vec![0.0; g.c_out];
    conv2d_backward_raw(
        &g,
        ctx.input.data(),
        ctx.kernels.data(),
        grad_out.data(),
        Some(&mut gx),
        &mut gk,
        &mut gb,
    );
    Ok(Conv2dGrads {
        input: Tensor::new(vec![g.c_in, g.h, g.w], gx)?,
        kernels: Tensor::new(ctx.kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}
