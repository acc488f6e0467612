//! 2-D convolution kernels (NCHW, square stride/padding) and lowering of a
//! convolution to an equivalent dense affine map.

use serde::{Deserialize, Serialize};

use crate::par;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        in_shape: &[usize],
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[in_c, in_h, in_w] = in_shape else {
            return Err(Error::ConvGeometry(format!(
                "expected [channels, height, width] input, got {in_shape:?}"
            )));
        };
        if stride == 0 {
            return Err(Error::ConvGeometry("stride must be positive".into()));
        }
        if kh == 0 || kw == 0 || out_c == 0 || in_c == 0 {
            return Err(Error::ConvGeometry("zero-sized kernel or channel count".into()));
        }
        let (ph, pw) = (in_h + 2 * padding, in_w + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::ConvGeometry(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        if padding >= kh || padding >= kw {
            return Err(Error::ConvGeometry(format!(
                "padding {padding} leaves output positions outside the input for kernel {kh}x{kw}"
            )));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Number of weights feeding one output channel.
    pub fn kernel_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.out_c, self.out_h, self.out_w]
    }

    /// Visits every (output offset, input offset, kernel offset) tap that
    /// lands inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.padding as isize;
        for oh in 0..self.out_h {
            for ow in 0..self.out_w {
                let out_pos = oh * self.out_w + ow;
                for ic in 0..self.in_c {
                    for r in 0..self.kh {
                        let ih = (oh * self.stride + r) as isize - p;
                        if ih < 0 || ih >= self.in_h as isize {
                            continue;
                        }
                        for s in 0..self.kw {
                            let iw = (ow * self.stride + s) as isize - p;
                            if iw < 0 || iw >= self.in_w as isize {
                                continue;
                            }
                            let in_off = (ic * self.in_h + ih as usize) * self.in_w + iw as usize;
                            let k_off = (ic * self.kh + r) * self.kw + s;
                            f(out_pos, in_off, k_off);
                        }
                    }
                }
            }
        }
    }

    fn taps(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        self.for_each_tap(|o, i, k| v.push((o, i, k)));
        v
    }
}

/// Batched convolution. `input` is `[batch, in_len]`, `kernels` is
/// `[out_c, kernel_len]`; returns `[batch, out_len]`.
pub fn conv_forward(
    input: &[f64],
    batch: usize,
    kernels: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeometry,
) -> Vec<f64> {
    let taps = g.taps();
    let (in_len, out_len, klen, plane) = (g.in_len(), g.out_len(), g.kernel_len(), g.out_h * g.out_w);
    let mut out = vec![0.0; batch * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |b, orow| {
        let x = &input[b * in_len..(b + 1) * in_len];
        for oc in 0..g.out_c {
            let k = &kernels[oc * klen..(oc + 1) * klen];
            let o = &mut orow[oc * plane..(oc + 1) * plane];
            if let Some(bias) = bias {
                o.iter_mut().for_each(|v| *v = bias[oc]);
            }
            for &(op, ip, kp) in &taps {
                o[op] += k[kp] * x[ip];
            }
        }
    });
    out
}

/// Gradient of the convolution output with respect to its input.
pub fn conv_backward_input(
    grad_out: &[f64],
    batch: usize,
    kernels: &[f64],
    g: &ConvGeometry,
) -> Vec<f64> {
    let taps = g.taps();
    let (in_len, out_len, klen, plane) = (g.in_len(), g.out_len(), g.kernel_len(), g.out_h * g.out_w);
    let mut dx = vec![0.0; batch * in_len];
    par::for_each_chunk_mut(&mut dx, in_len, |b, drow| {
        let go = &grad_out[b * out_len..(b + 1) * out_len];
        for oc in 0..g.out_c {
            let k = &kernels[oc * klen..(oc + 1) * klen];
            let gplane = &go[oc * plane..(oc + 1) * plane];
            for &(op, ip, kp) in &taps {
                drow[ip] += k[kp] * gplane[op];
            }
        }
    });
    dx
}

/// Gradient of the convolution output with respect to the kernels.
pub fn conv_backward_kernels(
    grad_out: &[f64],
    batch: usize,
    input: &[f64],
    g: &ConvGeometry,
) -> Vec<f64> {
    let taps = g.taps();
    let (in_len, out_len, klen, plane) = (g.in_len(), g.out_len(), g.kernel_len(), g.out_h * g.out_w);
    let mut dk = vec![0.0; g.out_c * klen];
    par::for_each_chunk_mut(&mut dk, klen, |oc, krow| {
        for b in 0..batch {
            let x = &input[b * in_len..(b + 1) * in_len];
            let gplane = &grad_out[b * out_len + oc * plane..b * out_len + (oc + 1) * plane];
            for &(op, ip, kp) in &taps {
                krow[kp] += gplane[op] * x[ip];
            }
        }
    });
    dk
}

/// Gradient with respect to the per-channel bias.
pub fn conv_backward_bias(grad_out: &[f64], batch: usize, g: &ConvGeometry) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let out_len = g.out_len();
    (0..g.out_c)
        .map(|oc| {
            (0..batch)
                .map(|b| {
                    grad_out[b * out_len + oc * plane..b * out_len + (oc + 1) * plane]
                        .iter()
                        .sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// Rewrites a convolution as a dense `[out_len, in_len]` weight matrix and an
/// `out_len` bias vector.
pub fn lower_conv_to_affine(
    kernels: &Tensor,
    bias: &Tensor,
    g: &ConvGeometry,
) -> Result<(Tensor, Tensor)> {
    if kernels.len() != g.out_c * g.kernel_len() || bias.len() != g.out_c {
        return Err(Error::ConvGeometry(format!(
            "kernel tensor {:?} / bias {:?} do not match geometry {g:?}",
            kernels.shape(),
            bias.shape()
        )));
    }
    let (in_len, klen, plane) = (g.in_len(), g.kernel_len(), g.out_h * g.out_w);
    let mut w = vec![0.0; g.out_len() * in_len];
    let k = kernels.data();
    let taps = g.taps();
    for oc in 0..g.out_c {
        for &(op, ip, kp) in &taps {
            w[(oc * plane + op) * in_len + ip] += k[oc * klen + kp];
        }
    }
    let b: Vec<f64> = (0..g.out_len()).map(|o| bias.data()[o / plane]).collect();
    Ok((
        Tensor::matrix(g.out_len(), in_len, w)?,
        Tensor::vector(b)?,
    ))
}
