//! Symmetric int8 execution path: zero points are 0, accumulation is i32, and
//! requantization rounds half to even.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnet::kernels::conv_out_dim;
use crate::types::Tensor;

pub const ACT_MIN: i32 = -128;
pub const ACT_MAX: i32 = 127;
/// Weights are kept symmetric so −128 never appears in products.
pub const WEIGHT_MAX: i32 = 127;

/// `clamp(round_half_even(v / scale), lo, hi)`.
#[inline]
pub fn quantize_value(v: f32, scale: f32, lo: i32, hi: i32) -> i32 {
    ((v / scale).round_ties_even() as i64).clamp(lo as i64, hi as i64) as i32
}

fn check_scale(what: &str, s: f32) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("{what} scale must be positive, got {s}")));
    }
    Ok(())
}

/// Int8 NCHW activation tensor with a per-tensor scale.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    pub shape: [usize; 4],
    pub data: Vec<i8>,
    pub scale: f32,
}

impl QTensor {
    pub fn quantize(t: &Tensor, scale: f32) -> Result<Self> {
        check_scale("activation", scale)?;
        Ok(Self {
            shape: t.shape(),
            data: t
                .data()
                .iter()
                .map(|&v| quantize_value(v, scale, ACT_MIN, ACT_MAX) as i8)
                .collect(),
            scale,
        })
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor::from_raw(self.shape, self.data.iter().map(|&q| q as f32 * self.scale).collect())
    }
}

/// Int8 conv weights `[out, in, k, k]` with one scale per tensor or per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QWeights {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub data: Vec<i8>,
    pub scales: Vec<f32>,
}

impl QWeights {
    pub fn quantize(w: &[f32], out_ch: usize, in_ch: usize, kernel: usize, scales: Vec<f32>) -> Result<Self> {
        if w.len() != out_ch * in_ch * kernel * kernel {
            return Err(Error::invalid("weight length does not match conv shape"));
        }
        if scales.len() != 1 && scales.len() != out_ch {
            return Err(Error::invalid(format!(
                "expected 1 or {out_ch} weight scales, got {}",
                scales.len()
            )));
        }
        for &s in &scales {
            check_scale("weight", s)?;
        }
        let per_out = in_ch * kernel * kernel;
        let data = w
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = scales[if scales.len() == 1 { 0 } else { i / per_out }];
                quantize_value(v, s, -WEIGHT_MAX, WEIGHT_MAX) as i8
            })
            .collect();
        Ok(Self { out_ch, in_ch, kernel, data, scales })
    }

    pub fn scale(&self, oc: usize) -> f32 {
        self.scales[if self.scales.len() == 1 { 0 } else { oc }]
    }
}

/// Integer convolution. `bias` is in accumulator units (`s_x · s_w`).
/// Each output is `clamp(round_half_even(acc · s_x s_w / s_out))`.
pub fn conv2d_int8(
    x: &QTensor,
    w: &QWeights,
    bias: &[i32],
    stride: usize,
    padding: usize,
    out_scale: f32,
) -> Result<QTensor> {
    check_scale("input", x.scale)?;
    check_scale("output", out_scale)?;
    let [n, in_ch, h, wd] = x.shape;
    let (k, out_ch) = (w.kernel, w.out_ch);
    if in_ch != w.in_ch || bias.len() != out_ch {
        return Err(Error::invalid(format!(
            "int8 conv expects {} input channels and {out_ch} biases",
            w.in_ch
        )));
    }
    let (oh, ow) = match (conv_out_dim(h, k, stride, padding), conv_out_dim(wd, k, stride, padding)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid("input smaller than kernel")),
    };
    let plane = oh * ow;
    let mut out = vec![0i8; n * out_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, oc) = (idx / out_ch, idx % out_ch);
        let m = x.scale as f64 * w.scale(oc) as f64 / out_scale as f64;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..in_ch {
                    let src = &x.data[((b * in_ch + ic) * h) * wd..((b * in_ch + ic) * h + h) * wd];
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let wv = w.data[((oc * in_ch + ic) * k + ky) * k + kx] as i32;
                            acc += wv * src[iy as usize * wd + ix as usize] as i32;
                        }
                    }
                }
                let q = (acc as f64 * m).round_ties_even().clamp(ACT_MIN as f64, ACT_MAX as f64);
                dst[oy * ow + ox] = q as i8;
            }
        }
    });
    Ok(QTensor {
        shape: [n, out_ch, oh, ow],
        data: out,
        scale: out_scale,
    })
}
