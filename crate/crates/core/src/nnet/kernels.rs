//! Float NCHW kernels. Each output element is accumulated in a fixed order
//! (bias first, then input channel, kernel row, kernel column), so results do
//! not depend on how output channels are spread over threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::Tensor;

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding).checked_sub(kernel).map(|d| d / stride + 1)
}

/// 2-D convolution. `weight` is `[out, in, k, k]`, `bias` is `[out]`.
pub fn conv2d(
    x: &Tensor,
    weight: &[f32],
    bias: &[f32],
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [n, in_ch, h, w] = x.shape();
    if weight.len() != out_ch * in_ch * kernel * kernel || bias.len() != out_ch {
        return Err(Error::invalid(format!(
            "conv2d weights do not match {in_ch}->{out_ch} k{kernel}"
        )));
    }
    let (oh, ow) = match (
        conv_out_dim(h, kernel, stride, padding),
        conv_out_dim(w, kernel, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid(format!("input {h}x{w} smaller than kernel {kernel}"))),
    };
    let plane = oh * ow;
    let mut out = vec![0.0f32; n * out_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, oc) = (idx / out_ch, idx % out_ch);
        dst.fill(bias[oc]);
        for ic in 0..in_ch {
            let src = x.plane(b, ic);
            let wbase = (oc * in_ch + ic) * kernel * kernel;
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let wv = weight[wbase + ky * kernel + kx];
                    accumulate_tap(dst, src, wv, (h, w), (oh, ow), (ky, kx), stride, padding);
                }
            }
        }
    });
    Ok(Tensor::from_raw([n, out_ch, oh, ow], out))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap(
    dst: &mut [f32],
    src: &[f32],
    wv: f32,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    (ky, kx): (usize, usize),
    stride: usize,
    padding: usize,
) {
    // Valid output columns: 0 <= ox*stride + kx - padding < w.
    let ox_lo = padding.saturating_sub(kx).div_ceil(stride);
    let ox_hi = ((w + padding).saturating_sub(kx)).div_ceil(stride).min(ow);
    if ox_lo >= ox_hi {
        return;
    }
    for oy in 0..oh {
        let iy = (oy * stride + ky) as isize - padding as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
        let drow = &mut dst[oy * ow..(oy + 1) * ow];
        let ix0 = ox_lo * stride + kx - padding;
        if stride == 1 {
            let len = ox_hi - ox_lo;
            for (d, s) in drow[ox_lo..ox_hi].iter_mut().zip(&srow[ix0..ix0 + len]) {
                *d += wv * s;
            }
        } else {
            for (i, d) in drow[ox_lo..ox_hi].iter_mut().enumerate() {
                *d += wv * srow[ix0 + i * stride];
            }
        }
    }
}

/// Transposed convolution with kernel 2, stride 2. `weight` is `[in, out, 2, 2]`.
pub fn conv_transpose2x2(x: &Tensor, weight: &[f32], bias: &[f32], out_ch: usize) -> Result<Tensor> {
    let [n, in_ch, h, w] = x.shape();
    if weight.len() != in_ch * out_ch * 4 || bias.len() != out_ch {
        return Err(Error::invalid(format!(
            "conv_transpose weights do not match {in_ch}->{out_ch}"
        )));
    }
    let (oh, ow) = (2 * h, 2 * w);
    let plane = oh * ow;
    let mut out = vec![0.0f32; n * out_ch * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, oc) = (idx / out_ch, idx % out_ch);
        dst.fill(bias[oc]);
        for ic in 0..in_ch {
            let src = x.plane(b, ic);
            for ky in 0..2 {
                for kx in 0..2 {
                    let wv = weight[((ic * out_ch + oc) * 2 + ky) * 2 + kx];
                    for iy in 0..h {
                        let drow = &mut dst[(2 * iy + ky) * ow..(2 * iy + ky + 1) * ow];
                        for (ix, s) in src[iy * w..(iy + 1) * w].iter().enumerate() {
                            drow[2 * ix + kx] += wv * s;
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_raw([n, out_ch, oh, ow], out))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "add of mismatched shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(Tensor::from_raw(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    ))
}

/// Inference-mode batch norm: `γ (x − μ) / √(σ² + ε) + β` per channel.
pub fn batch_norm(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let [_, c, h, w] = x.shape();
    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
        return Err(Error::invalid(format!("batch norm parameters do not match {c} channels")));
    }
    let plane = h * w;
    let mut out = x.data().to_vec();
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let ch = idx % c;
        let inv = gamma[ch] / (var[ch] + eps).sqrt();
        for v in dst.iter_mut() {
            *v = (*v - mean[ch]) * inv + beta[ch];
        }
    });
    Ok(Tensor::from_raw(x.shape(), out))
}
