//! Direct scalar-loop reference implementations, written from the defining
//! formulas with f64 accumulation and no restructuring. Only used to check
//! the optimized kernels.

use crate::types::{FloatImage, FlowField, Tensor};

fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// `y[o, oy, ox] = b[o] + Σ_{i, ky, kx} w[o, i, ky, kx] · x[i, oy·s + ky − p, ox·s + kx − p]`, zero outside.
pub fn oracle_conv2d(
    x: &Tensor,
    w: &[f32],
    b: &[f32],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let [n, in_ch, h, wd] = x.shape();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * out_ch * oh * ow);
    for bi in 0..n {
        for o in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o] as f64;
                    for i in 0..in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                let xv = xd[((bi * in_ch + i) * h + iy as usize) * wd + ix as usize];
                                acc += w[((o * in_ch + i) * k + ky) * k + kx] as f64 * xv as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::new([n, out_ch, oh, ow], out).expect("finite oracle output")
}

/// Gather form of the 2×2 stride-2 transposed convolution with `w[i, o, ky, kx]`:
/// `y[o, oy, ox] = b[o] + Σ_i x[i, oy/2, ox/2] · w[i, o, oy%2, ox%2]`.
pub fn oracle_conv_transpose2x2(x: &Tensor, w: &[f32], b: &[f32], out_ch: usize) -> Tensor {
    let [n, in_ch, h, wd] = x.shape();
    let xd = x.data();
    let mut out = Vec::with_capacity(n * out_ch * 4 * h * wd);
    for bi in 0..n {
        for o in 0..out_ch {
            for oy in 0..2 * h {
                for ox in 0..2 * wd {
                    let mut acc = b[o] as f64;
                    for i in 0..in_ch {
                        let xv = xd[((bi * in_ch + i) * h + oy / 2) * wd + ox / 2] as f64;
                        acc += xv * w[((i * out_ch + o) * 2 + oy % 2) * 2 + ox % 2] as f64;
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::new([n, out_ch, 2 * h, 2 * wd], out).expect("finite oracle output")
}

/// Int8 convolution with i64 accumulation and `round_half_even(acc · s_x s_w / s_out)`.
/// `w_scales` holds one scale or one per output channel.
#[allow(clippy::too_many_arguments)]
pub fn oracle_conv2d_int8(
    x: &[i8],
    shape: [usize; 4],
    s_x: f32,
    w: &[i8],
    w_scales: &[f32],
    bias: &[i32],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    s_out: f32,
) -> Vec<i8> {
    let [n, in_ch, h, wd] = shape;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * out_ch * oh * ow);
    for bi in 0..n {
        for o in 0..out_ch {
            let s_w = if w_scales.len() == 1 { w_scales[0] } else { w_scales[o] };
            let m = s_x as f64 * s_w as f64 / s_out as f64;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o] as i64;
                    for i in 0..in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                let xv = x[((bi * in_ch + i) * h + iy as usize) * wd + ix as usize] as i64;
                                acc += w[((o * in_ch + i) * k + ky) * k + kx] as i64 * xv;
                            }
                        }
                    }
                    out.push((acc as f64 * m).round_ties_even().clamp(-128.0, 127.0) as i8);
                }
            }
        }
    }
    out
}

/// Per-component `k × k` median: gather the replicate-padded window, fully sort, take the middle.
pub fn oracle_median(flow: &FlowField, k: usize) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    let r = (k / 2) as i64;
    let one = |plane: &[f32]| {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut win = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        win.push(plane[clamp_idx(y + dy, h) * w + clamp_idx(x + dx, w)]);
                    }
                }
                win.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.push(win[win.len() / 2]);
            }
        }
        out
    };
    FlowField::new(w, h, one(flow.u()), one(flow.v())).expect("finite oracle output")
}

/// Direct 2-D Gaussian with taps `exp(−(i² + j²) / 2σ²)` over `|i|, |j| ≤ ceil(3σ)`,
/// normalized to sum 1, replicate border.
pub fn oracle_gaussian(flow: &FlowField, sigma: f32) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    let r = (3.0 * sigma as f64).ceil() as i64;
    let s2 = 2.0 * sigma as f64 * sigma as f64;
    let mut norm = 0.0;
    for j in -r..=r {
        for i in -r..=r {
            norm += (-((i * i + j * j) as f64) / s2).exp();
        }
    }
    let one = |plane: &[f32]| {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0f64;
                for j in -r..=r {
                    for i in -r..=r {
                        let t = (-((i * i + j * j) as f64) / s2).exp() / norm;
                        acc += t * plane[clamp_idx(y + j, h) * w + clamp_idx(x + i, w)] as f64;
                    }
                }
                out.push(acc as f32);
            }
        }
        out
    };
    FlowField::new(w, h, one(flow.u()), one(flow.v())).expect("finite oracle output")
}

/// `out(x, y) = I(x + s·u, y + s·v)` with the sample position clamped to the
/// frame and the four neighbours weighted by their overlap areas.
pub fn oracle_warp(img: &FloatImage, flow: &FlowField, scale: f32) -> FloatImage {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            let sx = ((x as f32 + scale * u) as f64).clamp(0.0, (w - 1) as f64);
            let sy = ((y as f32 + scale * v) as f64).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                    for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                        let xi = (x0 as usize + dx).min(w - 1);
                        let yi = (y0 as usize + dy).min(h - 1);
                        acc += wx * wy * img.get(xi, yi, c) as f64;
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    FloatImage::new(w, h, ch, out).expect("bilinear of [0, 1] samples stays in range")
}

/// Sample quantile by the 1-based rule `h = (n − 1)·p/100 + 1`,
/// `q = x⌊h⌋ + (h − ⌊h⌋)(x⌊h⌋+1 − x⌊h⌋)`.
pub fn oracle_percentile(values: &[f32], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let hh = (n - 1) as f64 * p / 100.0 + 1.0;
    let lo = hh.floor() as usize;
    if lo >= n {
        return v[n - 1];
    }
    v[lo - 1] + (hh - lo as f64) * (v[lo] - v[lo - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_conv_and_zero_warp() {
        let x = Tensor::new([1, 2, 4, 5], (0..40).map(|v| v as f32 * 0.1).collect()).unwrap();
        let mut w = vec![0.0; 2 * 2 * 9];
        w[4] = 1.0;
        w[(2 + 1) * 9 + 4] = 1.0;
        assert_eq!(oracle_conv2d(&x, &w, &[0.0, 0.0], 2, 3, 1, 1), x);

        let img = FloatImage::new(3, 2, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(oracle_warp(&img, &FlowField::zeros(3, 2), 0.5), img);
    }

    #[test]
    fn percentile_rule() {
        assert_eq!(oracle_percentile(&[3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(oracle_percentile(&[3.0, 1.0, 2.0], 100.0), 3.0);
        assert!((oracle_percentile(&[0.0, 10.0], 25.0) - 2.5).abs() < 1e-12);
    }
}
