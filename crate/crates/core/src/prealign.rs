//! Block vectors → smoothed dense flow → frames warped to the temporal midpoint.
//!
//! The production chain densifies block vectors by zero-order hold, then runs
//! nearest downsampling, a per-component median, a separable Gaussian and a
//! half-pixel-centre bilinear upsample before remapping both frames.
//!
//! [`warp_bilinear`] is a backward remap: output `(x, y)` reads the source at
//! `(x, y) + scale * f(x, y)`. With forward flow `f` (content moves by `+f`
//! from frame 0 to frame 1), the midpoint is reached by reading frame 0 at
//! `-f/2` and frame 1 at `+f/2`.
//!
//! All borders replicate the edge sample.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mv::BlockVector;
use crate::types::{FloatImage, FlowField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SmoothingVariant {
    /// Sub-pixel remap of the raw block flow.
    ZohOnly,
    /// 5×5 box filter followed by 16×16 tile averaging.
    V1Legacy,
    /// Overlapped blocks with raised-cosine windows, no smoothing.
    ObmcCosine,
    /// Downsample, median, Gaussian, upsample.
    Production,
}

impl SmoothingVariant {
    pub const ALL: [SmoothingVariant; 4] = [
        SmoothingVariant::ZohOnly,
        SmoothingVariant::V1Legacy,
        SmoothingVariant::ObmcCosine,
        SmoothingVariant::Production,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SmoothingVariant::ZohOnly => "zoh",
            SmoothingVariant::V1Legacy => "v1",
            SmoothingVariant::ObmcCosine => "obmc",
            SmoothingVariant::Production => "production",
        }
    }
}

impl std::str::FromStr for SmoothingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SmoothingVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown smoothing profile `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingProfile {
    pub variant: SmoothingVariant,
    pub down_factor: usize,
    pub median_k: usize,
    pub gaussian_sigma: f32,
}

impl SmoothingProfile {
    pub fn new(variant: SmoothingVariant) -> Self {
        Self {
            variant,
            down_factor: 4,
            median_k: 5,
            gaussian_sigma: 2.0,
        }
    }

    pub fn production() -> Self {
        Self::new(SmoothingVariant::Production)
    }

    pub fn validate(&self) -> Result<()> {
        if self.median_k < 3 || self.median_k.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "median kernel must be odd and >= 3, got {}",
                self.median_k
            )));
        }
        if ![1, 2, 4, 8].contains(&self.down_factor) {
            return Err(Error::invalid(format!(
                "down factor must be 1, 2, 4 or 8, got {}",
                self.down_factor
            )));
        }
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma > 0.0) {
            return Err(Error::invalid("gaussian sigma must be > 0"));
        }
        Ok(())
    }
}

impl Default for SmoothingProfile {
    fn default() -> Self {
        Self::production()
    }
}

/// Zero-order hold: each pixel takes the vector of the last block covering it.
/// Blocks are clipped to the frame; uncovered pixels get zero flow.
pub fn zoh_densify(vectors: &[BlockVector], width: usize, height: usize) -> FlowField {
    let mut u = vec![0.0f32; width * height];
    let mut v = vec![0.0f32; width * height];
    for b in vectors {
        let (xs, xe) = clip_span(b.x0 as i64, b.w as i64, width);
        let (ys, ye) = clip_span(b.y0 as i64, b.h as i64, height);
        for y in ys..ye {
            let row = y * width;
            u[row + xs..row + xe].fill(b.dx);
            v[row + xs..row + xe].fill(b.dy);
        }
    }
    FlowField::from_raw(width, height, u, v)
}

fn clip_span(start: i64, len: i64, limit: usize) -> (usize, usize) {
    let s = start.clamp(0, limit as i64) as usize;
    let e = (start + len).clamp(0, limit as i64) as usize;
    (s, e.max(s))
}

/// Keeps the top-left sample of every `factor × factor` cell.
pub fn downsample_flow_nearest(flow: &FlowField, factor: usize) -> Result<FlowField> {
    if factor < 1 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    let (w, h) = (flow.width(), flow.height());
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut u = Vec::with_capacity(ow * oh);
    let mut v = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let (a, b) = flow.at(x * factor, y * factor);
            u.push(a);
            v.push(b);
        }
    }
    Ok(FlowField::from_raw(ow, oh, u, v))
}

fn map_components(
    flow: &FlowField,
    f: impl Fn(&[f32], usize, usize) -> Vec<f32> + Sync,
) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    let (u, v) = rayon::join(|| f(flow.u(), w, h), || f(flow.v(), w, h));
    FlowField::from_raw(w, h, u, v)
}

/// Per-component `k × k` median with replicate padding.
pub fn median_filter_flow(flow: &FlowField, k: usize) -> Result<FlowField> {
    if k.is_multiple_of(2) {
        return Err(Error::invalid(format!("median kernel must be odd, got {k}")));
    }
    Ok(map_components(flow, |plane, w, h| median_plane(plane, w, h, k)))
}

fn median_plane(plane: &[f32], w: usize, h: usize, k: usize) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mid = (k * k - 1) / 2;
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut window = Vec::with_capacity(k * k);
        for (x, o) in row.iter_mut().enumerate() {
            window.clear();
            for dy in -r..=r {
                let sy = clamp_index(y as isize + dy, h);
                for dx in -r..=r {
                    window.push(plane[sy * w + clamp_index(x as isize + dx, w)]);
                }
            }
            let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
            *o = *m;
        }
    });
    out
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Normalized taps `exp(-i² / 2σ²)` for `i ∈ [-r, r]`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma as f64 * sigma as f64)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / sum) as f32).collect()
}

/// Separable Gaussian blur of both components, replicate border.
pub fn gaussian_blur_flow(flow: &FlowField, sigma: f32) -> Result<FlowField> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("gaussian sigma must be > 0"));
    }
    let kernel = gaussian_kernel(sigma);
    Ok(map_components(flow, |plane, w, h| separable_blur(plane, w, h, &kernel)))
}

fn separable_blur(plane: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane[y * w..(y + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (t, &g) in kernel.iter().enumerate() {
                acc += g * src[clamp_index(x as isize + t as isize - r, w)];
            }
            *o = acc;
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (t, &g) in kernel.iter().enumerate() {
                acc += g * tmp[clamp_index(y as isize + t as isize - r, h) * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// Bilinear resize with half-pixel centres. Displacements are not rescaled.
pub fn upsample_flow_bilinear(flow: &FlowField, out_w: usize, out_h: usize) -> Result<FlowField> {
    let (w, h) = (flow.width(), flow.height());
    if out_w < w || out_h < h {
        return Err(Error::invalid(format!(
            "upsample target {out_w}x{out_h} is smaller than {w}x{h}"
        )));
    }
    let xs = resample_taps(w, out_w);
    let ys = resample_taps(h, out_h);
    let f = |plane: &[f32], _: usize, _: usize| {
        let mut out = vec![0.0f32; out_w * out_h];
        out.par_chunks_mut(out_w).enumerate().for_each(|(oy, row)| {
            let (y0, y1, fy) = ys[oy];
            for (ox, o) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = xs[ox];
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bot = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                *o = lerp(top, bot, fy);
            }
        });
        out
    };
    let (u, v) = rayon::join(|| f(flow.u(), 0, 0), || f(flow.v(), 0, 0));
    Ok(FlowField::from_raw(out_w, out_h, u, v))
}

fn resample_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// `k × k` mean with replicate padding.
pub fn box_filter_flow(flow: &FlowField, k: usize) -> Result<FlowField> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!("box kernel must be odd, got {k}")));
    }
    let taps = vec![1.0 / k as f32; k];
    Ok(map_components(flow, |plane, w, h| separable_blur(plane, w, h, &taps)))
}

/// Replaces every non-overlapping `tile × tile` cell with its mean.
pub fn tile_average_flow(flow: &FlowField, tile: usize) -> Result<FlowField> {
    if tile == 0 {
        return Err(Error::invalid("tile size must be >= 1"));
    }
    Ok(map_components(flow, |plane, w, h| {
        let mut out = vec![0.0f32; w * h];
        for ty in (0..h).step_by(tile) {
            for tx in (0..w).step_by(tile) {
                let (ye, xe) = ((ty + tile).min(h), (tx + tile).min(w));
                let mut sum = 0.0f64;
                for y in ty..ye {
                    sum += plane[y * w + tx..y * w + xe].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = (sum / ((ye - ty) * (xe - tx)) as f64) as f32;
                for y in ty..ye {
                    out[y * w + tx..y * w + xe].fill(mean);
                }
            }
        }
        out
    }))
}

/// Bilinear sample of channel `c` at `(sx, sy)`, coordinates clamped to the frame.
#[inline]
pub fn sample_bilinear(img: &FloatImage, sx: f32, sy: f32, c: usize) -> f32 {
    let (w, h) = (img.width(), img.height());
    let sx = sx.clamp(0.0, (w - 1) as f32);
    let sy = sy.clamp(0.0, (h - 1) as f32);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = sx - x0 as f32;
    let fy = sy - y0 as f32;
    let top = lerp(img.get(x0, y0, c), img.get(x1, y0, c), fx);
    let bot = lerp(img.get(x0, y1, c), img.get(x1, y1, c), fx);
    lerp(top, bot, fy)
}

/// Backward remap: `out(x, y) = img(x + scale·u, y + scale·v)`, bilinear, clamped.
pub fn warp_bilinear(img: &FloatImage, flow: &FlowField, scale: f32) -> Result<FloatImage> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if flow.width() != w || flow.height() != h {
        return Err(Error::invalid(format!(
            "flow {}x{} does not match image {}x{}",
            flow.width(),
            flow.height(),
            w,
            h
        )));
    }
    let mut out = vec![0.0f32; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            let sx = x as f32 + scale * u;
            let sy = y as f32 + scale * v;
            for c in 0..ch {
                row[x * ch + c] = sample_bilinear(img, sx, sy, c);
            }
        }
    });
    Ok(FloatImage::from_raw(w, h, ch, out))
}

/// Raised-cosine window over `[-extent, extent]`, 1 at the centre, 0 at the ends.
/// Shifted copies spaced `extent` apart sum to one.
#[inline]
pub fn raised_cosine_weight(offset: f32, extent: f32) -> f32 {
    if offset.abs() >= extent {
        0.0
    } else {
        let c = (std::f32::consts::FRAC_PI_2 * offset / extent).cos();
        c * c
    }
}

/// Overlapped block motion compensation: each block predicts a region twice its
/// size with a separable raised-cosine weight; the output is the weighted mean.
/// Pixels no window reaches keep the unwarped source sample.
pub fn obmc_warp(img: &FloatImage, vectors: &[BlockVector], scale: f32) -> Result<FloatImage> {
    if vectors.is_empty() {
        return Err(Error::invalid("obmc_warp needs at least one block vector"));
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = vec![0.0f32; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        let mut num = vec![0.0f32; w * ch];
        let mut den = vec![0.0f32; w];
        let py = y as f32 + 0.5;
        for b in vectors {
            let (bw, bh) = (b.w as f32, b.h as f32);
            let wy = raised_cosine_weight(py - (b.y0 as f32 + bh * 0.5), bh);
            if wy == 0.0 {
                continue;
            }
            let cx = b.x0 as f32 + bw * 0.5;
            let (xs, xe) = clip_span(b.x0 as i64 - (b.w / 2) as i64, 2 * b.w as i64, w);
            for x in xs..xe {
                let wgt = wy * raised_cosine_weight(x as f32 + 0.5 - cx, bw);
                if wgt == 0.0 {
                    continue;
                }
                let sx = x as f32 + scale * b.dx;
                let sy = y as f32 + scale * b.dy;
                for c in 0..ch {
                    num[x * ch + c] += wgt * sample_bilinear(img, sx, sy, c);
                }
                den[x] += wgt;
            }
        }
        for x in 0..w {
            for c in 0..ch {
                row[x * ch + c] = if den[x] > 0.0 {
                    (num[x * ch + c] / den[x]).clamp(0.0, 1.0)
                } else {
                    img.get(x, y, c)
                };
            }
        }
    });
    Ok(FloatImage::from_raw(w, h, ch, out))
}

/// Dense flow for a frame according to the profile's smoothing chain.
pub fn build_flow(
    vectors: &[BlockVector],
    width: usize,
    height: usize,
    profile: &SmoothingProfile,
) -> Result<FlowField> {
    profile.validate()?;
    let zoh = zoh_densify(vectors, width, height);
    match profile.variant {
        SmoothingVariant::ZohOnly | SmoothingVariant::ObmcCosine => Ok(zoh),
        SmoothingVariant::V1Legacy => tile_average_flow(&box_filter_flow(&zoh, 5)?, 16),
        SmoothingVariant::Production => {
            let low = downsample_flow_nearest(&zoh, profile.down_factor)?;
            let low = median_filter_flow(&low, profile.median_k)?;
            let low = gaussian_blur_flow(&low, profile.gaussian_sigma)?;
            upsample_flow_bilinear(&low, width, height)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prealigned {
    pub warped0: FloatImage,
    pub warped1: FloatImage,
    /// Pixel-wise mean of the two warped frames (the MV Blend frame).
    pub blend: FloatImage,
    pub flow: FlowField,
}

pub fn prealign_pair(
    frame0: &FloatImage,
    frame1: &FloatImage,
    vectors: &[BlockVector],
    profile: &SmoothingProfile,
) -> Result<Prealigned> {
    if !frame0.same_dims(frame1) {
        return Err(Error::invalid("prealign_pair needs frames of equal dimensions"));
    }
    let (w, h) = (frame0.width(), frame0.height());
    let flow = build_flow(vectors, w, h, profile)?;
    let (warped0, warped1) = if profile.variant == SmoothingVariant::ObmcCosine && !vectors.is_empty() {
        (obmc_warp(frame0, vectors, -0.5)?, obmc_warp(frame1, vectors, 0.5)?)
    } else {
        (warp_bilinear(frame0, &flow, -0.5)?, warp_bilinear(frame1, &flow, 0.5)?)
    };
    let blend = FloatImage::average(&warped0, &warped1)?;
    Ok(Prealigned {
        warped0,
        warped1,
        blend,
        flow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(x0: i32, y0: i32, w: u32, h: u32, dx: f32, dy: f32) -> BlockVector {
        BlockVector { x0, y0, w, h, dx, dy }
    }

    fn field(w: usize, h: usize, f: impl Fn(usize, usize) -> (f32, f32)) -> FlowField {
        let mut u = Vec::new();
        let mut v = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        FlowField::new(w, h, u, v).unwrap()
    }

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> FloatImage {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        FloatImage::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn zoh_full_cover_and_empty() {
        let f = zoh_densify(&[bv(0, 0, 16, 16, 1.0, -2.0)], 16, 16);
        assert!(f.u().iter().all(|&u| u == 1.0) && f.v().iter().all(|&v| v == -2.0));
        let z = zoh_densify(&[], 8, 4);
        assert!(z.u().iter().chain(z.v()).all(|&x| x == 0.0));
    }

    #[test]
    fn zoh_later_block_wins_and_edges_clip() {
        let f = zoh_densify(&[bv(0, 0, 8, 8, 1.0, 0.0), bv(4, 4, 8, 8, 2.0, 3.0)], 10, 10);
        assert_eq!(f.at(2, 2), (1.0, 0.0));
        assert_eq!(f.at(5, 5), (2.0, 3.0));
        assert_eq!(f.at(7, 4), (2.0, 3.0));
        assert_eq!(f.at(9, 9), (2.0, 3.0));
        assert_eq!(f.at(9, 0), (0.0, 0.0));
        let g = zoh_densify(&[bv(-4, -4, 8, 8, 5.0, 5.0)], 6, 6);
        assert_eq!(g.at(3, 3), (5.0, 5.0));
        assert_eq!(g.at(4, 4), (0.0, 0.0));
    }

    #[test]
    fn downsample_index_arithmetic() {
        let f = field(8, 8, |x, y| ((y * 8 + x) as f32, -((y * 8 + x) as f32)));
        let d = downsample_flow_nearest(&f, 4).unwrap();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert_eq!(d.u(), &[0.0, 4.0, 32.0, 36.0]);
        assert_eq!(d.v(), &[0.0, -4.0, -32.0, -36.0]);
        assert_eq!(downsample_flow_nearest(&f, 1).unwrap(), f);
        let odd = downsample_flow_nearest(&field(9, 5, |_, _| (1.0, 2.0)), 4).unwrap();
        assert_eq!((odd.width(), odd.height()), (3, 2));
        assert!(odd.u().iter().all(|&u| u == 1.0));
        assert!(downsample_flow_nearest(&f, 0).is_err());
    }

    #[test]
    fn median_removes_spike_and_keeps_edges() {
        let c = field(7, 7, |_, _| (3.0, -1.0));
        assert_eq!(median_filter_flow(&c, 5).unwrap(), c);

        let spike = field(9, 9, |x, y| if (x, y) == (4, 4) { (50.0, 0.0) } else { (x as f32 * 0.1, 0.0) });
        let m = median_filter_flow(&spike, 5).unwrap();
        assert!((m.at(4, 4).0 - 0.4).abs() < 1e-6);

        let step = field(12, 6, |x, _| (if x < 6 { 0.0 } else { 4.0 }, 0.0));
        let m = median_filter_flow(&step, 5).unwrap();
        assert_eq!(m, step);
        assert!(median_filter_flow(&step, 4).is_err());
    }

    #[test]
    fn gaussian_constant_impulse_and_ramp() {
        let c = field(10, 7, |_, _| (2.5, -0.75));
        let b = gaussian_blur_flow(&c, 2.0).unwrap();
        assert!(b.u().iter().all(|&u| (u - 2.5).abs() < 1e-6));
        assert!(b.v().iter().all(|&v| (v + 0.75).abs() < 1e-6));

        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        let imp = field(21, 21, |x, y| (if (x, y) == (10, 10) { 1.0 } else { 0.0 }, 0.0));
        let b = gaussian_blur_flow(&imp, 2.0).unwrap();
        assert!((b.at(10, 10).0 - k[6] * k[6]).abs() < 1e-7);

        let ramp = field(32, 8, |x, _| (x as f32 * 0.5, 0.0));
        let b = gaussian_blur_flow(&ramp, 2.0).unwrap();
        for x in 6..26 {
            assert!((b.at(x, 4).0 - x as f32 * 0.5).abs() < 1e-5, "x={x}");
        }
        assert!(gaussian_blur_flow(&ramp, 0.0).is_err());
    }

    #[test]
    fn upsample_conventions() {
        let one = field(1, 1, |_, _| (1.5, -3.0));
        let up = upsample_flow_bilinear(&one, 5, 3).unwrap();
        assert!(up.u().iter().all(|&u| u == 1.5) && up.v().iter().all(|&v| v == -3.0));

        // Corners a b / c d; 4×4 output sample coordinates are -0.25, 0.25, 0.75, 1.25,
        // clamped to [0, 1], giving weights 0, 0.25, 0.75, 1 along each axis.
        let (a, b, c, d) = (0.0, 4.0, 8.0, 16.0);
        let corners = field(2, 2, |x, y| ([[a, b], [c, d]][y][x], 0.0));
        let up = upsample_flow_bilinear(&corners, 4, 4).unwrap();
        let w = [0.0f32, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let (fx, fy) = (w[x], w[y]);
                let expect = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
                assert!((up.at(x, y).0 - expect).abs() < 1e-6, "({x},{y})");
            }
        }

        let f = field(5, 4, |x, y| (x as f32, y as f32 * 2.0));
        assert_eq!(upsample_flow_bilinear(&f, 5, 4).unwrap(), f);
        assert!(upsample_flow_bilinear(&f, 4, 4).is_err());
    }

    #[test]
    fn warp_identity_shift_and_half() {
        let img = gray(8, 4, |x, y| (x as f32 + y as f32 * 8.0) / 40.0);
        assert_eq!(warp_bilinear(&img, &FlowField::zeros(8, 4), 1.0).unwrap(), img);

        let ramp = gray(6, 2, |x, _| x as f32 / 10.0);
        let shifted = warp_bilinear(&ramp, &FlowField::constant(6, 2, 1.0, 0.0), 1.0).unwrap();
        for y in 0..2 {
            for x in 0..6 {
                assert_eq!(shifted.get(x, y, 0), ramp.get((x + 1).min(5), y, 0));
            }
        }

        let alt = gray(6, 1, |x, _| if x % 2 == 0 { 0.2 } else { 0.6 });
        let half = warp_bilinear(&alt, &FlowField::constant(6, 1, 1.0, 0.0), 0.5).unwrap();
        for x in 0..5 {
            assert!((half.get(x, 0, 0) - 0.4).abs() < 1e-6);
        }
        assert!(warp_bilinear(&img, &FlowField::zeros(4, 4), 1.0).is_err());
    }

    #[test]
    fn raised_cosine_peak_and_partition() {
        assert_eq!(raised_cosine_weight(0.0, 16.0), 1.0);
        assert_eq!(raised_cosine_weight(16.0, 16.0), 0.0);
        for i in 0..16 {
            let d = i as f32 + 0.5;
            let s = raised_cosine_weight(d, 16.0) + raised_cosine_weight(d - 16.0, 16.0);
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn obmc_single_block_matches_warp() {
        let img = gray(16, 16, |x, y| ((x * 7 + y * 3) % 16) as f32 / 16.0);
        let v = bv(0, 0, 16, 16, 1.25, -0.5);
        let o = obmc_warp(&img, &[v], 1.0).unwrap();
        let r = warp_bilinear(&img, &FlowField::constant(16, 16, 1.25, -0.5), 1.0).unwrap();
        for (a, b) in o.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(obmc_warp(&img, &[], 1.0).is_err());
    }

    #[test]
    fn obmc_equal_neighbours_match_zoh_warp() {
        let img = gray(32, 16, |x, y| ((x * 5 + y * 11) % 23) as f32 / 23.0);
        let vs = [bv(0, 0, 16, 16, -0.75, 1.5), bv(16, 0, 16, 16, -0.75, 1.5)];
        let o = obmc_warp(&img, &vs, 0.5).unwrap();
        let z = warp_bilinear(&img, &zoh_densify(&vs, 32, 16), 0.5).unwrap();
        for (a, b) in o.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn obmc_uncovered_pixels_pass_through() {
        let img = gray(40, 8, |x, _| x as f32 / 40.0);
        let o = obmc_warp(&img, &[bv(0, 0, 8, 8, 2.0, 0.0)], 1.0).unwrap();
        for x in 12..40 {
            assert_eq!(o.get(x, 3, 0), img.get(x, 3, 0));
        }
    }

    #[test]
    fn legacy_tiles_are_constant() {
        let f = field(32, 32, |x, y| ((x % 5) as f32, (y % 3) as f32));
        let g = tile_average_flow(&box_filter_flow(&f, 5).unwrap(), 16).unwrap();
        for ty in [0, 16] {
            for tx in [0, 16] {
                let first = g.at(tx, ty);
                for y in ty..ty + 16 {
                    for x in tx..tx + 16 {
                        assert_eq!(g.at(x, y), first);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_frames_zero_vectors_blend_is_identity() {
        let img = gray(24, 20, |x, y| ((x * y) % 17) as f32 / 17.0);
        for variant in SmoothingVariant::ALL {
            let p = prealign_pair(&img, &img, &[], &SmoothingProfile::new(variant)).unwrap();
            assert_eq!(p.blend, img, "{variant:?}");
        }
    }

    #[test]
    fn profile_validation() {
        let mut p = SmoothingProfile::production();
        assert!(p.validate().is_ok());
        p.median_k = 4;
        assert!(p.validate().is_err());
        p.median_k = 5;
        p.down_factor = 3;
        assert!(p.validate().is_err());
        p.down_factor = 4;
        p.gaussian_sigma = -1.0;
        assert!(p.validate().is_err());
        assert_eq!("obmc".parse::<SmoothingVariant>().unwrap(), SmoothingVariant::ObmcCosine);
        assert!("daala".parse::<SmoothingVariant>().is_err());
    }
}
