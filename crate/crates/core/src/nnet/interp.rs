use crate::error::{Error, Result};
use crate::mv::BlockVector;
use crate::nnet::graph::Graph;
use crate::prealign::{prealign_pair, Prealigned, SmoothingProfile};
use crate::types::{concat_channels, float_image_to_tensor, FloatImage, Image, Tensor};

/// Replicate-pads the bottom and right edges up to the next multiple of `m`.
pub fn pad_replicate(t: &Tensor, m: usize) -> Tensor {
    let [n, c, h, w] = t.shape();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for b in 0..n {
        for ch in 0..c {
            let src = t.plane(b, ch);
            for y in 0..ph {
                let row = &src[y.min(h - 1) * w..(y.min(h - 1) + 1) * w];
                out.extend_from_slice(row);
                out.extend(std::iter::repeat_n(row[w - 1], pw - w));
            }
        }
    }
    Tensor::from_raw([n, c, ph, pw], out)
}

/// Top-left `h × w` window of every plane.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, th, tw] = t.shape();
    assert!(h <= th && w <= tw, "crop window larger than tensor");
    let mut out = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            let src = t.plane(b, ch);
            for y in 0..h {
                out.extend_from_slice(&src[y * tw..y * tw + w]);
            }
        }
    }
    Tensor::from_raw([n, c, h, w], out)
}

#[derive(Clone, Debug)]
pub struct Interpolated {
    pub frame: Image,
    pub prealigned: Prealigned,
    /// Residual predicted by the network, `(1, 3, H, W)`.
    pub residual: Tensor,
}

/// Middle frame: MV Blend plus the network's residual, clamped to `[0, 1]`.
pub fn interpolate(
    frame0: &FloatImage,
    frame1: &FloatImage,
    vectors: &[BlockVector],
    g: &Graph,
    profile: &SmoothingProfile,
) -> Result<Interpolated> {
    if frame0.channels() != 3 || g.input_channels() != 6 {
        return Err(Error::invalid("interpolation needs RGB frames and a 6-channel network"));
    }
    let pre = prealign_pair(frame0, frame1, vectors, profile)?;
    let (w, h) = (frame0.width(), frame0.height());
    let x = concat_channels(&[&float_image_to_tensor(&pre.warped0), &float_image_to_tensor(&pre.warped1)])?;
    let y = g.forward(&pad_replicate(&x, g.spatial_multiple()))?;
    let [_, oc, _, _] = y.shape();
    if oc != 3 {
        return Err(Error::invalid(format!("network emits {oc} channels, expected 3")));
    }
    let residual = crop(&y, h, w);
    let blend = pre.blend.data();
    let mut out = vec![0.0f32; w * h * 3];
    for ch in 0..3 {
        for (i, &r) in residual.plane(0, ch).iter().enumerate() {
            out[i * 3 + ch] = blend[i * 3 + ch] + r;
        }
    }
    let frame = FloatImage::new(w, h, 3, out)?.to_u8();
    Ok(Interpolated {
        frame,
        prealigned: pre,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::unet::{build_unet_seeded, UNetConfig};
    use crate::prealign::SmoothingVariant;

    fn rgb(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> f32) -> FloatImage {
        let mut d = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    d.push(f(x, y, c));
                }
            }
        }
        FloatImage::new(w, h, 3, d).unwrap()
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::new([1, 2, 5, 7], (0..70).map(|v| v as f32).collect()).unwrap();
        let p = pad_replicate(&t, 4);
        assert_eq!(p.shape(), [1, 2, 8, 8]);
        assert_eq!(p.plane(0, 0)[7 * 8 + 7], 34.0);
        assert_eq!(crop(&p, 5, 7), t);
    }

    #[test]
    fn zero_head_reproduces_blend() {
        let g = build_unet_seeded(&UNetConfig::anvil_s(), 5).unwrap();
        let a = rgb(37, 21, |x, y, c| ((x * 7 + y * 3 + c) % 29) as f32 / 29.0);
        let b = rgb(37, 21, |x, y, c| ((x * 5 + y * 11 + c) % 31) as f32 / 31.0);
        let vs = [BlockVector { x0: 0, y0: 0, w: 16, h: 16, dx: 2.0, dy: -1.0 }];
        let p = SmoothingProfile::new(SmoothingVariant::Production);
        let out = interpolate(&a, &b, &vs, &g, &p).unwrap();
        assert_eq!(out.frame, out.prealigned.blend.to_u8());
        let same = interpolate(&a, &a, &[], &g, &p).unwrap();
        assert_eq!(same.frame, a.to_u8());
    }
}
