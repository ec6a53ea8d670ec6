//! Value types shared by every stage: 8-bit and float pictures, dense flow
//! fields and NCHW tensors.
//!
//! Float pictures live in `[0, 1]`. Every float → 8-bit conversion in the crate
//! goes through [`sample_to_u8`], which clamps and rounds half away from zero.

use crate::error::{Error, Result};

/// Float sample in `[0, 1]` to an 8-bit sample, rounding half away from zero.
#[inline]
#[allow(clippy::manual_clamp)]
pub fn sample_to_u8(v: f32) -> u8 {
    // NaN clamps to 0 through the `max`.
    (v.max(0.0).min(1.0) * 255.0).round() as u8
}

#[inline]
pub fn u8_to_sample(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Interleaved 8-bit picture with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_channels(channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} samples, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| u8_to_sample(v)).collect(),
        }
    }
}

/// Interleaved float picture, samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FloatImage {
    /// Builds a float picture, clamping samples into `[0, 1]`. Non-finite samples
    /// are rejected.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        check_channels(channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "float image buffer has {} samples, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("float image contains non-finite samples"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Caller guarantees the buffer length and that samples are finite and in range.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &FloatImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn to_u8(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| sample_to_u8(v)).collect(),
        }
    }

    /// Pixel-wise mean of two pictures of equal dimensions.
    pub fn average(a: &FloatImage, b: &FloatImage) -> Result<FloatImage> {
        if !a.same_dims(b) {
            return Err(Error::invalid("cannot average pictures of different dimensions"));
        }
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| (x + y) * 0.5)
            .collect();
        Ok(FloatImage::from_raw(a.width, a.height, a.channels, data))
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::invalid(format!("unsupported channel count {channels}")))
    }
}

/// Dense per-pixel displacement in pixels (forward flow, frame 0 → frame 1).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::invalid(format!(
                "flow components have {}/{} entries, expected {}",
                u.len(),
                v.len(),
                n
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("flow contains non-finite displacements"));
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub(crate) fn from_raw(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        debug_assert_eq!(u.len(), width * height);
        debug_assert_eq!(v.len(), width * height);
        Self { width, height, u, v }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Sum of absolute forward differences of both components.
    pub fn total_variation(&self) -> f64 {
        let (w, h) = (self.width, self.height);
        let mut tv = 0.0f64;
        for comp in [&self.u, &self.v] {
            for y in 0..h {
                for x in 0..w {
                    let c = comp[y * w + x];
                    if x + 1 < w {
                        tv += (comp[y * w + x + 1] - c).abs() as f64;
                    }
                    if y + 1 < h {
                        tv += (comp[(y + 1) * w + x] - c).abs() as f64;
                    }
                }
            }
        }
        tv
    }
}

/// Dense NCHW float tensor, W fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::invalid(format!(
                "tensor buffer has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                n
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Kernels build outputs through this; length is checked in debug builds only.
    pub(crate) fn from_raw(shape: [usize; 4], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contiguous H×W plane of batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let [_, ch, h, w] = self.shape;
        let start = (n * ch + c) * h * w;
        &self.data[start..start + h * w]
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// 3-channel 8-bit picture → `(1, 3, H, W)` tensor of `sample / 255`.
pub fn image_to_tensor(img: &Image) -> Result<Tensor> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "image_to_tensor needs 3 channels, got {}",
            img.channels()
        )));
    }
    Ok(float_image_to_tensor(&img.to_float()))
}

/// `(1, 3, H, W)` tensor → 8-bit picture via [`sample_to_u8`].
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 3 {
        return Err(Error::invalid(format!(
            "tensor_to_image needs shape (1,3,H,W), got {:?}",
            t.shape()
        )));
    }
    let mut data = vec![0u8; w * h * 3];
    for ch in 0..3 {
        for (i, &v) in t.plane(0, ch).iter().enumerate() {
            data[i * 3 + ch] = sample_to_u8(v);
        }
    }
    Image::new(w, h, 3, data)
}

/// Interleaved float picture → `(1, C, H, W)` tensor.
pub fn float_image_to_tensor(img: &FloatImage) -> Tensor {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0.0f32; w * h * c];
    for (i, px) in img.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * w * h + i] = v;
        }
    }
    Tensor::from_raw([1, c, h, w], data)
}

/// Channel concatenation of equally sized `(1, C, H, W)` tensors.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let [_, _, h, w] = first.shape();
    let mut c_total = 0;
    for t in parts {
        let [n, c, th, tw] = t.shape();
        if n != 1 || th != h || tw != w {
            return Err(Error::invalid(format!(
                "cannot concat {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        c_total += c;
    }
    let mut data = Vec::with_capacity(c_total * h * w);
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_raw([1, c_total, h, w], data))
}
