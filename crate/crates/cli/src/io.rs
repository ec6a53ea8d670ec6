//! Frame and flow file formats.
//!
//! Y4M sequences are 8-bit 4:2:0. RGB ↔ YCbCr uses BT.601 limited range:
//!
//! ```text
//! Y  =  16 + ( 65.481 R + 128.553 G +  24.966 B) / 255
//! Cb = 128 + (−37.797 R −  74.203 G + 112.000 B) / 255
//! Cr = 128 + (112.000 R −  93.786 G −  18.214 B) / 255
//!
//! R = 1.164383 (Y − 16)                       + 1.596027 (Cr − 128)
//! G = 1.164383 (Y − 16) − 0.391762 (Cb − 128) − 0.812968 (Cr − 128)
//! B = 1.164383 (Y − 16) + 2.017232 (Cb − 128)
//! ```
//!
//! Chroma is the mean of each 2×2 luma cell on write and nearest-upsampled on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mvfi_core::{FlowField, Image};

pub const FRAME_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::new(w as usize, h as usize, 3, img.into_raw())?)
}

/// Writes PNG or binary PPM according to the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    ensure!(img.channels() == 3, "only RGB frames can be written");
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .context("frame buffer size")?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Frame files of `dir` in file-name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// One 8-bit 4:2:0 picture; chroma planes are `⌈w/2⌉ × ⌈h/2⌉`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct YuvFrame {
    pub width: usize,
    pub height: usize,
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

fn chroma_dims(w: usize, h: usize) -> (usize, usize) {
    (w.div_ceil(2), h.div_ceil(2))
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

impl YuvFrame {
    pub fn from_rgb(img: &Image) -> Result<Self> {
        ensure!(img.channels() == 3, "Y4M frames need RGB input");
        let (w, h) = (img.width(), img.height());
        let (cw, ch) = chroma_dims(w, h);
        let mut y = vec![0u8; w * h];
        let mut cb = vec![0f64; w * h];
        let mut cr = vec![0f64; w * h];
        for py in 0..h {
            for px in 0..w {
                let r = img.get(px, py, 0) as f64;
                let g = img.get(px, py, 1) as f64;
                let b = img.get(px, py, 2) as f64;
                let i = py * w + px;
                y[i] = to_u8(16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
                cb[i] = 128.0 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255.0;
                cr[i] = 128.0 + (112.0 * r - 93.786 * g - 18.214 * b) / 255.0;
            }
        }
        let mut u = vec![0u8; cw * ch];
        let mut v = vec![0u8; cw * ch];
        for cy in 0..ch {
            for cx in 0..cw {
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
                for py in 2 * cy..(2 * cy + 2).min(h) {
                    for px in 2 * cx..(2 * cx + 2).min(w) {
                        su += cb[py * w + px];
                        sv += cr[py * w + px];
                        n += 1.0;
                    }
                }
                u[cy * cw + cx] = to_u8(su / n);
                v[cy * cw + cx] = to_u8(sv / n);
            }
        }
        Ok(Self { width: w, height: h, y, u, v })
    }

    pub fn to_rgb(&self) -> Result<Image> {
        let (w, h) = (self.width, self.height);
        let (cw, _) = chroma_dims(w, h);
        let mut out = Vec::with_capacity(w * h * 3);
        for py in 0..h {
            for px in 0..w {
                let c = (py / 2) * cw + px / 2;
                let yy = 1.164383 * (self.y[py * w + px] as f64 - 16.0);
                let cb = self.u[c] as f64 - 128.0;
                let cr = self.v[c] as f64 - 128.0;
                out.push(to_u8(yy + 1.596027 * cr));
                out.push(to_u8(yy - 0.391762 * cb - 0.812968 * cr));
                out.push(to_u8(yy + 2.017232 * cb));
            }
        }
        Ok(Image::new(w, h, 3, out)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Y4mSequence {
    pub frames: Vec<YuvFrame>,
    /// Frame rate as `(numerator, denominator)`.
    pub rate: (usize, usize),
}

pub fn read_y4m<R: Read>(r: R) -> Result<Y4mSequence> {
    let mut dec = y4m::decode(r).map_err(|e| anyhow::anyhow!("y4m header: {e}"))?;
    let colorspace = dec.get_colorspace();
    match colorspace {
        y4m::Colorspace::C420
        | y4m::Colorspace::C420jpeg
        | y4m::Colorspace::C420mpeg2
        | y4m::Colorspace::C420paldv => {}
        other => bail!("unsupported Y4M colorspace {other:?}; 8-bit 4:2:0 expected"),
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    let mut frames = Vec::new();
    loop {
        match dec.read_frame() {
            Ok(f) => frames.push(YuvFrame {
                width: w,
                height: h,
                y: f.get_y_plane().to_vec(),
                u: f.get_u_plane().to_vec(),
                v: f.get_v_plane().to_vec(),
            }),
            Err(y4m::Error::EOF) => break,
            Err(e) => bail!("y4m frame {}: {e}", frames.len()),
        }
    }
    Ok(Y4mSequence {
        frames,
        rate: (rate.num, rate.den),
    })
}

pub fn write_y4m<W: Write>(w: W, seq: &Y4mSequence) -> Result<()> {
    let first = seq.frames.first().context("cannot write an empty Y4M sequence")?;
    let mut enc = y4m::encode(first.width, first.height, y4m::Ratio::new(seq.rate.0, seq.rate.1))
        .with_colorspace(y4m::Colorspace::C420jpeg)
        .write_header(w)
        .map_err(|e| anyhow::anyhow!("y4m header: {e}"))?;
    for f in &seq.frames {
        ensure!(
            f.width == first.width && f.height == first.height,
            "Y4M frames must share dimensions"
        );
        enc.write_frame(&y4m::Frame::new([&f.y, &f.u, &f.v], None))
            .map_err(|e| anyhow::anyhow!("y4m frame: {e}"))?;
    }
    Ok(())
}

pub fn read_y4m_file(path: &Path) -> Result<Y4mSequence> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_y4m(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_y4m_file(path: &Path, seq: &Y4mSequence) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_y4m(&mut f, seq)?;
    f.flush()?;
    Ok(())
}

const FLO_TAG: f32 = 202021.25;

/// Middlebury `.flo`: tag, width, height, then interleaved `(u, v)` rows, little endian.
pub fn write_flo<W: Write>(mut w: W, flow: &FlowField) -> Result<()> {
    w.write_all(&FLO_TAG.to_le_bytes())?;
    w.write_all(&(flow.width() as i32).to_le_bytes())?;
    w.write_all(&(flow.height() as i32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(flow.u().len() * 8);
    for (u, v) in flow.u().iter().zip(flow.v()) {
        buf.extend_from_slice(&u.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<R: Read>(mut r: R) -> Result<FlowField> {
    let mut word = [0u8; 4];
    let mut next = |r: &mut R| -> Result<[u8; 4]> {
        r.read_exact(&mut word).context("truncated .flo")?;
        Ok(word)
    };
    ensure!(f32::from_le_bytes(next(&mut r)?) == FLO_TAG, "not a .flo file");
    let w = i32::from_le_bytes(next(&mut r)?);
    let h = i32::from_le_bytes(next(&mut r)?);
    ensure!(w > 0 && h > 0, "bad .flo dimensions {w}x{h}");
    let n = (w * h) as usize;
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).context("truncated .flo payload")?;
    let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let u = vals.iter().step_by(2).copied().collect();
    let v = vals.iter().skip(1).step_by(2).copied().collect();
    Ok(FlowField::new(w as usize, h as usize, u, v)?)
}

pub fn write_flo_file(path: &Path, flow: &FlowField) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_flo(&mut f, flow)?;
    f.flush()?;
    Ok(())
}
