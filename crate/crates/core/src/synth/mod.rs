//! Synthetic frame triplets with exact midframes, and codec-like block vectors
//! of controllable quality.
//!
//! Patterns are continuous, band-limited functions `F(x, y, c)` sampled at
//! integer pixel positions. For velocity `v`, `I0 = F(p)`, `I1 = F(p − v)` and
//! the ground-truth midframe is `F(p − v/2)`: an analytic shift of the pattern,
//! not a warp of either input.

pub mod oracle;

use std::f32::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mv::{MvRecord, RefSource};
use crate::types::{FloatImage, FlowField};

pub const MV_BLOCK: usize = 16;
pub const MOTION_SCALE: u32 = 4;
/// Highest spatial frequency of any pattern component, cycles per pixel.
pub const MAX_FREQ: f32 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Checkerboard,
    SmoothNoise,
    TextureRamp,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Checkerboard, Pattern::SmoothNoise, Pattern::TextureRamp];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Checkerboard => "checkerboard",
            Pattern::SmoothNoise => "smooth-noise",
            Pattern::TextureRamp => "texture-ramp",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pattern `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pattern: Pattern,
    /// Pixels per frame, frame 0 → frame 1.
    pub velocity: (f32, f32),
    pub width: usize,
    pub height: usize,
    pub mv_noise_sigma: f32,
    pub mv_outlier_rate: f32,
    /// Checkerboard cell pair length in pixels.
    pub checker_period: f32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(pattern: Pattern, velocity: (f32, f32), width: usize, height: usize, seed: u64) -> Self {
        Self {
            pattern,
            velocity,
            width,
            height,
            mv_noise_sigma: 0.0,
            mv_outlier_rate: 0.0,
            checker_period: 16.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (vx, vy) = self.velocity;
        let speed = vx.hypot(vy);
        if speed.is_nan() || speed > MV_BLOCK as f32 {
            return Err(Error::Config(format!("velocity ({vx}, {vy}) exceeds one macroblock")));
        }
        if !(0.0..=1.0).contains(&self.mv_outlier_rate) {
            return Err(Error::Config(format!("outlier rate {} outside [0, 1]", self.mv_outlier_rate)));
        }
        if !(self.mv_noise_sigma >= 0.0 && self.mv_noise_sigma.is_finite()) {
            return Err(Error::Config("mv noise sigma must be >= 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("frame must not be empty".into()));
        }
        if self.checker_period.is_nan() || self.checker_period < 2.0 {
            return Err(Error::Config("checker period must be >= 2".into()));
        }
        Ok(())
    }
}

/// One plane wave `amp · sin(2π (fx x + fy y) + phase)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    fx: f32,
    fy: f32,
    phase: f32,
    amp: f32,
}

/// Continuous pattern with values in `[0, 1]`.
#[derive(Clone, Debug)]
struct Field {
    pattern: Pattern,
    waves: [Vec<Wave>; 3],
    base: [f32; 3],
    period: f32,
    width: f32,
}

const WAVES: usize = 6;

impl Field {
    fn new(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut waves: [Vec<Wave>; 3] = Default::default();
        let mut base = [0.5f32; 3];
        for (c, ws) in waves.iter_mut().enumerate() {
            base[c] = rng.random_range(0.4..0.6);
            let (n, amp_total) = match spec.pattern {
                Pattern::SmoothNoise => (WAVES, 0.38),
                Pattern::TextureRamp => (3, 0.12),
                Pattern::Checkerboard => (0, 0.0),
            };
            for _ in 0..n {
                let f = rng.random_range(0.015..MAX_FREQ);
                let theta = rng.random_range(0.0..TAU);
                ws.push(Wave {
                    fx: f * theta.cos(),
                    fy: f * theta.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amp: amp_total / n as f32,
                });
            }
        }
        Self {
            pattern: spec.pattern,
            waves,
            base,
            period: spec.checker_period,
            width: spec.width as f32,
        }
    }

    fn eval(&self, x: f32, y: f32, c: usize) -> f32 {
        let waves: f32 = self.waves[c]
            .iter()
            .map(|w| w.amp * (TAU * (w.fx * x + w.fy * y) + w.phase).sin())
            .sum();
        let v = match self.pattern {
            Pattern::SmoothNoise => self.base[c] + waves,
            Pattern::Checkerboard => {
                // Soft cells keep the spectrum compact; 0.12 + 0.76·[0, 1].
                let k = 2.0;
                let sx = (k * (TAU * x / self.period).sin()).tanh();
                let sy = (k * (TAU * y / self.period).sin()).tanh();
                let tone = [0.0, 0.08, -0.08][c];
                0.5 + tone + 0.3 * sx * sy
            }
            Pattern::TextureRamp => 0.2 + 0.5 * (x / self.width.max(1.0)) + waves,
        };
        v.clamp(0.0, 1.0)
    }

    fn render(&self, w: usize, h: usize, shift: (f32, f32)) -> FloatImage {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data.push(self.eval(x as f32 - shift.0, y as f32 - shift.1, c));
                }
            }
        }
        FloatImage::new(w, h, 3, data).expect("pattern values are finite")
    }
}

#[derive(Clone, Debug)]
pub struct Triplet {
    pub frame0: FloatImage,
    /// Exact temporal midpoint.
    pub mid: FloatImage,
    pub frame1: FloatImage,
    pub gt_flow: FlowField,
}

pub fn gen_triplet(spec: &SynthSpec) -> Result<Triplet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = Field::new(spec, &mut rng);
    let (vx, vy) = spec.velocity;
    let (w, h) = (spec.width, spec.height);
    Ok(Triplet {
        frame0: field.render(w, h, (0.0, 0.0)),
        mid: field.render(w, h, (vx * 0.5, vy * 0.5)),
        frame1: field.render(w, h, (vx, vy)),
        gt_flow: FlowField::constant(w, h, vx, vy),
    })
}

/// Constant-velocity clip: `frames[k]` is the pattern shifted by `k·v` and
/// `mids[k]` the exact midpoint between frames `k` and `k + 1`.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<FloatImage>,
    pub mids: Vec<FloatImage>,
    pub gt_flow: FlowField,
}

pub fn gen_sequence(spec: &SynthSpec, n_frames: usize) -> Result<Sequence> {
    spec.validate()?;
    if n_frames < 2 {
        return Err(Error::Config("a sequence needs at least 2 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = Field::new(spec, &mut rng);
    let (vx, vy) = spec.velocity;
    let (w, h) = (spec.width, spec.height);
    let at = |t: f32| field.render(w, h, (vx * t, vy * t));
    Ok(Sequence {
        frames: (0..n_frames).map(|k| at(k as f32)).collect(),
        mids: (0..n_frames - 1).map(|k| at(k as f32 + 0.5)).collect(),
        gt_flow: FlowField::constant(w, h, vx, vy),
    })
}

fn to_quarter_pel(px: f32) -> i32 {
    (px * MOTION_SCALE as f32).round() as i32
}

/// One past-reference record per 16×16 block of frame 1. The codec-side
/// displacement is `−flow` (reference position minus current position),
/// perturbed by Gaussian noise and, with probability `mv_outlier_rate`,
/// replaced by a uniform draw in `[−16, 16]²` at least 1 px from the truth.
pub fn gen_block_mvs(gt_flow: &FlowField, spec: &SynthSpec, frame_index: u32) -> Result<Vec<MvRecord>> {
    spec.validate()?;
    // Separate stream from the pattern so MV settings never change the frames.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d76_6e6f_6973_6521);
    let noise = Normal::new(0.0f32, spec.mv_noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let (w, h) = (gt_flow.width(), gt_flow.height());
    let mut out = Vec::new();
    for by in (0..h).step_by(MV_BLOCK) {
        for bx in (0..w).step_by(MV_BLOCK) {
            // Truth at the block centre (clamped inside the frame).
            let (u, v) = gt_flow.at((bx + MV_BLOCK / 2).min(w - 1), (by + MV_BLOCK / 2).min(h - 1));
            let (tx, ty) = (-u, -v);
            let (mut dx, mut dy) = (tx, ty);
            if spec.mv_noise_sigma > 0.0 {
                dx += noise.sample(&mut rng);
                dy += noise.sample(&mut rng);
            }
            if spec.mv_outlier_rate > 0.0 && rng.random::<f32>() < spec.mv_outlier_rate {
                loop {
                    let ox = rng.random_range(-16.0f32..=16.0);
                    let oy = rng.random_range(-16.0f32..=16.0);
                    if (ox - tx).hypot(oy - ty) > 1.0 {
                        (dx, dy) = (ox, oy);
                        break;
                    }
                }
            }
            let (mx, my) = (to_quarter_pel(dx), to_quarter_pel(dy));
            out.push(MvRecord {
                frame_index,
                source: RefSource::Past,
                block_w: MV_BLOCK as u32,
                block_h: MV_BLOCK as u32,
                src_x: bx as i32 + (mx as f32 / MOTION_SCALE as f32).round() as i32,
                src_y: by as i32 + (my as f32 / MOTION_SCALE as f32).round() as i32,
                dst_x: bx as i32,
                dst_y: by as i32,
                flags: "0x0".into(),
                motion_x: mx,
                motion_y: my,
                motion_scale: MOTION_SCALE,
                d_ref: 1,
            });
        }
    }
    Ok(out)
}

/// Seeded evaluation set: patterns cycle, velocities are drawn with magnitude
/// in `[2, 8]` px and uniform direction.
pub fn evaluation_set(n: usize, size: usize, mv_noise_sigma: f32, mv_outlier_rate: f32, seed: u64) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mag = rng.random_range(2.0f32..=8.0);
            let theta = rng.random_range(0.0..TAU);
            let mut s = SynthSpec::new(
                Pattern::ALL[i % Pattern::ALL.len()],
                (mag * theta.cos(), mag * theta.sin()),
                size,
                size,
                rng.random(),
            );
            s.mv_noise_sigma = mv_noise_sigma;
            s.mv_outlier_rate = mv_outlier_rate;
            s
        })
        .collect()
}
