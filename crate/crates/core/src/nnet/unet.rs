//! Asymmetric 4-level residual U-Net over the prealigned 6-channel pair.
//!
//! Layout (widths `c0..c3`):
//!
//! ```text
//! stem     conv3x3 6→c0, relu
//! enc0     enc_blocks[0] × ResBlock(c0)                      full resolution
//! enc1..3  conv3x3/2 c(i-1)→ci, relu, enc_blocks[i] × ResBlock(ci)
//! bottle   conv3x3/2 c3→c3, relu, bottleneck_blocks × ResBlock(c3)   1/16
//! dec3..0  convT2x2/2 → ci, add(enc_i), dec_blocks[i] × ResBlock(ci)
//! head     conv1x1 c0→3, zero weights and bias
//! ```
//!
//! ResBlock is conv-bn-relu-conv-bn with an element-wise add of its input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nnet::graph::{ExecHook, Graph, OpKind, Src};
use crate::nnet::kernels;
use crate::types::Tensor;

pub const INPUT_CHANNELS: usize = 6;
pub const OUTPUT_CHANNELS: usize = 3;
pub const SPATIAL_MULTIPLE: usize = 16;
pub const HEAD_NODE: &str = "head";
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub channels: [usize; 4],
    pub enc_blocks: [usize; 4],
    pub bottleneck_blocks: usize,
    pub dec_blocks: [usize; 4],
}

impl UNetConfig {
    /// 855K-parameter variant.
    pub fn anvil_s() -> Self {
        Self {
            channels: [16, 32, 64, 64],
            enc_blocks: [1, 1, 1, 2],
            bottleneck_blocks: 4,
            dec_blocks: [1; 4],
        }
    }

    /// 2.66M-parameter variant.
    pub fn anvil_m() -> Self {
        Self {
            channels: [16, 32, 96, 96],
            enc_blocks: [1, 1, 2, 2],
            bottleneck_blocks: 8,
            dec_blocks: [1; 4],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "s" | "S" | "anvil-s" => Ok(Self::anvil_s()),
            "m" | "M" | "anvil-m" => Ok(Self::anvil_m()),
            _ => Err(Error::Config(format!("unknown network config `{name}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config(format!("channel widths must be positive: {:?}", self.channels)));
        }
        Ok(())
    }
}

fn conv3(in_ch: usize, out_ch: usize, stride: usize) -> OpKind {
    OpKind::Conv2d {
        in_ch,
        out_ch,
        kernel: 3,
        stride,
        padding: 1,
    }
}

fn res_block(g: &mut Graph, prefix: &str, ch: usize, x: Src) -> Result<Src> {
    let bn = OpKind::BatchNorm { channels: ch, eps: BN_EPS };
    let c1 = g.push(format!("{prefix}.conv1"), conv3(ch, ch, 1), &[x])?;
    let b1 = g.push(format!("{prefix}.bn1"), bn, &[c1])?;
    let r = g.push(format!("{prefix}.relu"), OpKind::Relu, &[b1])?;
    let c2 = g.push(format!("{prefix}.conv2"), conv3(ch, ch, 1), &[r])?;
    let b2 = g.push(format!("{prefix}.bn2"), bn, &[c2])?;
    g.push(format!("{prefix}.add"), OpKind::Add, &[x, b2])
}

/// Builds the network with He-initialised convolutions, identity batch norm
/// and a zero head, so a fresh network predicts a zero residual.
pub fn build_unet(cfg: &UNetConfig) -> Result<Graph> {
    build_unet_seeded(cfg, 0)
}

pub fn build_unet_seeded(cfg: &UNetConfig, seed: u64) -> Result<Graph> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut g = Graph::new(INPUT_CHANNELS, SPATIAL_MULTIPLE);

    let stem = g.push("stem", conv3(INPUT_CHANNELS, c[0], 1), &[Src::Input])?;
    let mut x = g.push("stem.relu", OpKind::Relu, &[stem])?;

    let mut skips = Vec::with_capacity(4);
    for level in 0..4 {
        if level > 0 {
            let d = g.push(format!("down{level}"), conv3(c[level - 1], c[level], 2), &[x])?;
            x = g.push(format!("down{level}.relu"), OpKind::Relu, &[d])?;
        }
        for b in 0..cfg.enc_blocks[level] {
            x = res_block(&mut g, &format!("enc{level}.rb{b}"), c[level], x)?;
        }
        skips.push(x);
    }

    let d = g.push("down4", conv3(c[3], c[3], 2), &[x])?;
    x = g.push("down4.relu", OpKind::Relu, &[d])?;
    for b in 0..cfg.bottleneck_blocks {
        x = res_block(&mut g, &format!("bottleneck.rb{b}"), c[3], x)?;
    }

    let mut width = c[3];
    for level in (0..4).rev() {
        let up = g.push(
            format!("up{level}"),
            OpKind::ConvTranspose2d {
                in_ch: width,
                out_ch: c[level],
            },
            &[x],
        )?;
        x = g.push(format!("skip{level}"), OpKind::Add, &[up, skips[level]])?;
        for b in 0..cfg.dec_blocks[level] {
            x = res_block(&mut g, &format!("dec{level}.rb{b}"), c[level], x)?;
        }
        width = c[level];
    }

    g.push(
        HEAD_NODE,
        OpKind::Conv2d {
            in_ch: c[0],
            out_ch: OUTPUT_CHANNELS,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        &[x],
    )?;

    init_he(&mut g, seed, false);
    Ok(g)
}

/// He-normal conv weights and small biases. The head stays zero unless `include_head`.
pub fn init_he(g: &mut Graph, seed: u64, include_head: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = g.nodes().to_vec();
    for n in nodes {
        if n.name == HEAD_NODE && !include_head {
            continue;
        }
        let fan_in = match n.kind {
            OpKind::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            OpKind::ConvTranspose2d { in_ch, .. } => in_ch,
            _ => continue,
        };
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        let params = g.params_mut();
        let w = params.get_mut(&format!("{}.weight", n.name)).expect("conv weight");
        for v in &mut w.data {
            *v = normal.sample(&mut rng);
        }
        let b = params.get_mut(&format!("{}.bias", n.name)).expect("conv bias");
        for v in &mut b.data {
            *v = rng.random_range(-0.05..0.05);
        }
    }
}

/// Random running statistics and affine terms for every batch norm node.
/// The second norm of each ResBlock gets a small gain so deep stacks stay bounded.
pub fn randomize_batch_norm(g: &mut Graph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = g.nodes().to_vec();
    for n in nodes {
        if !matches!(n.kind, OpKind::BatchNorm { .. }) {
            continue;
        }
        let gain = if n.name.ends_with(".bn2") { 0.3 } else { 1.0 };
        let params = g.params_mut();
        for (suffix, lo, hi) in [
            ("bn_gamma", 0.5 * gain, 1.5 * gain),
            ("bn_beta", -0.1, 0.1),
            ("bn_mean", -0.2, 0.2),
            ("bn_var", 0.5, 2.0),
        ] {
            let p = params.get_mut(&format!("{}.{suffix}", n.name)).expect("bn param");
            for v in &mut p.data {
                *v = rng.random_range(lo..hi);
            }
        }
    }
}

/// Sets every norm's running mean and variance to the per-channel statistics
/// of its actual input on `x`, as training would leave them. Later norms see
/// the already-updated earlier ones, all in a single forward pass.
pub fn fit_batch_norm_stats(g: &mut Graph, x: &Tensor) -> Result<()> {
    struct Fit<'a> {
        g: &'a Graph,
        pending: Option<(Tensor, Vec<f32>, Vec<f32>)>,
        stats: BTreeMap<usize, (Vec<f32>, Vec<f32>)>,
    }
    impl ExecHook for Fit<'_> {
        fn map_input(&mut self, node: usize, _src: Src, value: &Tensor) -> Option<Tensor> {
            if let OpKind::BatchNorm { .. } = self.g.nodes()[node].kind {
                let [n, c, h, w] = value.shape();
                let count = (n * h * w) as f64;
                let (mut mean, mut var) = (vec![0f32; c], vec![0f32; c]);
                for ch in 0..c {
                    let vals = (0..n).flat_map(|b| value.plane(b, ch).iter().map(|&v| v as f64));
                    let m = vals.clone().sum::<f64>() / count;
                    let v = vals.map(|x| (x - m) * (x - m)).sum::<f64>() / count;
                    mean[ch] = m as f32;
                    var[ch] = v as f32;
                }
                self.pending = Some((value.clone(), mean, var));
            }
            None
        }

        fn map_output(&mut self, node: usize, value: Tensor) -> Tensor {
            let Some((input, mean, var)) = self.pending.take() else {
                return value;
            };
            let OpKind::BatchNorm { eps, .. } = self.g.nodes()[node].kind else {
                unreachable!("pending stats belong to a batch norm");
            };
            let name = &self.g.nodes()[node].name;
            let p = |s: &str| &self.g.params()[&format!("{name}.{s}")].data;
            let out = kernels::batch_norm(&input, p("bn_gamma"), p("bn_beta"), &mean, &var, eps)
                .expect("shapes validated by the first evaluation");
            self.stats.insert(node, (mean, var));
            out
        }
    }

    let mut fit = Fit {
        g,
        pending: None,
        stats: BTreeMap::new(),
    };
    g.forward_with(x, &mut fit)?;
    let stats = fit.stats;
    for (idx, (mean, var)) in stats {
        let name = g.nodes()[idx].name.clone();
        g.set_param(&format!("{name}.bn_mean"), mean)?;
        g.set_param(&format!("{name}.bn_var"), var)?;
    }
    Ok(())
}

/// Rescales the head so the largest residual magnitude on `x` equals `peak`.
/// Random trunks produce outputs far larger than a trained residual predictor;
/// this brings a random network back to a plausible output range.
pub fn scale_head(g: &mut Graph, x: &Tensor, peak: f32) -> Result<()> {
    let y = g.forward(x)?;
    let current = y.data().iter().fold(0f32, |a, v| a.max(v.abs()));
    if current == 0.0 {
        return Ok(());
    }
    let k = peak / current;
    for suffix in ["weight", "bias"] {
        let key = format!("{HEAD_NODE}.{suffix}");
        let data = g.param(&key)?.data.iter().map(|v| v * k).collect();
        g.set_param(&key, data)?;
    }
    Ok(())
}

/// Residual peak of [`build_unet_random`] on its probe input.
pub const RANDOM_HEAD_PEAK: f32 = 0.5;

/// A random network in a trained-like operating range: He convolutions
/// (head included), random norm affine terms with running statistics fitted to
/// a seeded uniform 6×64×64 probe, and the head scaled to [`RANDOM_HEAD_PEAK`].
pub fn build_unet_random(cfg: &UNetConfig, seed: u64) -> Result<Graph> {
    let mut g = build_unet_seeded(cfg, seed)?;
    init_he(&mut g, seed.wrapping_add(1), true);
    randomize_batch_norm(&mut g, seed.wrapping_add(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let probe = Tensor::new(
        [1, INPUT_CHANNELS, 64, 64],
        (0..INPUT_CHANNELS * 64 * 64).map(|_| rng.random_range(0.0f32..=1.0)).collect(),
    )?;
    fit_batch_norm_stats(&mut g, &probe)?;
    scale_head(&mut g, &probe, RANDOM_HEAD_PEAK)?;
    Ok(g)
}
