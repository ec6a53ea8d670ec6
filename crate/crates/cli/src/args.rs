use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvfi_core::prealign::SmoothingVariant;
use mvfi_core::synth::Pattern;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "mvfi",
    version,
    about = "Frame interpolation from codec motion vectors",
    after_help = "Any subcommand accepts --config FILE with `key = value` lines; flags on the command line win.\n\
                  MVFI_THREADS caps worker threads (default: all cores)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a seeded synthetic clip with ground-truth midframes and an MV sidecar
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Warp each frame pair to the temporal midpoint and write W0/W1/blend frames and flow
    #[command(args_override_self = true)]
    Prealign(PrealignArgs),
    /// Write interpolated midframes: MV blend plus the network residual
    #[command(args_override_self = true)]
    Interpolate(InterpolateArgs),
    /// Write a fresh weights file for a network config
    #[command(args_override_self = true)]
    InitWeights(InitWeightsArgs),
    /// Fold batch norms into the preceding convolutions and save the result
    #[command(args_override_self = true)]
    Fuse(FuseArgs),
    /// Progressive W8A8 simulation: CosSim per quantized operator set
    #[command(args_override_self = true)]
    Quant(QuantArgs),
    /// Quantization error of an iteratively accumulated state, unit vs large amplitude
    #[command(args_override_self = true)]
    AccumLab(AccumLabArgs),
    /// Time operators or profile every node of a network
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Compare smoothing profiles on a seeded synthetic set
    #[command(args_override_self = true)]
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileArg {
    Zoh,
    V1,
    Obmc,
    Production,
}

impl ProfileArg {
    pub fn variant(self) -> SmoothingVariant {
        match self {
            ProfileArg::Zoh => SmoothingVariant::ZohOnly,
            ProfileArg::V1 => SmoothingVariant::V1Legacy,
            ProfileArg::Obmc => SmoothingVariant::ObmcCosine,
            ProfileArg::Production => SmoothingVariant::Production,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternArg {
    SmoothNoise,
    Checkerboard,
    TextureRamp,
}

impl PatternArg {
    pub fn pattern(self) -> Pattern {
        match self {
            PatternArg::SmoothNoise => Pattern::SmoothNoise,
            PatternArg::Checkerboard => Pattern::Checkerboard,
            PatternArg::TextureRamp => Pattern::TextureRamp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Png,
    Ppm,
    Y4m,
}

/// A frame sequence plus its sidecar. Frame numbers in the sidecar count input
/// frames from 0; pair `(k, k+1)` uses the past-reference vectors of frame `k+1`.
#[derive(Args, Clone, Debug, Serialize)]
pub struct SequenceArgs {
    /// Directory of PNG/PPM frames, read in file-name order
    #[arg(long, required_unless_present = "y4m", conflicts_with = "y4m")]
    pub frames: Option<PathBuf>,
    /// 8-bit 4:2:0 Y4M sequence
    #[arg(long)]
    pub y4m: Option<PathBuf>,
    /// Motion-vector sidecar CSV
    #[arg(long)]
    pub mvs: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PatternArg::SmoothNoise)]
    pub pattern: PatternArg,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Horizontal motion in px per frame
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub vx: f32,
    /// Vertical motion in px per frame
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    pub vy: f32,
    #[arg(long, default_value_t = 3)]
    pub frames: usize,
    /// Gaussian MV noise in px
    #[arg(long, default_value_t = 0.0)]
    pub mv_noise: f32,
    /// Probability that a block vector is replaced by a random outlier
    #[arg(long, default_value_t = 0.0)]
    pub outlier_rate: f32,
    /// Give the vectors of the last N frames d_ref 2, so those pairs pass through
    #[arg(long, default_value_t = 0)]
    pub drop_last: usize,
    #[arg(long, value_enum, default_value_t = FrameFormat::Png)]
    pub format: FrameFormat,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct PrealignArgs {
    #[command(flatten)]
    pub seq: SequenceArgs,
    #[arg(long, value_enum, default_value_t = ProfileArg::Production)]
    pub profile: ProfileArg,
    /// Directory of ground-truth midframes; the k-th file belongs to pair k
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Report path (default: OUT/prealign.json)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub seq: SequenceArgs,
    /// Weights container; plain or already fused
    #[arg(long)]
    pub weights: PathBuf,
    /// Network config: s or m
    #[arg(long, default_value = "s")]
    pub arch: String,
    #[arg(long, value_enum, default_value_t = ProfileArg::Production)]
    pub profile: ProfileArg,
    /// Fold batch norms into convolutions before inference
    #[arg(long)]
    pub fuse_bn: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the doubled-rate sequence here; passthrough pairs repeat the earlier frame
    #[arg(long)]
    pub y4m_out: Option<PathBuf>,
    /// Manifest path (default: OUT/manifest.json)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// He convolutions, identity norms, zero head: output equals the MV blend
    ZeroHead,
    /// Random norms fitted to a probe and a small non-zero head
    Random,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct InitWeightsArgs {
    #[arg(long, default_value = "s")]
    pub arch: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitMode::ZeroHead)]
    pub init: InitMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct FuseArgs {
    #[arg(long, default_value = "s")]
    pub arch: String,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantNet {
    /// Conv blocks feeding a multi-stage accumulating Add
    Accum,
    /// Single-pass base + residual
    Residual,
    UnetS,
    UnetM,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GranularityArg {
    PerTensor,
    PerChannel,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct QuantArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = QuantNet::Accum)]
    pub net: QuantNet,
    /// Accumulation stages of the accum net
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    /// State amplitude of the accum net
    #[arg(long, default_value_t = 19.0)]
    pub amplitude: f32,
    #[arg(long, default_value_t = 4)]
    pub calib: usize,
    #[arg(long, default_value_t = 4)]
    pub eval: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = mvfi_core::quant::DEFAULT_PERCENTILE)]
    pub percentile: f64,
    #[arg(long, value_enum, default_value_t = GranularityArg::PerTensor)]
    pub granularity: GranularityArg,
    /// Semicolon-separated filters, e.g. `none;conv;conv+add;full` (default)
    #[arg(long)]
    pub filters: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct AccumLabArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value_t = 19.0)]
    pub amplitude: f32,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub seed: u64,
    /// Benchmark a single operator instead of a network
    /// (conv3x3, conv3x3_s2, conv_transpose2x2, conv1x1, relu, add)
    #[arg(long)]
    pub op: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub in_ch: usize,
    #[arg(long, default_value_t = 16)]
    pub out_ch: usize,
    #[arg(long, default_value = "s")]
    pub arch: String,
    /// Square input size; networks need a multiple of 16
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = mvfi_core::bench::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = mvfi_core::bench::DEFAULT_ITERS)]
    pub iters: usize,
    /// Kernel threads; 1 keeps timings free of scheduling effects
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write per-node timings as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mv_noise: f32,
    #[arg(long, default_value_t = 0.05)]
    pub outlier_rate: f32,
    #[arg(long)]
    pub report: Option<PathBuf>,
}
