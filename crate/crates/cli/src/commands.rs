use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use mvfi_core::bench::{self, BenchOp, OpShape};
use mvfi_core::metrics::{psnr, ssim};
use mvfi_core::mv::{parse_sidecar, select_vectors, write_sidecar, BlockVector, MvRecord};
use mvfi_core::nnet::unet::{build_unet_seeded, HEAD_NODE};
use mvfi_core::nnet::weights::read_container;
use mvfi_core::nnet::{build_unet_random, fuse_bn, interpolate, load_weights, save_weights, Graph, OpKind, UNetConfig};
use mvfi_core::prealign::{prealign_pair, SmoothingProfile, SmoothingVariant};
use mvfi_core::quant::accum::{build_accum_net, build_residual_net, unit_input};
use mvfi_core::quant::{calibrate, iter_accum_experiment, run_instrumented, OpFilter, WeightGranularity};
use mvfi_core::synth::{evaluation_set, gen_block_mvs, gen_sequence, gen_triplet, SynthSpec};
use mvfi_core::{FloatImage, Image, Tensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;
use crate::io::{
    list_frames, read_image, read_y4m_file, write_flo_file, write_image, write_y4m_file, Y4mSequence, YuvFrame,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Prealign(a) => cmd_prealign(&a),
        Command::Interpolate(a) => cmd_interpolate(&a),
        Command::InitWeights(a) => cmd_init_weights(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Quant(a) => cmd_quant(&a),
        Command::AccumLab(a) => cmd_accum_lab(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, B: Serialize> {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    config: &'a C,
    #[serde(flatten)]
    body: &'a B,
}

/// Writes the JSON report to `path`, or to stdout when no path is given.
fn emit<C: Serialize, B: Serialize>(
    path: Option<&Path>,
    command: &'static str,
    seed: Option<u64>,
    config: &C,
    body: &B,
) -> Result<()> {
    let env = Envelope {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        body,
    };
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            serde_json::to_writer_pretty(&mut f, &env)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &env)?;
            lock.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    ensure!(p.is_file(), "{what} not found: {}", p.display());
    Ok(())
}

fn require_dir(p: &Path, what: &str) -> Result<()> {
    ensure!(p.is_dir(), "{what} directory not found: {}", p.display());
    Ok(())
}

fn prepare_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn prepare_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => prepare_dir(d),
        _ => Ok(()),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

/// Loaded frames with the Y4M frame rate when the input was a Y4M file.
struct Sequence {
    frames: Vec<Image>,
    rate: Option<(usize, usize)>,
}

fn validate_sequence_args(a: &SequenceArgs) -> Result<()> {
    match (&a.frames, &a.y4m) {
        (Some(d), None) => require_dir(d, "frames")?,
        (None, Some(f)) => require_file(f, "Y4M input")?,
        _ => bail!("give exactly one of --frames or --y4m"),
    }
    require_file(&a.mvs, "MV sidecar")
}

fn load_sequence(a: &SequenceArgs) -> Result<Sequence> {
    let (frames, rate) = if let Some(dir) = &a.frames {
        let paths = list_frames(dir)?;
        let frames = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
        (frames, None)
    } else {
        let y = read_y4m_file(a.y4m.as_deref().expect("validated"))?;
        let frames = y.frames.iter().map(YuvFrame::to_rgb).collect::<Result<Vec<_>>>()?;
        (frames, Some(y.rate))
    };
    ensure!(frames.len() >= 2, "need at least 2 frames, found {}", frames.len());
    let (w, h) = (frames[0].width(), frames[0].height());
    for (i, f) in frames.iter().enumerate() {
        ensure!(f.width() == w && f.height() == h, "frame {i} is {}x{}, expected {w}x{h}", f.width(), f.height());
    }
    Ok(Sequence { frames, rate })
}

fn load_records(p: &Path) -> Result<Vec<MvRecord>> {
    let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
    parse_sidecar(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))
}

/// Vectors for pair `(k, k+1)`: past-reference vectors of frame `k+1` with `d_ref = 1`.
fn pair_vectors(records: &[MvRecord], k: usize) -> Vec<BlockVector> {
    select_vectors(records, k as u32 + 1, 1)
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct SynthReport {
    frames: Vec<String>,
    ground_truth: Vec<String>,
    sidecar: String,
    records: usize,
    passthrough_pairs: Vec<usize>,
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    ensure!(a.frames >= 2, "--frames must be at least 2");
    ensure!(a.drop_last < a.frames, "--drop-last must be below --frames");
    let mut spec = SynthSpec::new(a.pattern.pattern(), (a.vx, a.vy), a.width, a.height, a.seed);
    spec.mv_noise_sigma = a.mv_noise;
    spec.mv_outlier_rate = a.outlier_rate;
    spec.validate()?;
    let frames_dir = a.out.join("frames");
    let gt_dir = a.out.join("gt");
    prepare_dir(&gt_dir)?;
    if a.format != FrameFormat::Y4m {
        prepare_dir(&frames_dir)?;
    }

    let seq = gen_sequence(&spec, a.frames)?;
    let mut frame_names = Vec::new();
    match a.format {
        FrameFormat::Y4m => {
            let frames = seq.frames.iter().map(|f| YuvFrame::from_rgb(&f.to_u8())).collect::<Result<Vec<_>>>()?;
            let path = a.out.join("frames.y4m");
            write_y4m_file(&path, &Y4mSequence { frames, rate: (30, 1) })?;
            frame_names.push(file_name(&path));
        }
        fmt => {
            let ext = if fmt == FrameFormat::Png { "png" } else { "ppm" };
            for (k, f) in seq.frames.iter().enumerate() {
                let name = format!("frame_{k:04}.{ext}");
                write_image(&frames_dir.join(&name), &f.to_u8())?;
                frame_names.push(format!("frames/{name}"));
            }
        }
    }
    let mut gt_names = Vec::new();
    for (k, m) in seq.mids.iter().enumerate() {
        let name = format!("mid_{k:04}.png");
        write_image(&gt_dir.join(&name), &m.to_u8())?;
        gt_names.push(format!("gt/{name}"));
    }

    let mut records = Vec::new();
    let first_dropped = a.frames - a.drop_last;
    for k in 1..a.frames {
        // Fresh MV noise per frame; the pattern stream is untouched.
        let mut s = spec.clone();
        s.seed = a.seed.wrapping_add(k as u64);
        let mut recs = gen_block_mvs(&seq.gt_flow, &s, k as u32)?;
        if k >= first_dropped {
            recs.iter_mut().for_each(|r| r.d_ref = 2);
        }
        records.extend(recs);
    }
    let sidecar = a.out.join("mvs.csv");
    let mut f = BufWriter::new(File::create(&sidecar)?);
    write_sidecar(&mut f, &records)?;
    f.flush()?;

    let report = SynthReport {
        frames: frame_names,
        ground_truth: gt_names,
        sidecar: file_name(&sidecar),
        records: records.len(),
        passthrough_pairs: (first_dropped.max(1) - 1..a.frames - 1).collect(),
    };
    emit(Some(&a.out.join("synth.json")), "synth", Some(a.seed), a, &report)
}

// ---------------------------------------------------------------- prealign

#[derive(Serialize)]
struct PairMetrics {
    pair: usize,
    status: &'static str,
    vectors: usize,
    outputs: Vec<String>,
    psnr_blend: Option<f64>,
    ssim_blend: Option<f64>,
    psnr_naive: Option<f64>,
    ssim_naive: Option<f64>,
}

#[derive(Serialize)]
struct PrealignReport {
    profile: &'static str,
    pairs: Vec<PairMetrics>,
    prealigned: usize,
    passthrough: usize,
    mean_psnr_blend: Option<f64>,
    mean_psnr_naive: Option<f64>,
    mean_ssim_blend: Option<f64>,
    mean_ssim_naive: Option<f64>,
}

fn cmd_prealign(a: &PrealignArgs) -> Result<()> {
    validate_sequence_args(&a.seq)?;
    if let Some(gt) = &a.gt {
        require_dir(gt, "ground truth")?;
    }
    prepare_dir(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.join("prealign.json"));
    prepare_parent(&report_path)?;

    let seq = load_sequence(&a.seq)?;
    let records = load_records(&a.seq.mvs)?;
    let gt = match &a.gt {
        Some(d) => {
            let paths = list_frames(d)?;
            ensure!(
                paths.len() >= seq.frames.len() - 1,
                "{} ground-truth frames for {} pairs",
                paths.len(),
                seq.frames.len() - 1
            );
            Some(paths)
        }
        None => None,
    };
    let profile = SmoothingProfile::new(a.profile.variant());

    let pairs = (0..seq.frames.len() - 1)
        .into_par_iter()
        .map(|k| -> Result<PairMetrics> {
            let vectors = pair_vectors(&records, k);
            let mut m = PairMetrics {
                pair: k,
                status: "passthrough",
                vectors: vectors.len(),
                outputs: Vec::new(),
                psnr_blend: None,
                ssim_blend: None,
                psnr_naive: None,
                ssim_naive: None,
            };
            if vectors.is_empty() {
                return Ok(m);
            }
            m.status = "prealigned";
            let (f0, f1) = (seq.frames[k].to_float(), seq.frames[k + 1].to_float());
            let pre = prealign_pair(&f0, &f1, &vectors, &profile)?;
            let blend = pre.blend.to_u8();
            for (name, img) in [("w0", pre.warped0.to_u8()), ("w1", pre.warped1.to_u8()), ("blend", blend.clone())] {
                let file = format!("{name}_{k:04}.png");
                write_image(&a.out.join(&file), &img)?;
                m.outputs.push(file);
            }
            let flo = format!("flow_{k:04}.flo");
            write_flo_file(&a.out.join(&flo), &pre.flow)?;
            m.outputs.push(flo);
            if let Some(paths) = &gt {
                let truth = read_image(&paths[k])?;
                let naive = FloatImage::average(&f0, &f1)?.to_u8();
                m.psnr_blend = Some(psnr(&blend, &truth)?);
                m.ssim_blend = Some(ssim(&blend, &truth)?);
                m.psnr_naive = Some(psnr(&naive, &truth)?);
                m.ssim_naive = Some(ssim(&naive, &truth)?);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;

    let report = PrealignReport {
        profile: a.profile.variant().name(),
        prealigned: pairs.iter().filter(|p| p.status == "prealigned").count(),
        passthrough: pairs.iter().filter(|p| p.status == "passthrough").count(),
        mean_psnr_blend: mean(pairs.iter().filter_map(|p| p.psnr_blend)),
        mean_psnr_naive: mean(pairs.iter().filter_map(|p| p.psnr_naive)),
        mean_ssim_blend: mean(pairs.iter().filter_map(|p| p.ssim_blend)),
        mean_ssim_naive: mean(pairs.iter().filter_map(|p| p.ssim_naive)),
        pairs,
    };
    emit(Some(&report_path), "prealign", None, a, &report)
}

// ---------------------------------------------------------------- network loading

fn count_norms(g: &Graph) -> usize {
    g.nodes().iter().filter(|n| matches!(n.kind, OpKind::BatchNorm { .. })).count()
}

/// Loads `weights` for config `arch`, accepting plain or already-fused files.
/// Returns the graph and whether the file carried batch norms.
fn load_network(arch: &str, weights: &Path) -> Result<(Graph, bool)> {
    let cfg = UNetConfig::by_name(arch)?;
    let bytes = std::fs::read(weights).with_context(|| format!("reading {}", weights.display()))?;
    let names: BTreeSet<String> = read_container(&bytes[..])?.into_iter().map(|t| t.name).collect();
    let plain = build_unet_seeded(&cfg, 0)?;
    let has_norms = plain.params().keys().any(|k| k.contains(".bn_") && names.contains(k));
    let template = if has_norms { plain } else { fuse_bn(&plain)? };
    let g = load_weights(&bytes[..], &template).with_context(|| format!("loading {}", weights.display()))?;
    Ok((g, has_norms))
}

// ---------------------------------------------------------------- interpolate

#[derive(Serialize)]
struct ManifestEntry {
    pair: usize,
    frame0: usize,
    frame1: usize,
    status: &'static str,
    vectors: usize,
    output: Option<String>,
    elapsed_ms: f64,
}

#[derive(Serialize)]
struct Manifest {
    arch: String,
    profile: &'static str,
    fused: bool,
    width: usize,
    height: usize,
    entries: Vec<ManifestEntry>,
    written: usize,
    passthrough: usize,
    y4m: Option<String>,
}

fn cmd_interpolate(a: &InterpolateArgs) -> Result<()> {
    validate_sequence_args(&a.seq)?;
    require_file(&a.weights, "weights")?;
    prepare_dir(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.join("manifest.json"));
    prepare_parent(&report_path)?;
    if let Some(p) = &a.y4m_out {
        prepare_parent(p)?;
    }

    let (g, has_norms) = load_network(&a.arch, &a.weights)?;
    let g = if a.fuse_bn && has_norms { fuse_bn(&g)? } else { g };
    let seq = load_sequence(&a.seq)?;
    let records = load_records(&a.seq.mvs)?;
    let profile = SmoothingProfile::new(a.profile.variant());

    let results = (0..seq.frames.len() - 1)
        .into_par_iter()
        .map(|k| -> Result<(ManifestEntry, Option<Image>)> {
            let t = Instant::now();
            let vectors = pair_vectors(&records, k);
            let mut e = ManifestEntry {
                pair: k,
                frame0: k,
                frame1: k + 1,
                status: "passthrough",
                vectors: vectors.len(),
                output: None,
                elapsed_ms: 0.0,
            };
            if vectors.is_empty() {
                return Ok((e, None));
            }
            let out = interpolate(&seq.frames[k].to_float(), &seq.frames[k + 1].to_float(), &vectors, &g, &profile)?;
            let name = format!("mid_{k:04}.png");
            write_image(&a.out.join(&name), &out.frame)?;
            e.status = "interpolated";
            e.output = Some(name);
            e.elapsed_ms = t.elapsed().as_secs_f64() * 1e3;
            Ok((e, Some(out.frame)))
        })
        .collect::<Result<Vec<_>>>()?;

    let y4m = match &a.y4m_out {
        Some(p) => {
            let mut frames = Vec::with_capacity(2 * seq.frames.len());
            for (k, f) in seq.frames.iter().enumerate() {
                frames.push(YuvFrame::from_rgb(f)?);
                if let Some((_, mid)) = results.get(k) {
                    frames.push(YuvFrame::from_rgb(mid.as_ref().unwrap_or(f))?);
                }
            }
            let (num, den) = seq.rate.unwrap_or((30, 1));
            write_y4m_file(p, &Y4mSequence { frames, rate: (num * 2, den) })?;
            Some(p.display().to_string())
        }
        None => None,
    };

    let entries: Vec<ManifestEntry> = results.into_iter().map(|(e, _)| e).collect();
    let manifest = Manifest {
        arch: a.arch.clone(),
        profile: a.profile.variant().name(),
        fused: !g.nodes().iter().any(|n| matches!(n.kind, OpKind::BatchNorm { .. })),
        width: seq.frames[0].width(),
        height: seq.frames[0].height(),
        written: entries.iter().filter(|e| e.output.is_some()).count(),
        passthrough: entries.iter().filter(|e| e.output.is_none()).count(),
        entries,
        y4m,
    };
    emit(Some(&report_path), "interpolate", None, a, &manifest)
}

// ---------------------------------------------------------------- weights

#[derive(Serialize)]
struct InitReport {
    weights: String,
    params: usize,
    norm_nodes: usize,
    zero_head: bool,
}

fn cmd_init_weights(a: &InitWeightsArgs) -> Result<()> {
    prepare_parent(&a.out)?;
    if let Some(r) = &a.report {
        prepare_parent(r)?;
    }
    let cfg = UNetConfig::by_name(&a.arch)?;
    let g = match a.init {
        InitMode::ZeroHead => build_unet_seeded(&cfg, a.seed)?,
        InitMode::Random => build_unet_random(&cfg, a.seed)?,
    };
    let mut f = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    save_weights(&g, &mut f)?;
    f.flush()?;
    let head = g.param(&format!("{HEAD_NODE}.weight"))?;
    let report = InitReport {
        weights: a.out.display().to_string(),
        params: g.count_params(),
        norm_nodes: count_norms(&g),
        zero_head: head.data.iter().all(|&v| v == 0.0),
    };
    emit(a.report.as_deref(), "init-weights", Some(a.seed), a, &report)
}

/// Deterministic smooth probe for before/after comparisons.
fn ramp_probe(size: usize) -> Tensor {
    let n = size * size;
    let data = (0..6 * n)
        .map(|i| {
            let (c, p) = (i / n, i % n);
            let (x, y) = ((p % size) as f32, (p / size) as f32);
            0.5 + 0.4 * ((x * 0.11 + y * 0.07 + c as f32).sin())
        })
        .collect();
    Tensor::new([1, 6, size, size], data).expect("finite probe")
}

#[derive(Serialize)]
struct FuseReport {
    weights: String,
    norm_nodes_before: usize,
    norm_nodes_after: usize,
    params_before: usize,
    params_after: usize,
    probe_max_abs_diff: f32,
}

fn cmd_fuse(a: &FuseArgs) -> Result<()> {
    require_file(&a.weights, "weights")?;
    prepare_parent(&a.out)?;
    if let Some(r) = &a.report {
        prepare_parent(r)?;
    }
    let (g, has_norms) = load_network(&a.arch, &a.weights)?;
    ensure!(has_norms, "{} holds no batch norm parameters; it is already fused", a.weights.display());
    let fused = fuse_bn(&g)?;
    let probe = ramp_probe(64);
    let diff = g.forward(&probe)?.max_abs_diff(&fused.forward(&probe)?);
    let mut f = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    save_weights(&fused, &mut f)?;
    f.flush()?;
    let report = FuseReport {
        weights: a.out.display().to_string(),
        norm_nodes_before: count_norms(&g),
        norm_nodes_after: count_norms(&fused),
        params_before: g.count_params(),
        params_after: fused.count_params(),
        probe_max_abs_diff: diff,
    };
    emit(a.report.as_deref(), "fuse", None, a, &report)
}

// ---------------------------------------------------------------- quant

#[derive(Serialize)]
struct QuantReport {
    net: QuantNet,
    input_shape: [usize; 4],
    rows: Vec<mvfi_core::quant::InstrumentedRow>,
}

fn cmd_quant(a: &QuantArgs) -> Result<()> {
    if let Some(r) = &a.report {
        prepare_parent(r)?;
    }
    ensure!(a.calib > 0 && a.eval > 0, "--calib and --eval must be positive");
    let filters: Vec<OpFilter> = match &a.filters {
        Some(s) => s.split(';').map(|f| f.parse()).collect::<Result<_, _>>()?,
        None => OpFilter::progression(),
    };
    let g = match a.net {
        QuantNet::Accum => build_accum_net(a.stages, a.amplitude, a.seed)?,
        QuantNet::Residual => build_residual_net(0.25, a.seed)?,
        QuantNet::UnetS | QuantNet::UnetM => {
            ensure!(a.size.is_multiple_of(16), "network inputs must be a multiple of 16, got {}", a.size);
            let cfg = if a.net == QuantNet::UnetS { UNetConfig::anvil_s() } else { UNetConfig::anvil_m() };
            fuse_bn(&build_unet_random(&cfg, a.seed)?)?
        }
    };
    let input = |k: u64| unit_input(g.input_channels(), a.size, a.seed.wrapping_add(k));
    let calib: Vec<Tensor> = (0..a.calib as u64).map(|k| input(100 + k)).collect();
    let eval: Vec<Tensor> = (0..a.eval as u64).map(|k| input(10_000 + k)).collect();
    let granularity = match a.granularity {
        GranularityArg::PerTensor => WeightGranularity::PerTensor,
        GranularityArg::PerChannel => WeightGranularity::PerChannel,
    };
    let spec = calibrate(&g, &calib, a.percentile, granularity)?;
    let rep = run_instrumented(&g, &spec, &eval, &filters)?;
    let report = QuantReport {
        net: a.net,
        input_shape: eval[0].shape(),
        rows: rep.rows,
    };
    emit(a.report.as_deref(), "quant", Some(a.seed), a, &report)
}

#[derive(Serialize)]
struct AccumReport {
    curves: mvfi_core::quant::AccumCurves,
    scaled_below_unit_every_stage: bool,
    scaled_non_increasing: bool,
}

fn cmd_accum_lab(a: &AccumLabArgs) -> Result<()> {
    if let Some(r) = &a.report {
        prepare_parent(r)?;
    }
    let curves = iter_accum_experiment(a.stages, a.amplitude, a.trials, a.seed)?;
    let report = AccumReport {
        scaled_below_unit_every_stage: curves.unit.iter().zip(&curves.scaled).all(|(u, s)| s.cos_sim < u.cos_sim),
        scaled_non_increasing: curves.scaled.windows(2).all(|w| w[1].cos_sim <= w[0].cos_sim),
        curves,
    };
    emit(a.report.as_deref(), "accum-lab", Some(a.seed), a, &report)
}

// ---------------------------------------------------------------- bench

#[derive(Serialize)]
#[serde(untagged)]
enum BenchBody {
    Op {
        threads: usize,
        timing: bench::OpTiming,
    },
    Graph {
        arch: String,
        fused: bool,
        convolution_share_pct: f64,
        report: bench::BenchReport,
    },
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    ensure!(a.threads >= 1, "--threads must be >= 1");
    for p in a.report.iter().chain(&a.csv) {
        prepare_parent(p)?;
    }
    let body = if let Some(op) = &a.op {
        ensure!(a.csv.is_none(), "--csv applies to network profiles only");
        let op = BenchOp::parse(op)?;
        let shape = OpShape {
            in_ch: a.in_ch,
            out_ch: a.out_ch,
            height: a.size,
            width: a.size,
        };
        let (timing, _) = bench::with_threads(a.threads, || bench::bench_op(op, shape, a.warmup, a.iters, a.seed))??;
        BenchBody::Op {
            threads: a.threads,
            timing,
        }
    } else {
        ensure!(a.size.is_multiple_of(16), "network inputs must be a multiple of 16, got {}", a.size);
        let cfg = UNetConfig::by_name(&a.arch)?;
        let g = fuse_bn(&build_unet_seeded(&cfg, a.seed)?)?;
        let shape = [1, g.input_channels(), a.size, a.size];
        let report = bench::with_threads(a.threads, || {
            bench::profile_graph(&g, shape, a.warmup, a.iters, a.seed, a.threads)
        })??;
        let share = report.share("conv") + report.share("conv_transpose");
        if share <= 50.0 {
            eprintln!("soft check: convolution share {share:.1}% is not above 50%");
        }
        if let Some(p) = &a.csv {
            std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
        }
        BenchBody::Graph {
            arch: a.arch.clone(),
            fused: true,
            convolution_share_pct: share,
            report,
        }
    };
    emit(a.report.as_deref(), "bench", Some(a.seed), a, &body)
}

// ---------------------------------------------------------------- ablate

#[derive(Serialize)]
struct AblateRow {
    method: String,
    mean_psnr: f64,
    mean_ssim: f64,
    /// Triplets where this method beats ZOH-only by PSNR.
    wins_vs_zoh: usize,
}

#[derive(Serialize)]
struct AblateReport {
    triplets: usize,
    rows: Vec<AblateRow>,
}

const NAIVE: &str = "naive";
const EXACT: &str = "production-exact-mv";

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    ensure!(a.n > 0, "--n must be positive");
    if let Some(r) = &a.report {
        prepare_parent(r)?;
    }
    let specs = evaluation_set(a.n, a.size, a.mv_noise, a.outlier_rate, a.seed);
    let methods: Vec<String> = std::iter::once(NAIVE.to_string())
        .chain(SmoothingVariant::ALL.iter().map(|v| v.name().to_string()))
        .chain(std::iter::once(EXACT.to_string()))
        .collect();

    let per_triplet = specs
        .par_iter()
        .map(|spec| -> Result<BTreeMap<String, (f64, f64)>> {
            let t = gen_triplet(spec)?;
            let truth = t.mid.to_u8();
            let score = |img: &Image| -> Result<(f64, f64)> { Ok((psnr(img, &truth)?, ssim(img, &truth)?)) };
            let mut out = BTreeMap::new();
            out.insert(NAIVE.to_string(), score(&FloatImage::average(&t.frame0, &t.frame1)?.to_u8())?);
            let vectors = select_vectors(&gen_block_mvs(&t.gt_flow, spec, 1)?, 1, 1);
            for v in SmoothingVariant::ALL {
                let pre = prealign_pair(&t.frame0, &t.frame1, &vectors, &SmoothingProfile::new(v))?;
                out.insert(v.name().to_string(), score(&pre.blend.to_u8())?);
            }
            let mut clean = spec.clone();
            clean.mv_noise_sigma = 0.0;
            clean.mv_outlier_rate = 0.0;
            let exact = select_vectors(&gen_block_mvs(&t.gt_flow, &clean, 1)?, 1, 1);
            let pre = prealign_pair(&t.frame0, &t.frame1, &exact, &SmoothingProfile::production())?;
            out.insert(EXACT.to_string(), score(&pre.blend.to_u8())?);
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let zoh = SmoothingVariant::ZohOnly.name();
    let mut rows: Vec<AblateRow> = methods
        .iter()
        .map(|m| AblateRow {
            method: m.clone(),
            mean_psnr: mean(per_triplet.iter().map(|t| t[m].0)).unwrap_or(f64::NAN),
            mean_ssim: mean(per_triplet.iter().map(|t| t[m].1)).unwrap_or(f64::NAN),
            wins_vs_zoh: per_triplet.iter().filter(|t| t[m].0 > t[zoh].0).count(),
        })
        .collect();
    rows.sort_by(|x, y| y.mean_psnr.total_cmp(&x.mean_psnr));
    let report = AblateReport { triplets: a.n, rows };
    emit(a.report.as_deref(), "ablate", Some(a.seed), a, &report)
}

/// `MVFI_THREADS`, if set, as a positive thread count.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("MVFI_THREADS") {
        Ok(s) => {
            let n: usize = s.trim().parse().with_context(|| format!("MVFI_THREADS={s} is not a count"))?;
            ensure!(n >= 1, "MVFI_THREADS must be at least 1");
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("MVFI_THREADS: {e}"),
    }
}
