//! Iterative-accumulation lab: a state tensor refined as `s ← s + Δ` over
//! several stages, where only the running state has a large dynamic range.
//!
//! Fidelity is read on the accumulated refinement `s_k − s_0`. Plain CosSim of
//! the state itself is scale invariant and dominated by `s_0`, so it cannot
//! show how a coarse Add grid swamps small refinements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::cos_sim_slices;
use crate::nnet::graph::{Graph, OpKind, Src};
use crate::nnet::unet::init_he;
use crate::quant::{calibrate, quantize_graph, OpFilter, WeightGranularity, DEFAULT_PERCENTILE};
use crate::types::Tensor;

const STATE_CH: usize = 4;
const FEAT_CH: usize = 8;
const LAB_SIZE: usize = 32;
/// RMS of the first refinement.
const DELTA_RMS: f32 = 0.25;
/// Coarse-to-fine shrink of each later refinement.
const DELTA_DECAY: f32 = 0.5;

fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> OpKind {
    OpKind::Conv2d {
        in_ch,
        out_ch,
        kernel,
        stride: 1,
        padding: kernel / 2,
    }
}

/// 1×1 conv that copies input channels `from..from + out_ch`.
fn push_select(g: &mut Graph, name: &str, in_ch: usize, from: usize, out_ch: usize) -> Result<Src> {
    let s = g.push(name, conv(in_ch, out_ch, 1), &[Src::Input])?;
    let mut w = vec![0.0; out_ch * in_ch];
    for o in 0..out_ch {
        w[o * in_ch + from + o] = 1.0;
    }
    g.set_param(&format!("{name}.weight"), w)?;
    g.set_param(&format!("{name}.bias"), vec![0.0; out_ch])?;
    Ok(s)
}

fn rms(v: &[f32]) -> f32 {
    ((v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()) as f32
}

/// Multiplies conv `name`'s weight and bias so its output on `x` has the given RMS.
pub fn normalize_conv_rms(g: &mut Graph, name: &str, x: &Tensor, target: f32) -> Result<()> {
    let idx = g
        .node_index(name)
        .ok_or_else(|| Error::Config(format!("no node `{name}`")))?;
    let q = quantize_graph(g, &Default::default(), &OpFilter::none())?;
    let (_, out) = q.forward_capture(x, &[idx])?;
    let current = rms(out[0].data());
    if current == 0.0 {
        return Ok(());
    }
    let k = target / current;
    for suffix in ["weight", "bias"] {
        let key = format!("{name}.{suffix}");
        let data = g.param(&key)?.data.iter().map(|v| v * k).collect();
        g.set_param(&key, data)?;
    }
    Ok(())
}

/// Lab graph: input carries `[state | features]`; stage `i` adds a conv-relu-conv
/// refinement computed from the features only, so its size does not depend on
/// the state amplitude.
fn lab_graph(stages: usize, seed: u64) -> Result<Graph> {
    let in_ch = STATE_CH + FEAT_CH;
    let mut g = Graph::new(in_ch, 1);
    let mut state = push_select(&mut g, "state0", in_ch, 0, STATE_CH)?;
    let feat = push_select(&mut g, "feat", in_ch, STATE_CH, FEAT_CH)?;
    for i in 1..=stages {
        let c1 = g.push(format!("stage{i}.conv1"), conv(FEAT_CH, FEAT_CH, 3), &[feat])?;
        let r = g.push(format!("stage{i}.relu"), OpKind::Relu, &[c1])?;
        let c2 = g.push(format!("stage{i}.conv2"), conv(FEAT_CH, STATE_CH, 3), &[r])?;
        state = g.push(format!("stage{i}.add"), OpKind::Add, &[state, c2])?;
    }
    let selects: Vec<_> = ["state0", "feat"]
        .iter()
        .map(|n| (n.to_string(), g.param(&format!("{n}.weight")).unwrap().data.clone()))
        .collect();
    init_he(&mut g, seed, true);
    for (n, w) in selects {
        g.set_param(&format!("{n}.weight"), w)?;
        g.set_param(&format!("{n}.bias"), vec![0.0; g.param(&format!("{n}.bias"))?.data.len()])?;
    }
    Ok(g)
}

fn lab_input(amplitude: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = LAB_SIZE * LAB_SIZE;
    let mut data = Vec::with_capacity((STATE_CH + FEAT_CH) * plane);
    for _ in 0..STATE_CH * plane {
        data.push(amplitude * rng.random_range(-1.0f32..=1.0));
    }
    for _ in 0..FEAT_CH * plane {
        data.push(rng.random_range(0.0f32..=1.0));
    }
    Tensor::from_raw([1, STATE_CH + FEAT_CH, LAB_SIZE, LAB_SIZE], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub stage: usize,
    pub amplitude: f32,
    /// Mean over trials.
    pub cos_sim: f64,
    pub cos_sim_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccumCurves {
    pub unit: Vec<CurvePoint>,
    pub scaled: Vec<CurvePoint>,
    /// Per-trial CosSim by stage, unit amplitude.
    pub trials_unit: Vec<Vec<f64>>,
    /// Per-trial CosSim by stage, scaled amplitude.
    pub trials_scaled: Vec<Vec<f64>>,
}

/// Per-stage CosSim of the refinement `s_i − s_0` with only the Add quantized.
/// Trial `t` uses seed `seed + t` for both amplitudes, so the pair differs in
/// the state amplitude alone.
fn run_trial(stages: usize, amplitude: f32, seed: u64) -> Result<Vec<f64>> {
    let x_unit = lab_input(1.0, seed);
    let mut g = lab_graph(stages, seed ^ 0x5eed)?;
    for i in 1..=stages {
        let target = DELTA_RMS * DELTA_DECAY.powi(i as i32 - 1);
        normalize_conv_rms(&mut g, &format!("stage{i}.conv2"), &x_unit, target)?;
    }
    let x = lab_input(amplitude, seed);
    let spec = calibrate(&g, std::slice::from_ref(&x), DEFAULT_PERCENTILE, WeightGranularity::PerTensor)?;
    let add = OpFilter::new(&[crate::nnet::graph::OpClass::Add])?;
    let fp = quantize_graph(&g, &spec, &OpFilter::none())?;
    let q = quantize_graph(&g, &spec, &add)?;
    let ids: Vec<usize> = (0..=stages)
        .map(|i| {
            let name = if i == 0 { "state0".to_string() } else { format!("stage{i}.add") };
            g.node_index(&name).expect("lab node")
        })
        .collect();
    let (_, ref_states) = fp.forward_capture(&x, &ids)?;
    let (_, q_states) = q.forward_capture(&x, &ids)?;
    let s0 = ref_states[0].data();
    Ok((1..=stages)
        .map(|i| {
            let dr: Vec<f32> = ref_states[i].data().iter().zip(s0).map(|(a, b)| a - b).collect();
            let dq: Vec<f32> = q_states[i].data().iter().zip(s0).map(|(a, b)| a - b).collect();
            cos_sim_slices(&dq, &dr)
        })
        .collect())
}

fn summarize(trials: &[Vec<f64>], amplitude: f32) -> Vec<CurvePoint> {
    let stages = trials.first().map_or(0, Vec::len);
    (0..stages)
        .map(|s| {
            let col: Vec<f64> = trials.iter().map(|t| t[s]).collect();
            CurvePoint {
                stage: s + 1,
                amplitude,
                cos_sim: col.iter().sum::<f64>() / col.len() as f64,
                cos_sim_min: col.iter().copied().fold(f64::INFINITY, f64::min),
            }
        })
        .collect()
}

pub fn iter_accum_experiment(stages: usize, state_amplitude: f32, trials: usize, seed: u64) -> Result<AccumCurves> {
    if stages == 0 || trials == 0 {
        return Err(Error::invalid("iter_accum needs at least one stage and one trial"));
    }
    if !(state_amplitude > 0.0 && state_amplitude.is_finite()) {
        return Err(Error::invalid("state amplitude must be positive"));
    }
    let mut trials_unit = Vec::with_capacity(trials);
    let mut trials_scaled = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        trials_unit.push(run_trial(stages, 1.0, seed.wrapping_add(t))?);
        trials_scaled.push(run_trial(stages, state_amplitude, seed.wrapping_add(t))?);
    }
    Ok(AccumCurves {
        unit: summarize(&trials_unit, 1.0),
        scaled: summarize(&trials_scaled, state_amplitude),
        trials_unit,
        trials_scaled,
    })
}

/// Frame-like 6-channel network with conv blocks and a `stages`-deep
/// accumulating Add on a state of peak magnitude about `amplitude`.
pub fn build_accum_net(stages: usize, amplitude: f32, seed: u64) -> Result<Graph> {
    const W: usize = 16;
    let mut g = Graph::new(6, 1);
    let stem = g.push("stem", conv(6, W, 3), &[Src::Input])?;
    let feat = g.push("stem.relu", OpKind::Relu, &[stem])?;
    let mut state = g.push("state0", conv(W, STATE_CH, 3), &[feat])?;
    for i in 1..=stages {
        let c1 = g.push(format!("stage{i}.conv1"), conv(W, W, 3), &[feat])?;
        let r = g.push(format!("stage{i}.relu"), OpKind::Relu, &[c1])?;
        let c2 = g.push(format!("stage{i}.conv2"), conv(W, STATE_CH, 3), &[r])?;
        state = g.push(format!("stage{i}.add"), OpKind::Add, &[state, c2])?;
    }
    init_he(&mut g, seed, true);
    let probe = unit_input(6, LAB_SIZE, seed ^ 0xface);
    // Uniform-like state of peak ≈ amplitude has RMS ≈ amplitude / √3.
    normalize_conv_rms(&mut g, "state0", &probe, amplitude / 3f32.sqrt())?;
    for i in 1..=stages {
        normalize_conv_rms(&mut g, &format!("stage{i}.conv2"), &probe, DELTA_RMS * DELTA_DECAY.powi(i as i32 - 1))?;
    }
    Ok(g)
}

/// `base + residual` in one pass: a 1×1 selection of the first three input
/// channels plus a conv block whose output peaks at `residual_peak`.
pub fn build_residual_net(residual_peak: f32, seed: u64) -> Result<Graph> {
    let mut g = Graph::new(6, 1);
    let base = push_select(&mut g, "base", 6, 0, 3)?;
    let base_w = g.param("base.weight")?.data.clone();
    let c1 = g.push("res.conv1", conv(6, 16, 3), &[Src::Input])?;
    let r = g.push("res.relu", OpKind::Relu, &[c1])?;
    let c2 = g.push("res.conv2", conv(16, 3, 3), &[r])?;
    g.push("out", OpKind::Add, &[base, c2])?;
    init_he(&mut g, seed, true);
    g.set_param("base.weight", base_w)?;
    g.set_param("base.bias", vec![0.0; 3])?;
    let probe = unit_input(6, LAB_SIZE, seed ^ 0xbeef);
    let idx = g.node_index("res.conv2").expect("residual conv");
    let (_, out) = quantize_graph(&g, &Default::default(), &OpFilter::none())?.forward_capture(&probe, &[idx])?;
    let peak = out[0].data().iter().fold(0f32, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        let k = residual_peak / peak;
        for key in ["res.conv2.weight", "res.conv2.bias"] {
            let data = g.param(key)?.data.iter().map(|v| v * k).collect();
            g.set_param(key, data)?;
        }
    }
    Ok(g)
}

/// Uniform `[0, 1]` tensor of shape `(1, ch, size, size)`.
pub fn unit_input(ch: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_raw(
        [1, ch, size, size],
        (0..ch * size * size).map(|_| rng.random_range(0.0f32..=1.0)).collect(),
    )
}
