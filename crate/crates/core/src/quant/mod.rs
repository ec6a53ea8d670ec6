//! W8A8 post-training quantization simulator.
//!
//! Quantization is symmetric (zero point 0) with round-half-to-even.
//! Activations clamp to `[-128, 127]`, weights to `[-127, 127]`. A filtered
//! node has its inputs, outputs and (for convolutions) weights snapped to the
//! int8 grid; everything else runs in f32.

pub mod accum;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::cos_sim;
use crate::nnet::graph::{ExecHook, Graph, OpClass, OpKind, Src};
use crate::nnet::int8::{quantize_value, ACT_MAX, ACT_MIN, WEIGHT_MAX};
use crate::types::Tensor;

pub use accum::{iter_accum_experiment, AccumCurves, CurvePoint};

pub const DEFAULT_PERCENTILE: f64 = 99.99;
/// Activation-scale key of the graph input.
pub const INPUT_KEY: &str = "input";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGranularity {
    #[default]
    PerTensor,
    PerChannel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Node output name (or [`INPUT_KEY`]) → activation scale.
    pub activations: BTreeMap<String, f32>,
    /// Conv node name → one scale, or one per output channel.
    pub weights: BTreeMap<String, Vec<f32>>,
    pub granularity: WeightGranularity,
}

/// Which operator classes get quantized.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct OpFilter(BTreeSet<OpClass>);

impl OpFilter {
    pub fn new(classes: &[OpClass]) -> Result<Self> {
        if classes.contains(&OpClass::Norm) {
            return Err(Error::Config("batch norm cannot be quantized; fuse it first".into()));
        }
        Ok(Self(classes.iter().copied().collect()))
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn conv() -> Self {
        Self([OpClass::Conv, OpClass::ConvTranspose].into_iter().collect())
    }

    pub fn conv_add() -> Self {
        Self([OpClass::Conv, OpClass::ConvTranspose, OpClass::Add].into_iter().collect())
    }

    /// Every deployable operator: full W8A8.
    pub fn full() -> Self {
        Self([OpClass::Conv, OpClass::ConvTranspose, OpClass::ReluLike, OpClass::Add].into_iter().collect())
    }

    /// The cumulative order used for instrumented runs.
    pub fn progression() -> Vec<OpFilter> {
        vec![Self::none(), Self::conv(), Self::conv_add(), Self::full()]
    }

    pub fn contains(&self, c: OpClass) -> bool {
        self.0.contains(&c)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for OpFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.0.iter().map(|c| c.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for OpFilter {
    type Err = Error;

    /// `none`, `full`, or class names joined by `+` or `,`
    /// (`conv`, `conv_transpose`, `relu`, `add`).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "none" => return Ok(Self::none()),
            "full" => return Ok(Self::full()),
            _ => {}
        }
        let mut classes = Vec::new();
        for part in s.split(['+', ',']).map(str::trim) {
            classes.push(match part {
                "conv" => OpClass::Conv,
                "conv_transpose" | "convt" => OpClass::ConvTranspose,
                "relu" => OpClass::ReluLike,
                "add" => OpClass::Add,
                other => return Err(Error::Config(format!("unknown operator class `{other}`"))),
            });
        }
        Self::new(&classes)
    }
}

#[inline]
pub fn fake_quant_value(v: f32, scale: f32) -> f32 {
    quantize_value(v, scale, ACT_MIN, ACT_MAX) as f32 * scale
}

/// `clamp(round_half_even(v / s), -128, 127) · s` element-wise.
pub fn fake_quant(t: &Tensor, scale: f32) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = fake_quant_value(*v, scale));
    out
}

/// Percentile (0..=100] of `values` by linear interpolation between order
/// statistics. Sorts in place.
pub fn percentile(values: &mut [f32], p: f64) -> f32 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_unstable_by(f32::total_cmp);
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = rank - lo as f64;
    (values[lo] as f64 + (values[hi] as f64 - values[lo] as f64) * frac) as f32
}

fn scale_from_amax(amax: f32, limit: i32) -> f32 {
    if amax > 0.0 {
        amax / limit as f32
    } else {
        1.0 / limit as f32
    }
}

/// Per-tensor activation scales from pooled `|value|` percentiles over all
/// calibration inputs, plus max-abs weight scales.
pub fn calibrate(
    g: &Graph,
    inputs: &[Tensor],
    pct: f64,
    granularity: WeightGranularity,
) -> Result<QuantSpec> {
    if inputs.is_empty() {
        return Err(Error::invalid("calibration needs at least one input"));
    }
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::invalid(format!("percentile must be in (0, 100], got {pct}")));
    }
    struct Pool(Vec<Vec<f32>>);
    impl ExecHook for Pool {
        fn map_output(&mut self, node: usize, v: Tensor) -> Tensor {
            self.0[node].extend(v.data().iter().map(|x| x.abs()));
            v
        }
    }
    let mut pool = Pool(vec![Vec::new(); g.nodes().len()]);
    let mut input_abs = Vec::new();
    for x in inputs {
        g.forward_with(x, &mut pool)?;
        input_abs.extend(x.data().iter().map(|v| v.abs()));
    }
    let mut activations = BTreeMap::new();
    activations.insert(INPUT_KEY.to_string(), scale_from_amax(percentile(&mut input_abs, pct), ACT_MAX));
    for (node, mut vals) in g.nodes().iter().zip(pool.0) {
        activations.insert(node.name.clone(), scale_from_amax(percentile(&mut vals, pct), ACT_MAX));
    }

    let mut weights = BTreeMap::new();
    for node in g.nodes() {
        let out_ch = match node.kind {
            OpKind::Conv2d { out_ch, .. } | OpKind::ConvTranspose2d { out_ch, .. } => out_ch,
            _ => continue,
        };
        let w = &g.param(&format!("{}.weight", node.name))?.data;
        let scales = match granularity {
            WeightGranularity::PerTensor => {
                vec![scale_from_amax(w.iter().fold(0f32, |a, v| a.max(v.abs())), WEIGHT_MAX)]
            }
            WeightGranularity::PerChannel => {
                let mut amax = vec![0f32; out_ch];
                for (i, v) in w.iter().enumerate() {
                    let oc = weight_out_channel(&node.kind, i);
                    amax[oc] = amax[oc].max(v.abs());
                }
                amax.into_iter().map(|a| scale_from_amax(a, WEIGHT_MAX)).collect()
            }
        };
        weights.insert(node.name.clone(), scales);
    }
    Ok(QuantSpec {
        activations,
        weights,
        granularity,
    })
}

/// Output channel of flat weight index `i`: dim 0 for convs, dim 1 for
/// transposed convs (`[in, out, 2, 2]`).
fn weight_out_channel(kind: &OpKind, i: usize) -> usize {
    match *kind {
        OpKind::Conv2d { in_ch, kernel, .. } => i / (in_ch * kernel * kernel),
        OpKind::ConvTranspose2d { out_ch, .. } => (i / 4) % out_ch,
        _ => unreachable!("weights belong to convolutions"),
    }
}

/// Graph with fake-quantized weights and a per-node plan of activation scales.
#[derive(Clone, Debug)]
pub struct QuantizedGraph {
    graph: Graph,
    filter: OpFilter,
    /// Scale of each input edge of filtered nodes.
    input_scales: Vec<Vec<f32>>,
    output_scales: Vec<Option<f32>>,
}

pub fn quantize_graph(g: &Graph, spec: &QuantSpec, filter: &OpFilter) -> Result<QuantizedGraph> {
    let act = |key: &str, node: &str| {
        spec.activations
            .get(key)
            .copied()
            .filter(|s| *s > 0.0)
            .ok_or_else(|| Error::MissingScale(format!("{node} (activation `{key}`)")))
    };
    let mut graph = g.clone();
    let mut input_scales = Vec::with_capacity(g.nodes().len());
    let mut output_scales = Vec::with_capacity(g.nodes().len());
    for node in g.nodes() {
        if !filter.contains(node.kind.class()) {
            input_scales.push(Vec::new());
            output_scales.push(None);
            continue;
        }
        let ins = node
            .inputs
            .iter()
            .map(|s| match s {
                Src::Input => act(INPUT_KEY, &node.name),
                Src::Node(j) => act(&g.nodes()[*j].name, &node.name),
            })
            .collect::<Result<Vec<f32>>>()?;
        output_scales.push(Some(act(&node.name, &node.name)?));
        if node.kind.is_conv() {
            let ws = spec
                .weights
                .get(&node.name)
                .filter(|v| !v.is_empty() && v.iter().all(|s| *s > 0.0))
                .ok_or_else(|| Error::MissingScale(format!("{} (weights)", node.name)))?;
            quantize_conv_params(&mut graph, &node.name, &node.kind, ws, ins[0])?;
        }
        input_scales.push(ins);
    }
    Ok(QuantizedGraph {
        graph,
        filter: filter.clone(),
        input_scales,
        output_scales,
    })
}

/// Snaps weights to `[-127, 127]·s_w` and the bias to the int32 accumulator grid `s_x·s_w`.
fn quantize_conv_params(g: &mut Graph, name: &str, kind: &OpKind, ws: &[f32], s_in: f32) -> Result<()> {
    let wkey = format!("{name}.weight");
    let bkey = format!("{name}.bias");
    let per = |oc: usize| if ws.len() == 1 { ws[0] } else { ws[oc] };
    let w: Vec<f32> = g
        .param(&wkey)?
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = per(weight_out_channel(kind, i));
            quantize_value(v, s, -WEIGHT_MAX, WEIGHT_MAX) as f32 * s
        })
        .collect();
    let b: Vec<f32> = g
        .param(&bkey)?
        .data
        .iter()
        .enumerate()
        .map(|(oc, &v)| {
            let s = s_in * per(oc);
            quantize_value(v, s, i32::MIN, i32::MAX) as f32 * s
        })
        .collect();
    g.set_param(&wkey, w)?;
    g.set_param(&bkey, b)
}

struct FakeQuantHook<'a> {
    q: &'a QuantizedGraph,
    edge: Vec<usize>,
    capture: &'a [usize],
    captured: Vec<Option<Tensor>>,
}

impl ExecHook for FakeQuantHook<'_> {
    fn map_input(&mut self, node: usize, _src: Src, value: &Tensor) -> Option<Tensor> {
        let scales = &self.q.input_scales[node];
        if scales.is_empty() {
            return None;
        }
        let k = self.edge[node];
        self.edge[node] += 1;
        Some(fake_quant(value, scales[k]))
    }

    fn map_output(&mut self, node: usize, value: Tensor) -> Tensor {
        let out = match self.q.output_scales[node] {
            Some(s) => fake_quant(&value, s),
            None => value,
        };
        if let Some(k) = self.capture.iter().position(|&c| c == node) {
            self.captured[k] = Some(out.clone());
        }
        out
    }
}

impl QuantizedGraph {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_capture(x, &[])?.0)
    }

    /// Forward pass that also returns the (post-quantization) outputs of `nodes`.
    pub fn forward_capture(&self, x: &Tensor, nodes: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let mut hook = FakeQuantHook {
            q: self,
            edge: vec![0; self.graph.nodes().len()],
            capture: nodes,
            captured: vec![None; nodes.len()],
        };
        let y = self.graph.forward_with(x, &mut hook)?;
        let captured = hook
            .captured
            .into_iter()
            .zip(nodes)
            .map(|(t, n)| t.ok_or_else(|| Error::invalid(format!("node {n} was not evaluated"))))
            .collect::<Result<_>>()?;
        Ok((y, captured))
    }

    pub fn filter(&self) -> &OpFilter {
        &self.filter
    }

    /// Graph carrying the fake-quantized weights and biases.
    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentedRow {
    pub filter: String,
    pub cos_sim_mean: f64,
    pub cos_sim_min: f64,
    pub n_inputs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentedReport {
    pub rows: Vec<InstrumentedRow>,
}

impl InstrumentedReport {
    pub fn row(&self, filter: &str) -> Option<&InstrumentedRow> {
        self.rows.iter().find(|r| r.filter == filter)
    }
}

/// CosSim of quantized vs f32 outputs for each filter, after an `fp32` reference row.
pub fn run_instrumented(
    g: &Graph,
    spec: &QuantSpec,
    inputs: &[Tensor],
    progression: &[OpFilter],
) -> Result<InstrumentedReport> {
    if progression.is_empty() {
        return Err(Error::invalid("progression needs at least one filter"));
    }
    if inputs.is_empty() {
        return Err(Error::invalid("instrumented run needs at least one input"));
    }
    let reference: Vec<Tensor> = inputs.iter().map(|x| g.forward(x)).collect::<Result<_>>()?;
    let mut rows = vec![InstrumentedRow {
        filter: "fp32".into(),
        cos_sim_mean: 1.0,
        cos_sim_min: 1.0,
        n_inputs: inputs.len(),
    }];
    for f in progression {
        let q = quantize_graph(g, spec, f)?;
        let mut sims = Vec::with_capacity(inputs.len());
        for (x, r) in inputs.iter().zip(&reference) {
            sims.push(cos_sim(&q.forward(x)?, r)?);
        }
        rows.push(InstrumentedRow {
            filter: f.to_string(),
            cos_sim_mean: sims.iter().sum::<f64>() / sims.len() as f64,
            cos_sim_min: sims.iter().copied().fold(f64::INFINITY, f64::min),
            n_inputs: inputs.len(),
        });
    }
    Ok(InstrumentedReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::unet::init_he;

    fn toy_net() -> Graph {
        let mut g = Graph::new(3, 1);
        let c1 = g
            .push("c1", OpKind::Conv2d { in_ch: 3, out_ch: 8, kernel: 3, stride: 1, padding: 1 }, &[Src::Input])
            .unwrap();
        let r = g.push("r", OpKind::Relu, &[c1]).unwrap();
        let c2 = g
            .push("c2", OpKind::Conv2d { in_ch: 8, out_ch: 8, kernel: 3, stride: 1, padding: 1 }, &[r])
            .unwrap();
        let a = g.push("a", OpKind::Add, &[c1, c2]).unwrap();
        g.push("h", OpKind::Conv2d { in_ch: 8, out_ch: 3, kernel: 1, stride: 1, padding: 0 }, &[a]).unwrap();
        init_he(&mut g, 4, true);
        g
    }

    fn inputs(n: usize) -> Vec<Tensor> {
        (0..n)
            .map(|k| {
                Tensor::new([1, 3, 16, 16], (0..768).map(|i| (((i + 7 * k) * 2654435761usize) % 1000) as f32 / 1000.0).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn fake_quant_basics() {
        assert_eq!(fake_quant_value(0.0, 0.1), 0.0);
        assert_eq!(fake_quant_value(200.0 * 0.5, 0.5), 127.0 * 0.5);
        assert_eq!(fake_quant_value(-200.0, 1.0), -128.0);
        let v = 0.123_f32;
        assert_eq!(fake_quant_value(fake_quant_value(v, 0.01), 0.01), fake_quant_value(v, 0.01));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&mut v, 100.0), 4.0);
        assert_eq!(percentile(&mut v, 50.0), 2.5);
        assert!((percentile(&mut v, 10.0) - 1.3).abs() < 1e-6);
    }

    #[test]
    fn calibration_floor_and_max_rule() {
        let mut g = Graph::new(1, 1);
        g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
        let zero = Tensor::zeros([1, 1, 4, 4]);
        let s = calibrate(&g, &[zero], 99.99, WeightGranularity::PerTensor).unwrap();
        assert_eq!(s.activations["r"], 1.0 / 127.0);
        let x = Tensor::new([1, 1, 4, 4], (0..16).map(|i| i as f32 / 7.5 - 1.0).collect()).unwrap();
        let s = calibrate(&g, &[x], 100.0, WeightGranularity::PerTensor).unwrap();
        assert!((s.activations[INPUT_KEY] - 1.0 / 127.0).abs() < 1e-7);
        assert!(calibrate(&g, &[], 99.99, WeightGranularity::PerTensor).is_err());
    }

    #[test]
    fn empty_filter_is_bit_exact() {
        let g = toy_net();
        let xs = inputs(3);
        let spec = calibrate(&g, &xs, DEFAULT_PERCENTILE, WeightGranularity::PerTensor).unwrap();
        let q = quantize_graph(&g, &spec, &OpFilter::none()).unwrap();
        for x in &xs {
            assert_eq!(q.forward(x).unwrap(), g.forward(x).unwrap());
        }
    }

    #[test]
    fn conv_filter_degrades_slightly() {
        let g = toy_net();
        let xs = inputs(4);
        let spec = calibrate(&g, &xs, DEFAULT_PERCENTILE, WeightGranularity::PerTensor).unwrap();
        let rep = run_instrumented(&g, &spec, &xs, &OpFilter::progression()).unwrap();
        assert_eq!(rep.rows[0].filter, "fp32");
        assert_eq!(rep.row("none").unwrap().cos_sim_mean, 1.0);
        let conv = rep.row("conv+conv_transpose").unwrap().cos_sim_mean;
        assert!(conv < 1.0 && conv > 0.9, "{conv}");
        let per_ch = calibrate(&g, &xs, DEFAULT_PERCENTILE, WeightGranularity::PerChannel).unwrap();
        assert_eq!(per_ch.weights["c1"].len(), 8);
    }

    #[test]
    fn missing_scale_names_node() {
        let g = toy_net();
        let mut spec = calibrate(&g, &inputs(1), DEFAULT_PERCENTILE, WeightGranularity::PerTensor).unwrap();
        spec.activations.remove("c2");
        match quantize_graph(&g, &spec, &OpFilter::conv()) {
            Err(Error::MissingScale(m)) => assert!(m.contains("c2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn filter_parsing() {
        assert_eq!("none".parse::<OpFilter>().unwrap(), OpFilter::none());
        assert_eq!("conv+conv_transpose+add".parse::<OpFilter>().unwrap(), OpFilter::conv_add());
        assert_eq!(OpFilter::full().to_string().parse::<OpFilter>().unwrap(), OpFilter::full());
        assert!("softmax".parse::<OpFilter>().is_err());
        assert!(OpFilter::new(&[OpClass::Norm]).is_err());
    }
}
