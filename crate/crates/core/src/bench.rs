//! Operator microbenchmarks and per-node graph profiling.
//!
//! Protocol: `warmup` discarded runs, then `iters` timed runs; minimum and
//! median are reported. Arithmetic intensity (FLOPs per byte moved) is
//! computed analytically to separate compute-bound from memory-bound work.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::graph::{ExecHook, Graph, OpKind, Src};
use crate::types::Tensor;

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_ITERS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOp {
    Conv3x3,
    Conv3x3Stride2,
    ConvTranspose2x2,
    Conv1x1,
    Relu,
    Add,
}

impl BenchOp {
    pub const ALL: [BenchOp; 6] = [
        BenchOp::Conv3x3,
        BenchOp::Conv3x3Stride2,
        BenchOp::ConvTranspose2x2,
        BenchOp::Conv1x1,
        BenchOp::Relu,
        BenchOp::Add,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Conv3x3 => "conv3x3",
            BenchOp::Conv3x3Stride2 => "conv3x3_s2",
            BenchOp::ConvTranspose2x2 => "conv_transpose2x2",
            BenchOp::Conv1x1 => "conv1x1",
            BenchOp::Relu => "relu",
            BenchOp::Add => "add",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark op `{s}`")))
    }

    fn kind(self, in_ch: usize, out_ch: usize) -> OpKind {
        let conv = |kernel, stride| OpKind::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: kernel / 2,
        };
        match self {
            BenchOp::Conv3x3 => conv(3, 1),
            BenchOp::Conv3x3Stride2 => conv(3, 2),
            BenchOp::Conv1x1 => conv(1, 1),
            BenchOp::ConvTranspose2x2 => OpKind::ConvTranspose2d { in_ch, out_ch },
            BenchOp::Relu => OpKind::Relu,
            BenchOp::Add => OpKind::Add,
        }
    }
}

/// Input `(1, in_ch, h, w)`; `out_ch` only matters for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
}

/// Analytic FLOPs and bytes moved (f32 inputs, weights and outputs).
pub fn op_cost(kind: &OpKind, input: [usize; 4], output: [usize; 4]) -> (u64, u64) {
    let numel = |s: [usize; 4]| s.iter().product::<usize>() as u64;
    let (n_in, n_out) = (numel(input), numel(output));
    match *kind {
        OpKind::Conv2d { in_ch, out_ch, kernel, .. } => {
            let weights = (out_ch * in_ch * kernel * kernel + out_ch) as u64;
            (2 * n_out * (in_ch * kernel * kernel) as u64, 4 * (n_in + n_out + weights))
        }
        OpKind::ConvTranspose2d { in_ch, out_ch } => {
            let weights = (in_ch * out_ch * 4 + out_ch) as u64;
            (2 * n_out * in_ch as u64, 4 * (n_in + n_out + weights))
        }
        OpKind::Relu => (n_out, 4 * (n_in + n_out)),
        OpKind::Add => (n_out, 4 * (2 * n_in + n_out)),
        OpKind::BatchNorm { channels, .. } => (2 * n_out, 4 * (n_in + n_out + 4 * channels as u64)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    pub op: String,
    pub input_shape: [usize; 4],
    pub output_shape: [usize; 4],
    pub iterations: usize,
    pub min_ns: u64,
    pub median_ns: u64,
    pub flops: u64,
    pub bytes: u64,
    pub flops_per_byte: f64,
    pub samples_ns: Vec<u64>,
}

fn median(sorted: &[u64]) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / 2
    }
}

fn time_runs<T>(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<T>) -> Result<(Vec<u64>, T)> {
    let mut last = None;
    for _ in 0..warmup {
        last = Some(f()?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        let out = f()?;
        samples.push(t.elapsed().as_nanos() as u64);
        last = Some(out);
    }
    Ok((samples, last.ok_or_else(|| Error::invalid("benchmark needs at least one run"))?))
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_raw(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

/// Times one operator on seeded random data. Also returns the last output so
/// callers can check that results are reproducible.
pub fn bench_op(op: BenchOp, shape: OpShape, warmup: usize, iters: usize, seed: u64) -> Result<(OpTiming, Tensor)> {
    if iters == 0 {
        return Err(Error::invalid("iters must be >= 1"));
    }
    if shape.in_ch == 0 || shape.height == 0 || shape.width == 0 {
        return Err(Error::invalid("benchmark shape must be non-empty"));
    }
    let mut g = Graph::new(shape.in_ch, 1);
    let kind = op.kind(shape.in_ch, shape.out_ch);
    let inputs: Vec<Src> = if op == BenchOp::Add {
        vec![Src::Input, Src::Input]
    } else {
        vec![Src::Input]
    };
    g.push(op.name(), kind, &inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = g.params().keys().cloned().collect();
    for name in names {
        let n = g.param(&name)?.data.len();
        g.set_param(&name, (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect())?;
    }
    let x = random_tensor([1, shape.in_ch, shape.height, shape.width], &mut rng);
    let (mut samples, y) = time_runs(warmup, iters, || g.eval_node(0, &[&x, &x][..inputs.len()]))?;
    let (flops, bytes) = op_cost(&kind, x.shape(), y.shape());
    let recorded = samples.clone();
    samples.sort_unstable();
    Ok((
        OpTiming {
            op: op.name().into(),
            input_shape: x.shape(),
            output_shape: y.shape(),
            iterations: iters,
            min_ns: samples[0],
            median_ns: median(&samples),
            flops,
            bytes,
            flops_per_byte: flops as f64 / bytes as f64,
            samples_ns: recorded,
        },
        y,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTiming {
    pub name: String,
    pub class: String,
    pub output_shape: [usize; 4],
    pub min_ns: u64,
    pub median_ns: u64,
    pub flops: u64,
    pub bytes: u64,
    pub flops_per_byte: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub class: String,
    pub min_ns: u64,
    pub share_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input_shape: [usize; 4],
    pub warmup: usize,
    pub iterations: usize,
    pub threads: usize,
    pub nodes: Vec<NodeTiming>,
    pub shares: Vec<ClassShare>,
}

impl BenchReport {
    pub fn share(&self, class: &str) -> f64 {
        self.shares.iter().find(|s| s.class == class).map_or(0.0, |s| s.share_pct)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,class,out_n,out_c,out_h,out_w,min_ns,median_ns,flops,bytes,flops_per_byte\n");
        for n in &self.nodes {
            let [a, b, c, d] = n.output_shape;
            let _ = writeln!(
                s,
                "{},{},{a},{b},{c},{d},{},{},{},{},{:.4}",
                n.name, n.class, n.min_ns, n.median_ns, n.flops, n.bytes, n.flops_per_byte
            );
        }
        s
    }
}

/// Times every node of `g` in isolation on its real inputs (captured from one
/// forward pass over seeded random data) and aggregates minimum latencies per
/// operator class. `threads` only labels the report; run inside a pool of that
/// size to control kernel parallelism.
pub fn profile_graph(
    g: &Graph,
    input_shape: [usize; 4],
    warmup: usize,
    iters: usize,
    seed: u64,
    threads: usize,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::invalid("iters must be >= 1"));
    }
    let mut report = BenchReport {
        input_shape,
        warmup,
        iterations: iters,
        threads,
        nodes: Vec::new(),
        shares: Vec::new(),
    };
    if g.nodes().is_empty() {
        return Ok(report);
    }
    struct Keep(Vec<Option<Tensor>>);
    impl ExecHook for Keep {
        fn map_output(&mut self, node: usize, v: Tensor) -> Tensor {
            self.0[node] = Some(v.clone());
            v
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(input_shape, &mut rng);
    let mut keep = Keep(vec![None; g.nodes().len()]);
    g.forward_with(&x, &mut keep)?;
    let values: Vec<Tensor> = keep.0.into_iter().map(|v| v.expect("every node evaluated")).collect();

    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    for (i, node) in g.nodes().iter().enumerate() {
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|s| match s {
                Src::Input => &x,
                Src::Node(j) => &values[*j],
            })
            .collect();
        let (mut samples, y) = time_runs(warmup, iters, || g.eval_node(i, &args))?;
        samples.sort_unstable();
        let (flops, bytes) = op_cost(&node.kind, args[0].shape(), y.shape());
        let class = node.kind.class().name().to_string();
        *per_class.entry(class.clone()).or_default() += samples[0];
        report.nodes.push(NodeTiming {
            name: node.name.clone(),
            class,
            output_shape: y.shape(),
            min_ns: samples[0],
            median_ns: median(&samples),
            flops,
            bytes,
            flops_per_byte: flops as f64 / bytes as f64,
        });
    }
    let total: u64 = per_class.values().sum::<u64>().max(1);
    report.shares = per_class
        .into_iter()
        .map(|(class, ns)| ClassShare {
            class,
            min_ns: ns,
            share_pct: 100.0 * ns as f64 / total as f64,
        })
        .collect();
    Ok(report)
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
