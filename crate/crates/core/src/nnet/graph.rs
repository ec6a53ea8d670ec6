use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nnet::kernels;
use crate::types::Tensor;

/// Learnable (or running-statistic) parameter storage of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "parameter data has {} values, shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }
}

pub type ParamMap = BTreeMap<String, Param>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    /// Kernel 1 or 3; the 1×1 variant is the output head.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Kernel 2, stride 2.
    ConvTranspose2d { in_ch: usize, out_ch: usize },
    Relu,
    Add,
    BatchNorm { channels: usize, eps: f32 },
}

/// Operator class used by quantization filters and profiling shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpClass {
    Conv,
    ConvTranspose,
    ReluLike,
    Add,
    Norm,
}

impl OpClass {
    pub fn name(self) -> &'static str {
        match self {
            OpClass::Conv => "conv",
            OpClass::ConvTranspose => "conv_transpose",
            OpClass::ReluLike => "relu",
            OpClass::Add => "add",
            OpClass::Norm => "batch_norm",
        }
    }
}

impl OpKind {
    pub fn class(&self) -> OpClass {
        match self {
            OpKind::Conv2d { .. } => OpClass::Conv,
            OpKind::ConvTranspose2d { .. } => OpClass::ConvTranspose,
            OpKind::Relu => OpClass::ReluLike,
            OpKind::Add => OpClass::Add,
            OpKind::BatchNorm { .. } => OpClass::Norm,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, OpKind::Conv2d { .. } | OpKind::ConvTranspose2d { .. })
    }

    fn arity(&self) -> usize {
        if matches!(self, OpKind::Add) {
            2
        } else {
            1
        }
    }

    /// Parameter suffixes this kind owns, with their shapes.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            OpKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_ch, in_ch, kernel, kernel]),
                ("bias", vec![out_ch]),
            ],
            OpKind::ConvTranspose2d { in_ch, out_ch } => {
                vec![("weight", vec![in_ch, out_ch, 2, 2]), ("bias", vec![out_ch])]
            }
            OpKind::BatchNorm { channels, .. } => vec![
                ("bn_gamma", vec![channels]),
                ("bn_beta", vec![channels]),
                ("bn_mean", vec![channels]),
                ("bn_var", vec![channels]),
            ],
            OpKind::Relu | OpKind::Add => Vec::new(),
        }
    }
}

/// Where a node reads a value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Src {
    Input,
    Node(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpNode {
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<Src>,
}

/// Per-node observation and rewriting during execution.
///
/// `map_input` may return a replacement for the value a node reads (the stored
/// value is left untouched for other consumers); `map_output` post-processes
/// what a node produced before it is stored.
pub trait ExecHook {
    fn map_input(&mut self, _node: usize, _src: Src, _value: &Tensor) -> Option<Tensor> {
        None
    }

    fn map_output(&mut self, _node: usize, value: Tensor) -> Tensor {
        value
    }
}

pub struct NoHook;

impl ExecHook for NoHook {}

/// Topologically ordered operator graph with one input and one output (the
/// last node).
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<OpNode>,
    params: ParamMap,
    input_channels: usize,
    /// Spatial dims of the input must be multiples of this.
    spatial_multiple: usize,
}

impl Graph {
    pub fn new(input_channels: usize, spatial_multiple: usize) -> Self {
        Self {
            nodes: Vec::new(),
            params: ParamMap::new(),
            input_channels,
            spatial_multiple: spatial_multiple.max(1),
        }
    }

    /// Appends a node and zero-initialised storage for its parameters
    /// (batch norm starts as identity). Returns the node's output handle.
    pub fn push(&mut self, name: impl Into<String>, kind: OpKind, inputs: &[Src]) -> Result<Src> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Config(format!("duplicate node name `{name}`")));
        }
        if inputs.len() != kind.arity() {
            return Err(Error::Config(format!(
                "node `{name}` takes {} inputs, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        for s in inputs {
            if let Src::Node(i) = s {
                if *i >= self.nodes.len() {
                    return Err(Error::Config(format!("node `{name}` reads a later node {i}")));
                }
            }
        }
        for (suffix, shape) in kind.param_shapes() {
            let p = if suffix == "bn_gamma" || suffix == "bn_var" {
                Param::filled(shape, 1.0)
            } else {
                Param::zeros(shape)
            };
            self.params.insert(format!("{name}.{suffix}"), p);
        }
        self.nodes.push(OpNode {
            name,
            kind,
            inputs: inputs.to_vec(),
        });
        Ok(Src::Node(self.nodes.len() - 1))
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamMap {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("graph has no parameter `{name}`")))
    }

    pub fn set_param(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("graph has no parameter `{name}`")))?;
        if p.data.len() != data.len() {
            return Err(Error::Shape {
                name: name.to_string(),
                expected: p.shape.clone(),
                found: vec![data.len()],
            });
        }
        p.data = data;
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn spatial_multiple(&self) -> usize {
        self.spatial_multiple
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub(crate) fn from_parts(
        nodes: Vec<OpNode>,
        params: ParamMap,
        input_channels: usize,
        spatial_multiple: usize,
    ) -> Self {
        Self {
            nodes,
            params,
            input_channels,
            spatial_multiple,
        }
    }

    /// Structural checks: topological order, arity, parameter shapes.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.inputs.len() != n.kind.arity() {
                return Err(Error::Config(format!("node `{}` has wrong arity", n.name)));
            }
            for s in &n.inputs {
                if let Src::Node(j) = s {
                    if *j >= i {
                        return Err(Error::Config(format!(
                            "node `{}` reads node {j} which does not precede it",
                            n.name
                        )));
                    }
                }
            }
            match n.kind {
                OpKind::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if !(kernel == 1 || kernel == 3) || !(stride == 1 || stride == 2) {
                        return Err(Error::Config(format!(
                            "conv `{}` has unsupported kernel {kernel} / stride {stride}",
                            n.name
                        )));
                    }
                    if padding != kernel / 2 {
                        return Err(Error::Config(format!("conv `{}` must use same padding", n.name)));
                    }
                }
                OpKind::BatchNorm { eps, .. } if eps.is_nan() || eps <= 0.0 => {
                    return Err(Error::Config(format!("batch norm `{}` needs eps > 0", n.name)));
                }
                _ => {}
            }
            for (suffix, shape) in n.kind.param_shapes() {
                let key = format!("{}.{suffix}", n.name);
                let p = self.params.get(&key).ok_or_else(|| {
                    Error::Config(format!("missing parameter `{key}`"))
                })?;
                if p.shape != shape {
                    return Err(Error::Shape {
                        name: key,
                        expected: shape,
                        found: p.shape.clone(),
                    });
                }
                if suffix == "bn_var" && p.data.iter().any(|&v| v < 0.0) {
                    return Err(Error::Config(format!("`{key}` has negative variance")));
                }
            }
        }
        Ok(())
    }

    /// Deploy graphs may only contain 3×3 / stride-2 3×3 convs, 2×2 transposed
    /// convs, ReLU, Add and a 1×1 head.
    pub fn lint_deployable(&self) -> Result<()> {
        self.validate()?;
        for n in &self.nodes {
            if let OpKind::BatchNorm { .. } = n.kind {
                return Err(Error::Config(format!(
                    "batch norm `{}` is outside the deploy operator set",
                    n.name
                )));
            }
            if let OpKind::Conv2d { kernel: 1, stride, .. } = n.kind {
                if stride != 1 {
                    return Err(Error::Config(format!("1x1 conv `{}` must have stride 1", n.name)));
                }
            }
        }
        Ok(())
    }

    pub fn count_params(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| !(k.ends_with(".bn_mean") || k.ends_with(".bn_var")))
            .map(|(_, p)| p.data.len())
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [n, c, h, w] = x.shape();
        if n != 1 || c != self.input_channels {
            return Err(Error::invalid(format!(
                "graph expects input (1,{},H,W), got {:?}",
                self.input_channels,
                x.shape()
            )));
        }
        if h % self.spatial_multiple != 0 || w % self.spatial_multiple != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} is not a positive multiple of {}",
                self.spatial_multiple
            )));
        }
        Ok(())
    }

    /// Evaluates node `idx` on already-resolved inputs using this graph's parameters.
    pub fn eval_node(&self, idx: usize, inputs: &[&Tensor]) -> Result<Tensor> {
        let node = &self.nodes[idx];
        let p = |suffix: &str| -> Result<&[f32]> {
            Ok(&self.param(&format!("{}.{suffix}", node.name))?.data)
        };
        match node.kind {
            OpKind::Conv2d {
                out_ch,
                kernel,
                stride,
                padding,
                in_ch,
            } => {
                check_channels(&node.name, inputs[0], in_ch)?;
                kernels::conv2d(inputs[0], p("weight")?, p("bias")?, out_ch, kernel, stride, padding)
            }
            OpKind::ConvTranspose2d { in_ch, out_ch } => {
                check_channels(&node.name, inputs[0], in_ch)?;
                kernels::conv_transpose2x2(inputs[0], p("weight")?, p("bias")?, out_ch)
            }
            OpKind::Relu => Ok(kernels::relu(inputs[0])),
            OpKind::Add => kernels::add(inputs[0], inputs[1]),
            OpKind::BatchNorm { channels, eps } => {
                check_channels(&node.name, inputs[0], channels)?;
                kernels::batch_norm(
                    inputs[0],
                    p("bn_gamma")?,
                    p("bn_beta")?,
                    p("bn_mean")?,
                    p("bn_var")?,
                    eps,
                )
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, &mut NoHook)
    }

    /// Evaluates nodes in order; intermediate values are dropped after their
    /// last consumer.
    pub fn forward_with(&self, x: &Tensor, hook: &mut dyn ExecHook) -> Result<Tensor> {
        self.check_input(x)?;
        if self.nodes.is_empty() {
            return Ok(x.clone());
        }
        let last_use = self.last_uses();
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let mut replaced: Vec<Option<Tensor>> = Vec::with_capacity(node.inputs.len());
            for &src in &node.inputs {
                let v = resolve(x, &values, src);
                replaced.push(hook.map_input(i, src, v));
            }
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .zip(&replaced)
                .map(|(&src, r)| r.as_ref().unwrap_or_else(|| resolve(x, &values, src)))
                .collect();
            let out = self.eval_node(i, &args)?;
            drop(args);
            values[i] = Some(hook.map_output(i, out));
            for &src in &node.inputs {
                if let Src::Node(j) = src {
                    if last_use[j] == i {
                        values[j] = None;
                    }
                }
            }
        }
        Ok(values.pop().flatten().expect("last node output is kept"))
    }

    fn last_uses(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.nodes.len()).collect();
        if let Some(l) = last.last_mut() {
            *l = usize::MAX;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            for s in &n.inputs {
                if let Src::Node(j) = s {
                    if last[*j] != usize::MAX {
                        last[*j] = last[*j].max(i);
                    }
                }
            }
        }
        last
    }
}

fn resolve<'a>(x: &'a Tensor, values: &'a [Option<Tensor>], src: Src) -> &'a Tensor {
    match src {
        Src::Input => x,
        Src::Node(j) => values[j].as_ref().expect("value consumed before last use"),
    }
}

fn check_channels(name: &str, x: &Tensor, expected: usize) -> Result<()> {
    if x.shape()[1] != expected {
        return Err(Error::invalid(format!(
            "node `{name}` expects {expected} channels, got {}",
            x.shape()[1]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv3(in_ch: usize, out_ch: usize) -> OpKind {
        OpKind::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    #[test]
    fn single_conv_param_count() {
        let mut g = Graph::new(6, 1);
        g.push("c", conv3(6, 16), &[Src::Input]).unwrap();
        assert_eq!(g.count_params(), 880);
        assert_eq!(Graph::new(6, 1).count_params(), 0);
    }

    #[test]
    fn identity_conv_graph() {
        let mut g = Graph::new(1, 1);
        g.push("c", conv3(1, 1), &[Src::Input]).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        g.set_param("c.weight", w).unwrap();
        let x = Tensor::new([1, 1, 5, 3], (0..15).map(|v| v as f32 * 0.1).collect()).unwrap();
        assert_eq!(g.forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_bad_structure() {
        let mut g = Graph::new(1, 1);
        assert!(g.push("a", OpKind::Add, &[Src::Input]).is_err());
        assert!(g.push("r", OpKind::Relu, &[Src::Node(3)]).is_err());
        g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
        assert!(g.push("r", OpKind::Relu, &[Src::Input]).is_err());
    }

    #[test]
    fn input_dims_checked() {
        let mut g = Graph::new(3, 16);
        g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
        assert!(matches!(g.forward(&Tensor::zeros([1, 3, 24, 32])), Err(Error::InvalidInput(_))));
        assert!(g.forward(&Tensor::zeros([1, 2, 32, 32])).is_err());
        assert!(g.forward(&Tensor::zeros([1, 3, 32, 48])).is_ok());
    }

    #[test]
    fn lint_rejects_batch_norm() {
        let mut g = Graph::new(2, 1);
        let c = g.push("c", conv3(2, 2), &[Src::Input]).unwrap();
        g.push("bn", OpKind::BatchNorm { channels: 2, eps: 1e-5 }, &[c]).unwrap();
        assert!(g.validate().is_ok());
        assert!(g.lint_deployable().is_err());
    }

    #[test]
    fn skip_values_survive_until_last_use() {
        let mut g = Graph::new(1, 1);
        let r = g.push("r", OpKind::Relu, &[Src::Input]).unwrap();
        let r2 = g.push("r2", OpKind::Relu, &[r]).unwrap();
        let a = g.push("a", OpKind::Add, &[r, r2]).unwrap();
        g.push("b", OpKind::Add, &[a, Src::Input]).unwrap();
        let x = Tensor::new([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(g.forward(&x).unwrap().data(), &[-1.0, 6.0]);
    }
}
