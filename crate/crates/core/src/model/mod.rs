//! Architecture description, weight I/O, forward tracing and channel ranking.

pub mod arch;
pub mod dpwn;

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_forward, layer_input_gradient, linear_forward, maxpool2x2_forward, relu_forward,
    BackwardRecord, OpKind, PoolIndices, Tensor,
};
use dpwn::{ArchEntry, Container};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { cin: usize, cout: usize, k: usize, pad: usize },
    Relu,
    MaxPool,
    Flatten,
    Linear { inputs: usize, outputs: usize },
}

impl LayerKind {
    pub fn op(&self) -> OpKind {
        match self {
            LayerKind::Conv { .. } => OpKind::Conv,
            LayerKind::Relu => OpKind::Relu,
            LayerKind::MaxPool => OpKind::MaxPool,
            LayerKind::Flatten => OpKind::Flatten,
            LayerKind::Linear { .. } => OpKind::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: &str, cin: usize, cout: usize, k: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv { cin, cout, k, pad: (k - 1) / 2 },
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec { name: name.into(), kind: LayerKind::Relu }
    }

    pub fn maxpool(name: &str) -> Self {
        LayerSpec { name: name.into(), kind: LayerKind::MaxPool }
    }

    pub fn flatten(name: &str) -> Self {
        LayerSpec { name: name.into(), kind: LayerKind::Flatten }
    }

    pub fn linear(name: &str, inputs: usize, outputs: usize) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Linear { inputs, outputs },
        }
    }

    fn to_arch(&self) -> ArchEntry {
        let (kind, params) = match self.kind {
            LayerKind::Conv { cin, cout, k, pad } => ("conv", json!({"cin": cin, "cout": cout, "k": k, "pad": pad})),
            LayerKind::Relu => ("relu", json!({})),
            LayerKind::MaxPool => ("maxpool", json!({})),
            LayerKind::Flatten => ("flatten", json!({})),
            LayerKind::Linear { inputs, outputs } => ("linear", json!({"in": inputs, "out": outputs})),
        };
        let Value::Object(params) = params else { unreachable!() };
        ArchEntry {
            name: self.name.clone(),
            kind: kind.into(),
            params,
        }
    }

    fn from_arch(entry: &ArchEntry) -> Result<Self> {
        let param = |key: &str| -> Result<usize> {
            entry
                .params
                .get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Header {
                    format: "DPWN",
                    msg: format!("layer {} is missing integer param {key}", entry.name),
                })
        };
        let kind = match entry.kind.as_str() {
            "conv" => {
                let k = param("k")?;
                let pad = match entry.params.get("pad") {
                    Some(_) => param("pad")?,
                    None => k.saturating_sub(1) / 2,
                };
                LayerKind::Conv { cin: param("cin")?, cout: param("cout")?, k, pad }
            }
            "relu" => LayerKind::Relu,
            "maxpool" => LayerKind::MaxPool,
            "flatten" => LayerKind::Flatten,
            "linear" => LayerKind::Linear { inputs: param("in")?, outputs: param("out")? },
            other => {
                return Err(Error::Header {
                    format: "DPWN",
                    msg: format!("unknown layer kind {other:?}"),
                })
            }
        };
        Ok(LayerSpec { name: entry.name.clone(), kind })
    }
}

/// Ordered layer list plus the derived shape of every layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    classes: usize,
    output_shapes: Vec<Vec<usize>>,
    pathway_layers: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, input_shape: [usize; 3], classes: usize) -> Result<Self> {
        let mut names = HashSet::new();
        for l in &layers {
            if !names.insert(l.name.as_str()) {
                return Err(Error::ShapeChain(format!("duplicate layer name {}", l.name)));
            }
        }
        if input_shape.contains(&0) {
            return Err(Error::ShapeChain(format!("bad input shape {input_shape:?}")));
        }

        let mut shape = input_shape.to_vec();
        let mut output_shapes = Vec::with_capacity(layers.len());
        let mut pathway_layers = Vec::new();
        let mut spatial = true;
        for l in &layers {
            shape = match (l.kind, shape.as_slice()) {
                (LayerKind::Conv { cin, cout, k, pad }, &[c, h, w]) => {
                    if k % 2 == 0 || pad != (k - 1) / 2 {
                        return Err(Error::ShapeChain(format!(
                            "{}: conv needs odd k and pad=(k-1)/2, got k={k} pad={pad}",
                            l.name
                        )));
                    }
                    if cin != c || cout == 0 {
                        return Err(Error::ShapeChain(format!("{}: expects {cin} channels, gets {c}", l.name)));
                    }
                    if spatial {
                        pathway_layers.push(output_shapes.len());
                    }
                    vec![cout, h, w]
                }
                (LayerKind::MaxPool, &[c, h, w]) => {
                    if spatial {
                        pathway_layers.push(output_shapes.len());
                    }
                    vec![c, h.div_ceil(2), w.div_ceil(2)]
                }
                (LayerKind::Relu, s) => s.to_vec(),
                (LayerKind::Flatten, s) => {
                    spatial = false;
                    vec![s.iter().product()]
                }
                (LayerKind::Linear { inputs, outputs }, &[n]) => {
                    if inputs != n || outputs == 0 {
                        return Err(Error::ShapeChain(format!("{}: expects {inputs} inputs, gets {n}", l.name)));
                    }
                    vec![outputs]
                }
                (kind, s) => {
                    return Err(Error::ShapeChain(format!(
                        "{}: {} cannot take input of shape {s:?}",
                        l.name,
                        kind.op().name()
                    )))
                }
            };
            output_shapes.push(shape.clone());
        }
        if shape != [classes] {
            return Err(Error::ShapeChain(format!("final shape {shape:?} is not [{classes}] logits")));
        }
        Ok(ModelSpec {
            layers,
            input_shape,
            classes,
            output_shapes,
            pathway_layers,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.output_shapes[layer]
    }

    pub fn input_shape_of(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.output_shapes[layer - 1]
        }
    }

    /// Model-layer indices of the conv and pool layers that carry pathways,
    /// in order (L0, L1, ...).
    pub fn pathway_layers(&self) -> &[usize] {
        &self.pathway_layers
    }

    pub fn pathway_channels(&self) -> Vec<usize> {
        self.pathway_layers.iter().map(|&i| self.output_shapes[i][0]).collect()
    }

    /// Pathway index of a model layer, if it is one.
    pub fn pathway_index(&self, layer: usize) -> Option<usize> {
        self.pathway_layers.iter().position(|&i| i == layer)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Layer whose output is "the activation" of a pathway layer: the ReLU
    /// directly after a conv, otherwise the layer itself.
    pub fn activation_layer(&self, layer: usize) -> usize {
        match (self.layers[layer].kind, self.layers.get(layer + 1).map(|l| l.kind)) {
            (LayerKind::Conv { .. }, Some(LayerKind::Relu)) => layer + 1,
            _ => layer,
        }
    }

    pub fn to_arch(&self) -> Vec<ArchEntry> {
        self.layers.iter().map(LayerSpec::to_arch).collect()
    }

    pub fn from_arch(arch: &[ArchEntry], input_shape: [usize; 3], classes: usize) -> Result<Self> {
        let layers = arch.iter().map(LayerSpec::from_arch).collect::<Result<_>>()?;
        Self::new(layers, input_shape, classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv { weight: Tensor, bias: Tensor },
    Linear { weight: Tensor, bias: Tensor },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<LayerParams>,
}

impl Model {
    pub fn new(spec: ModelSpec, params: Vec<LayerParams>) -> Result<Self> {
        if params.len() != spec.layers.len() {
            return Err(Error::shape("one parameter slot per layer required"));
        }
        for (l, p) in spec.layers.iter().zip(&params) {
            let ok = match (l.kind, p) {
                (LayerKind::Conv { cin, cout, k, .. }, LayerParams::Conv { weight, bias }) => {
                    weight.shape() == [cout, cin, k, k] && bias.shape() == [cout]
                }
                (LayerKind::Linear { inputs, outputs }, LayerParams::Linear { weight, bias }) => {
                    weight.shape() == [outputs, inputs] && bias.shape() == [outputs]
                }
                (LayerKind::Relu | LayerKind::MaxPool | LayerKind::Flatten, LayerParams::None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!("parameters of {} do not match its spec", l.name)));
            }
        }
        Ok(Model { spec, params })
    }

    /// He-normal weights, zero biases, seeded.
    pub fn random(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv { cin, cout, k, .. } => {
                    let dist = Normal::new(0.0, (2.0 / (cin * k * k) as f32).sqrt()).unwrap();
                    LayerParams::Conv {
                        weight: Tensor::from_fn(&[cout, cin, k, k], |_| dist.sample(&mut rng)),
                        bias: Tensor::zeros(&[cout]),
                    }
                }
                LayerKind::Linear { inputs, outputs } => {
                    let dist = Normal::new(0.0, (2.0 / inputs as f32).sqrt()).unwrap();
                    LayerParams::Linear {
                        weight: Tensor::from_fn(&[outputs, inputs], |_| dist.sample(&mut rng)),
                        bias: Tensor::zeros(&[outputs]),
                    }
                }
                _ => LayerParams::None,
            })
            .collect();
        Model { spec, params }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self, layer: usize) -> &LayerParams {
        &self.params[layer]
    }

    pub fn params_mut(&mut self, layer: usize) -> &mut LayerParams {
        &mut self.params[layer]
    }

    pub fn conv_weight(&self, layer: usize) -> Option<&Tensor> {
        match &self.params[layer] {
            LayerParams::Conv { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (l, p) in self.spec.layers.iter().zip(&self.params) {
            if let LayerParams::Conv { weight, bias } | LayerParams::Linear { weight, bias } = p {
                out.push((format!("{}.weight", l.name), weight.clone()));
                out.push((format!("{}.bias", l.name), bias.clone()));
            }
        }
        out
    }

    pub fn to_container(&self) -> Container {
        Container {
            arch: self.spec.to_arch(),
            input_shape: self.spec.input_shape,
            classes: self.spec.classes,
            tensors: self.named_tensors(),
            meta: None,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let spec = ModelSpec::from_arch(&c.arch, c.input_shape, c.classes)?;
        let fetch = |name: String, shape: &[usize]| -> Result<Tensor> {
            let t = c
                .tensor(&name)
                .ok_or_else(|| Error::ShapeChain(format!("weight file lacks tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::ShapeChain(format!(
                    "tensor {name} has shape {:?}, architecture needs {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let params = spec
            .layers
            .iter()
            .map(|l| {
                Ok(match l.kind {
                    LayerKind::Conv { cin, cout, k, .. } => LayerParams::Conv {
                        weight: fetch(format!("{}.weight", l.name), &[cout, cin, k, k])?,
                        bias: fetch(format!("{}.bias", l.name), &[cout])?,
                    },
                    LayerKind::Linear { inputs, outputs } => LayerParams::Linear {
                        weight: fetch(format!("{}.weight", l.name), &[outputs, inputs])?,
                        bias: fetch(format!("{}.bias", l.name), &[outputs])?,
                    },
                    _ => LayerParams::None,
                })
            })
            .collect::<Result<_>>()?;
        Model::new(spec, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    /// Runs one layer forward. Returns the output plus the ReLU mask or pool
    /// indices when the layer produces one.
    fn step(&self, layer: usize, input: &Tensor) -> Result<(Tensor, Option<Tensor>, Option<PoolIndices>)> {
        Ok(match (&self.spec.layers[layer].kind, &self.params[layer]) {
            (LayerKind::Conv { pad, .. }, LayerParams::Conv { weight, bias }) => {
                (conv2d_forward(input, weight, bias, *pad, 1)?, None, None)
            }
            (LayerKind::Relu, _) => {
                let (out, mask) = relu_forward(input);
                (out, Some(mask), None)
            }
            (LayerKind::MaxPool, _) => {
                let (out, idx) = maxpool2x2_forward(input)?;
                (out, None, Some(idx))
            }
            (LayerKind::Flatten, _) => {
                let n = input.len();
                (input.clone().reshape(&[n])?, None, None)
            }
            (LayerKind::Linear { .. }, LayerParams::Linear { weight, bias }) => {
                (linear_forward(input, weight, bias)?, None, None)
            }
            _ => unreachable!("parameters validated at construction"),
        })
    }

    pub fn forward_trace(&self, image: &Tensor) -> Result<ForwardTrace> {
        if image.shape() != self.spec.input_shape {
            return Err(Error::shape(format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                self.spec.input_shape
            )));
        }
        let n = self.spec.layers.len();
        let mut outputs = Vec::with_capacity(n);
        let mut relu_masks = Vec::with_capacity(n);
        let mut pool_indices = Vec::with_capacity(n);
        for i in 0..n {
            let input = if i == 0 { image } else { &outputs[i - 1] };
            let (out, mask, idx) = self.step(i, input)?;
            outputs.push(out);
            relu_masks.push(mask);
            pool_indices.push(idx);
        }
        let logits = outputs.last().cloned().unwrap_or_else(|| image.clone());
        let predicted = argmax_first(logits.data());
        let importance = self
            .spec
            .pathway_layers
            .iter()
            .map(|&l| activation_l1(&outputs[self.spec.activation_layer(l)]))
            .collect();
        Ok(ForwardTrace {
            input: image.clone(),
            outputs,
            relu_masks,
            pool_indices,
            logits,
            predicted,
            importance,
        })
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        Ok(self.forward_trace(image)?.predicted)
    }

    /// Logits obtained by feeding `input` into layer `start` and running the
    /// remaining layers.
    pub fn forward_from(&self, start: usize, input: &Tensor) -> Result<Tensor> {
        if input.shape() != self.spec.input_shape_of(start) {
            return Err(Error::shape(format!("layer {start} input must be {:?}", self.spec.input_shape_of(start))));
        }
        let mut x = input.clone();
        for i in start..self.spec.layers.len() {
            x = self.step(i, &x)?.0;
        }
        Ok(x)
    }

    /// Reverse pass from a gradient on the logits. Entry `i` of the result
    /// holds d/d(output of layer i) for every `i >= down_to`; the gradient
    /// with respect to the image is returned when `down_to == 0`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor, down_to: usize) -> Result<Backward> {
        let n = self.spec.layers.len();
        if grad_logits.shape() != trace.logits.shape() {
            return Err(Error::shape("logit gradient shape"));
        }
        let mut layer_grads: Vec<Option<Tensor>> = vec![None; n];
        let mut g = grad_logits.clone();
        for i in (down_to..n).rev() {
            layer_grads[i] = Some(g.clone());
            let in_shape = self.spec.input_shape_of(i).to_vec();
            let layer = &self.spec.layers[i];
            let record = match (&layer.kind, &self.params[i]) {
                (LayerKind::Conv { pad, .. }, LayerParams::Conv { weight, .. }) => BackwardRecord::Conv {
                    weight,
                    pad: *pad,
                    stride: 1,
                    input_shape: [in_shape[0], in_shape[1], in_shape[2]],
                },
                (LayerKind::Relu, _) => BackwardRecord::Relu {
                    mask: trace.relu_masks[i].as_ref().ok_or_else(|| Error::MissingRecord(layer.name.clone()))?,
                },
                (LayerKind::MaxPool, _) => BackwardRecord::MaxPool {
                    indices: trace.pool_indices[i].as_ref().ok_or_else(|| Error::MissingRecord(layer.name.clone()))?,
                },
                (LayerKind::Flatten, _) => BackwardRecord::Flatten { input_shape: &in_shape },
                (LayerKind::Linear { .. }, LayerParams::Linear { weight, .. }) => BackwardRecord::Linear { weight },
                _ => unreachable!("parameters validated at construction"),
            };
            if i > down_to || down_to == 0 {
                g = layer_input_gradient(layer.kind.op(), &g, &record)?;
            }
        }
        Ok(Backward {
            layer_grads,
            input_grad: (down_to == 0).then_some(g),
        })
    }

    pub fn channel_scores(&self, trace: &ForwardTrace, pathway_layer: usize, method: Importance) -> Result<Vec<f64>> {
        let layer = *self.spec.pathway_layers.get(pathway_layer).ok_or_else(|| {
            Error::invalid(format!(
                "L{pathway_layer} is not a pathway layer (model has {})",
                self.spec.pathway_layers.len()
            ))
        })?;
        match method {
            Importance::ActivationL1 => Ok(trace.importance[pathway_layer].clone()),
            Importance::GradTimesActivation { class } => {
                if class >= self.spec.classes {
                    return Err(Error::invalid(format!("class {class} out of range")));
                }
                let act_layer = self.spec.activation_layer(layer);
                let mut onehot = Tensor::zeros(trace.logits.shape());
                onehot.data_mut()[class] = 1.0;
                let back = self.backward(trace, &onehot, act_layer)?;
                let grad = back.layer_grads[act_layer].as_ref().expect("computed down to act_layer");
                let act = &trace.outputs[act_layer];
                let (c, h, w) = act.dims3()?;
                Ok((0..c)
                    .map(|ch| {
                        let s: f64 = (0..h * w)
                            .map(|i| grad.data()[ch * h * w + i] as f64 * act.data()[ch * h * w + i] as f64)
                            .sum();
                        s.max(0.0)
                    })
                    .collect())
            }
        }
    }

    /// Channel indices of a pathway layer, sorted by descending importance
    /// (ties by lower index).
    pub fn channel_importance(&self, trace: &ForwardTrace, pathway_layer: usize, method: Importance) -> Result<Vec<usize>> {
        Ok(rank_descending(&self.channel_scores(trace, pathway_layer, method)?))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Model::from_container(&Container::read(path)?)
}

pub fn load_model_bytes(bytes: &[u8]) -> Result<Model> {
    Model::from_container(&Container::from_bytes(bytes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Importance {
    ActivationL1,
    GradTimesActivation { class: usize },
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub layer_grads: Vec<Option<Tensor>>,
    pub input_grad: Option<Tensor>,
}

/// Everything recorded while running one image forward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    /// Output of every layer.
    pub outputs: Vec<Tensor>,
    pub relu_masks: Vec<Option<Tensor>>,
    pub pool_indices: Vec<Option<PoolIndices>>,
    pub logits: Tensor,
    pub predicted: usize,
    /// Activation-L1 channel scores per pathway layer.
    pub importance: Vec<Vec<f64>>,
}

pub fn argmax_first(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stable descending order; equal scores keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn activation_l1(act: &Tensor) -> Vec<f64> {
    let c = act.shape()[0];
    let plane = act.len() / c;
    act.data()
        .chunks_exact(plane)
        .map(|p| p.iter().map(|v| v.abs() as f64).sum())
        .collect()
}
