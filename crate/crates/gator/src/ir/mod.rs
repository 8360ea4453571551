//! Network intermediate representation: typed layer graph, validation,
//! topological ordering and downsample bookkeeping.

mod builtin;
mod count;
mod forward;
mod parse;
mod weights;

pub use builtin::builtin_graph;
pub use count::{count_flops, count_params};
pub use forward::{forward, output_spatial, Mode};
pub use parse::{parse_network, serialize_network};
pub use weights::WeightStore;

use std::collections::HashMap;

use crate::{GatorError, Result};

/// What a layer does. Channel/shape parameters live here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    /// Network input; `channels` is the image channel count.
    Input { channels: usize },
    /// Network output; passes its single input through.
    Output,
    Conv {
        /// (kernel_h, kernel_w)
        kernel: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        /// (pad_h, pad_w)
        padding: (usize, usize),
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    BatchNorm { channels: usize },
    Add,
    GlobalAvgPool,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Output => "output",
            LayerKind::Conv { .. } => "conv",
            LayerKind::FullyConnected { .. } => "fully-connected",
            LayerKind::Relu => "relu",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Add => "add",
            LayerKind::GlobalAvgPool => "global-avg-pool",
            LayerKind::MaxPool { .. } => "max-pool",
        }
    }

    /// Layers that carry channel dependency through unchanged.
    pub fn is_channel_preserving(&self) -> bool {
        matches!(
            self,
            LayerKind::Relu
                | LayerKind::BatchNorm { .. }
                | LayerKind::GlobalAvgPool
                | LayerKind::MaxPool { .. }
        )
    }
}

/// One node of the computational graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Predecessor layer ids.
    pub inputs: Vec<String>,
}

/// Validated DAG of layers in topological order, with per-layer channel
/// counts and downsample exponents.
///
/// Immutable after construction; the executor never mutates it.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    layers: Vec<LayerSpec>,
    index: HashMap<String, usize>,
    /// Output channel count per layer (topological order).
    out_channels: Vec<usize>,
    /// Number of stride-2 operations on any path from the input (s_i).
    stride2_count: Vec<u32>,
    /// Predecessors as indices into `layers`.
    input_idx: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Validate a layer list (any order) and build the graph.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let order = topo_order(&layers)?;
        let layers: Vec<LayerSpec> = order.into_iter().map(|i| layers[i].clone()).collect();
        let mut index = HashMap::new();
        for (i, l) in layers.iter().enumerate() {
            if index.insert(l.id.clone(), i).is_some() {
                return Err(GatorError::InvalidGraph(format!(
                    "duplicate layer id `{}`",
                    l.id
                )));
            }
        }
        let input_idx: Vec<Vec<usize>> = layers
            .iter()
            .map(|l| l.inputs.iter().map(|p| index[p]).collect())
            .collect();

        let mut g = NetworkGraph {
            layers,
            index,
            out_channels: Vec::new(),
            stride2_count: Vec::new(),
            input_idx,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&mut self) -> Result<()> {
        let n_input = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Input { .. }))
            .count();
        let n_output = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Output))
            .count();
        if n_input != 1 || n_output != 1 {
            return Err(GatorError::InvalidGraph(format!(
                "expected exactly one input and one output layer, found {n_input} and {n_output}"
            )));
        }

        let mut channels = vec![0usize; self.layers.len()];
        let mut s2 = vec![0u32; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            let preds = &self.input_idx[i];
            let arity_ok = match layer.kind {
                LayerKind::Input { .. } => preds.is_empty(),
                LayerKind::Add => preds.len() >= 2,
                _ => preds.len() == 1,
            };
            if !arity_ok {
                return Err(GatorError::InvalidGraph(format!(
                    "layer `{}` ({}) has {} inputs",
                    layer.id,
                    layer.kind.name(),
                    preds.len()
                )));
            }
            let pred_ch = |p: usize| channels[p];
            let pred_s2 = |p: usize| s2[p];
            match &layer.kind {
                LayerKind::Input { channels: c } => {
                    channels[i] = *c;
                    s2[i] = 0;
                }
                LayerKind::Conv {
                    kernel,
                    in_channels,
                    out_channels,
                    stride,
                    ..
                } => {
                    if kernel.0 < 1 || kernel.1 < 1 {
                        return Err(GatorError::InvalidGraph(format!(
                            "layer `{}` has kernel {}x{}",
                            layer.id, kernel.0, kernel.1
                        )));
                    }
                    if *stride != 1 && *stride != 2 {
                        return Err(GatorError::InvalidGraph(format!(
                            "layer `{}` has stride {} (must be 1 or 2)",
                            layer.id, stride
                        )));
                    }
                    let actual = pred_ch(preds[0]);
                    if actual != *in_channels {
                        return Err(GatorError::ChannelMismatch {
                            layer: layer.id.clone(),
                            pred: self.layers[preds[0]].id.clone(),
                            expected: *in_channels,
                            actual,
                        });
                    }
                    channels[i] = *out_channels;
                    s2[i] = pred_s2(preds[0]) + (*stride == 2) as u32;
                }
                LayerKind::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    let actual = pred_ch(preds[0]);
                    if actual != *in_features {
                        return Err(GatorError::ChannelMismatch {
                            layer: layer.id.clone(),
                            pred: self.layers[preds[0]].id.clone(),
                            expected: *in_features,
                            actual,
                        });
                    }
                    channels[i] = *out_features;
                    s2[i] = pred_s2(preds[0]);
                }
                LayerKind::BatchNorm { channels: c } => {
                    let actual = pred_ch(preds[0]);
                    if actual != *c {
                        return Err(GatorError::ChannelMismatch {
                            layer: layer.id.clone(),
                            pred: self.layers[preds[0]].id.clone(),
                            expected: *c,
                            actual,
                        });
                    }
                    channels[i] = actual;
                    s2[i] = pred_s2(preds[0]);
                }
                LayerKind::Relu | LayerKind::GlobalAvgPool | LayerKind::Output => {
                    channels[i] = pred_ch(preds[0]);
                    s2[i] = pred_s2(preds[0]);
                }
                LayerKind::MaxPool { stride, kernel, .. } => {
                    if *kernel < 1 {
                        return Err(GatorError::InvalidGraph(format!(
                            "layer `{}` has kernel {kernel}",
                            layer.id
                        )));
                    }
                    if *stride != 1 && *stride != 2 {
                        return Err(GatorError::InvalidGraph(format!(
                            "layer `{}` has stride {} (must be 1 or 2)",
                            layer.id, stride
                        )));
                    }
                    channels[i] = pred_ch(preds[0]);
                    s2[i] = pred_s2(preds[0]) + (*stride == 2) as u32;
                }
                LayerKind::Add => {
                    let c0 = pred_ch(preds[0]);
                    let s0 = pred_s2(preds[0]);
                    for &p in preds {
                        if pred_ch(p) != c0 {
                            return Err(GatorError::ChannelMismatch {
                                layer: layer.id.clone(),
                                pred: self.layers[p].id.clone(),
                                expected: c0,
                                actual: pred_ch(p),
                            });
                        }
                        if pred_s2(p) != s0 {
                            return Err(GatorError::InvalidGraph(format!(
                                "inputs of add `{}` carry different downsample factors ({} vs {})",
                                layer.id,
                                s0,
                                pred_s2(p)
                            )));
                        }
                    }
                    channels[i] = c0;
                    s2[i] = s0;
                }
            }
        }
        self.out_channels = channels;
        self.stride2_count = s2;
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Predecessor indices of layer `i`.
    pub fn preds(&self, i: usize) -> &[usize] {
        &self.input_idx[i]
    }

    /// Output channel count of layer `i`.
    pub fn channels_out(&self, i: usize) -> usize {
        self.out_channels[i]
    }

    /// Number of stride-2 operations from the input to layer `i` (s_i).
    pub fn stride2_count(&self, i: usize) -> u32 {
        self.stride2_count[i]
    }

    /// Downsample factor d_i = 4^{-s_i}: output pixels per input pixel.
    pub fn downsample_factor(&self, i: usize) -> f64 {
        0.25f64.powi(self.stride2_count[i] as i32)
    }

    pub fn input_layer(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Input { .. }))
            .expect("validated graph has an input layer")
    }

    pub fn output_layer(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Output))
            .expect("validated graph has an output layer")
    }

    pub fn input_channels(&self) -> usize {
        match self.layers[self.input_layer()].kind {
            LayerKind::Input { channels } => channels,
            _ => unreachable!(),
        }
    }

    /// Class count = fully-connected output width feeding the output layer.
    pub fn num_classes(&self) -> usize {
        self.out_channels[self.output_layer()]
    }
}

/// Kahn's algorithm; ties broken by original position so ordering is stable.
fn topo_order(layers: &[LayerSpec]) -> Result<Vec<usize>> {
    let mut index = HashMap::new();
    for (i, l) in layers.iter().enumerate() {
        index.insert(l.id.as_str(), i);
    }
    let mut indeg = vec![0usize; layers.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); layers.len()];
    for (i, l) in layers.iter().enumerate() {
        for p in &l.inputs {
            let &pi = index.get(p.as_str()).ok_or_else(|| GatorError::DanglingInput {
                layer: l.id.clone(),
                input: p.clone(),
            })?;
            succ[pi].push(i);
            indeg[i] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..layers.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(layers.len());
    while let Some(&i) = ready.iter().min() {
        ready.retain(|&x| x != i);
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    if order.len() != layers.len() {
        let stuck = (0..layers.len())
            .find(|&i| indeg[i] > 0)
            .map(|i| layers[i].id.clone())
            .unwrap_or_default();
        return Err(GatorError::CycleDetected { layer: stuck });
    }
    Ok(order)
}
