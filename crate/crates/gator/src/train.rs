//! Training: reverse-mode gradients through the gated network, SGD with
//! per-edge learning-rate adjustment, the gating/fine-tune phases, iterative
//! pruning, and γ calibration.
//!
//! The total loss is `L_total = L_original + α·L_computation`. Gate logits
//! receive the task gradient through the sigmoid surrogate plus the pruning
//! gradient `α·λ̂_j·σ′(θ+x)`, and step at `η_j = γ·η/λ̂_j`, so the pruning
//! component of the update is `γ·η·α·σ′(θ+x)` for every edge regardless of
//! its cost factor, while the task component is amplified on cheap edges.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, s};
use serde::{Deserialize, Serialize};

use crate::cost::{CostFactors, CostObjective, computational_loss};
use crate::data::{DataBundle, Dataset, augment_batch, epoch_order};
use crate::gating::{
    GateDraw, GateState, Granularity, gate_backward, init_gates, prune_check,
    sample_gates,
};
use crate::hypergraph::{DependencyHypergraph, Side};
use crate::ir::{LayerKind, Mode, NetworkGraph, WeightStore, forward, output_spatial};
use crate::nn;
use crate::rng::stream_at;
use crate::{GatorError, Result};

/// One piecewise-constant step of a learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epochs: usize,
    pub lr: f64,
}

/// Which resource the run optimizes; the latency variant needs a measured
/// table supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Memory,
    Flops,
    Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// One pruning weight per iteration; must be non-decreasing.
    pub alpha_schedule: Vec<f64>,
    /// Gradient-adjustment constant γ of the per-edge learning rate.
    pub gamma: f64,
    pub gating_lr: Vec<LrStep>,
    pub finetune_lr: Vec<LrStep>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub objective: ObjectiveKind,
    /// Initial closed-gate probability.
    pub p_gate: f64,
    pub seed: u64,
    pub granularity: Granularity,
    /// Maximum tolerated self-pruned channel fraction during γ calibration.
    pub self_prune_ceiling: f64,
    /// Epochs of the short α=0 run used per γ candidate.
    pub calibration_epochs: usize,
    /// Re-initialize surviving gate logits to p_gate at each iteration
    /// instead of carrying them over.
    pub reinit_gates_each_iteration: bool,
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha_schedule: vec![1.0],
            gamma: 1e-4,
            gating_lr: vec![
                LrStep { epochs: 20, lr: 0.01 },
                LrStep { epochs: 10, lr: 0.001 },
            ],
            finetune_lr: vec![LrStep { epochs: 20, lr: 0.001 }],
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            objective: ObjectiveKind::Flops,
            p_gate: 0.005,
            seed: 0,
            granularity: Granularity::PerSample,
            self_prune_ceiling: 0.05,
            calibration_epochs: 2,
            reinit_gates_each_iteration: false,
            augment: true,
        }
    }
}

pub fn parse_config(text: &str) -> Result<TrainingConfig> {
    let c: TrainingConfig =
        toml::from_str(text).map_err(|e| GatorError::Config(e.to_string()))?;
    if c.alpha_schedule.iter().any(|&a| a < 0.0) {
        return Err(GatorError::Config("alpha must be >= 0".into()));
    }
    if !(c.gamma > 0.0) {
        return Err(GatorError::Config("gamma must be > 0".into()));
    }
    if c.batch_size < 1 {
        return Err(GatorError::Config("batch size must be >= 1".into()));
    }
    if c.gating_lr.iter().chain(&c.finetune_lr).any(|s| !(s.lr > 0.0)) {
        return Err(GatorError::Config("learning rates must be > 0".into()));
    }
    Ok(c)
}

pub fn serialize_config(c: &TrainingConfig) -> String {
    toml::to_string_pretty(c).expect("config serialization")
}

/// Gradients mirroring a [`WeightStore`] plus one θ vector per prunable edge.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: BTreeMap<String, ArrayD<f64>>,
    pub theta: Vec<Option<Array1<f64>>>,
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub total: f64,
    pub original: f64,
    pub computational: f64,
}

struct LayerTrace {
    /// Post-gate output, the value consumers saw.
    out: Option<Array4<f64>>,
    /// Pre-gate output for gated layers.
    pre_gate: Option<Array4<f64>>,
    cols: Option<Array2<f64>>,
    bn: Option<nn::BnCache>,
    argmax: Option<Vec<usize>>,
}

/// Forward activations and caches of one training step.
pub struct Trace {
    layers: Vec<LayerTrace>,
    pub logits: Array2<f64>,
}

/// Per-layer gate masks (`[rows, channels]`, rows 1 or batch) derived from a
/// draw: each conv and batchnorm output is masked with its edge's gates.
/// Masking batchnorm outputs too keeps a closed channel at exactly zero even
/// though the normalization shift would otherwise move it.
pub fn layer_masks_from_draw(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    draw: &GateDraw,
) -> Vec<Option<Array2<f64>>> {
    (0..g.len())
        .map(|i| {
            if !matches!(
                g.layer(i).kind,
                LayerKind::Conv { .. } | LayerKind::BatchNorm { .. }
            ) {
                return None;
            }
            draw.g[h.layer_output_edge(i)].clone()
        })
        .collect()
}

/// Single-row masks holding permanently pruned channels at zero.
pub fn layer_masks_fixed(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    gates: &GateState,
) -> Vec<Option<Array2<f64>>> {
    let per_edge = gates.fixed_masks();
    (0..g.len())
        .map(|i| {
            if !matches!(
                g.layer(i).kind,
                LayerKind::Conv { .. } | LayerKind::BatchNorm { .. }
            ) {
                return None;
            }
            per_edge[h.layer_output_edge(i)]
                .as_ref()
                .map(|m| m.clone().insert_axis(Axis(0)))
        })
        .collect()
}

/// Per-layer vector masks for the reference executor (evaluation).
pub fn eval_masks(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    gates: &GateState,
) -> Vec<Option<Array1<f64>>> {
    let per_edge = gates.fixed_masks();
    (0..g.len())
        .map(|i| {
            if !matches!(
                g.layer(i).kind,
                LayerKind::Conv { .. } | LayerKind::BatchNorm { .. }
            ) {
                return None;
            }
            per_edge[h.layer_output_edge(i)].clone()
        })
        .collect()
}

fn apply_row_mask(y: &mut Array4<f64>, mask: &Array2<f64>) {
    let (n, c, _, _) = y.dim();
    for s_i in 0..n {
        let row = if mask.nrows() == 1 { 0 } else { s_i };
        for ci in 0..c {
            if mask[(row, ci)] == 0.0 {
                y.index_axis_mut(Axis(0), s_i)
                    .index_axis_mut(Axis(0), ci)
                    .fill(0.0);
            }
        }
    }
}

/// Train-mode forward pass retaining everything backward needs. `masks` has
/// one optional `[rows, c]` gate mask per layer.
pub fn forward_trace(
    g: &NetworkGraph,
    w: &mut WeightStore,
    batch: &Array4<f64>,
    masks: &[Option<Array2<f64>>],
    update_running: bool,
) -> Result<Trace> {
    assert_eq!(masks.len(), g.len(), "one mask slot per layer");
    let n = batch.dim().0;
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(g.len());
    let mut logits = None;
    for i in 0..g.len() {
        let layer = g.layer(i);
        let preds = g.preds(i);
        let pred_out = |layers: &[LayerTrace], p: usize| -> Array4<f64> {
            layers[p].out.as_ref().expect("topological order").clone()
        };
        let mut t = LayerTrace {
            out: None,
            pre_gate: None,
            cols: None,
            bn: None,
            argmax: None,
        };
        let mut y = match &layer.kind {
            LayerKind::Input { channels } => {
                if batch.dim().1 != *channels {
                    return Err(GatorError::ShapeMismatch(format!(
                        "batch has {} channels, input layer expects {channels}",
                        batch.dim().1
                    )));
                }
                batch.clone()
            }
            LayerKind::Conv { stride, padding, .. } => {
                let x = pred_out(&layers, preds[0]);
                let weight = w.conv_weight(&layer.id)?;
                let (y, cols) = nn::conv2d_forward(&x.view(), &weight.view(), *stride, *padding);
                t.cols = Some(cols);
                y
            }
            LayerKind::BatchNorm { .. } => {
                let x = pred_out(&layers, preds[0]);
                let gamma = w.bn_param(&layer.id, "gamma")?;
                let beta = w.bn_param(&layer.id, "beta")?;
                let mut rm = w.bn_param(&layer.id, "running_mean")?;
                let mut rv = w.bn_param(&layer.id, "running_var")?;
                let (y, cache) = nn::batchnorm_forward_train(
                    &x.view(),
                    &gamma.view(),
                    &beta.view(),
                    &mut rm,
                    &mut rv,
                );
                if update_running {
                    *w.get_mut(&format!("{}.running_mean", layer.id))? = rm.into_dyn();
                    *w.get_mut(&format!("{}.running_var", layer.id))? = rv.into_dyn();
                }
                t.bn = Some(cache);
                y
            }
            LayerKind::Relu => nn::relu_forward(&pred_out(&layers, preds[0]).view()),
            LayerKind::Add => {
                let mut y = pred_out(&layers, preds[0]);
                for &p in &preds[1..] {
                    y += layers[p].out.as_ref().expect("topological order");
                }
                y
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let x = pred_out(&layers, preds[0]);
                let (y, argmax) = nn::maxpool_forward(&x.view(), *kernel, *stride, *padding);
                t.argmax = Some(argmax);
                y
            }
            LayerKind::GlobalAvgPool => nn::gap_forward(&pred_out(&layers, preds[0]).view()),
            LayerKind::FullyConnected { .. } => {
                let x = pred_out(&layers, preds[0]);
                let weight = w.fc_weight(&layer.id)?;
                nn::linear_forward(&x.view(), &weight.view())
            }
            LayerKind::Output => pred_out(&layers, preds[0]),
        };
        if let Some(mask) = &masks[i] {
            t.pre_gate = Some(y.clone());
            apply_row_mask(&mut y, mask);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(GatorError::NonFiniteLoss {
                layer: layer.id.clone(),
            });
        }
        if matches!(layer.kind, LayerKind::Output) {
            let c = y.dim().1;
            logits = Some(y.to_shape((n, c)).expect("logits reshape").to_owned());
        }
        t.out = Some(y);
        layers.push(t);
    }
    Ok(Trace {
        layers,
        logits: logits.ok_or_else(|| GatorError::InvalidGraph("no output layer".into()))?,
    })
}

/// Reverse pass over a trace. With `gate_ctx` present the θ-gradients carry
/// the task term (through the surrogate) and, when `cost_ctx` is present too,
/// the pruning term `α·λ̂_j·σ′(θ+x)`.
pub fn backward(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    w: &WeightStore,
    trace: &Trace,
    labels: &[usize],
    masks: &[Option<Array2<f64>>],
    gate_ctx: Option<(&GateState, &GateDraw)>,
    cost_ctx: Option<(&CostFactors, f64)>,
) -> Result<(Losses, GradientSet)> {
    let (l_orig, ce_grad) = nn::softmax_cross_entropy(&trace.logits.view(), labels);
    if !l_orig.is_finite() {
        return Err(GatorError::NonFiniteLoss {
            layer: g.layer(g.output_layer()).id.clone(),
        });
    }
    let (l_comp, alpha) = match cost_ctx {
        Some((factors, alpha)) => {
            let draw = gate_ctx
                .map(|(_, d)| d)
                .ok_or_else(|| GatorError::Training("cost context without gates".into()))?;
            (computational_loss(&draw.gate_sums(h), factors)?, alpha)
        }
        None => (0.0, 0.0),
    };

    let mut grads: Vec<Option<Array4<f64>>> = (0..g.len()).map(|_| None).collect();
    let (n, classes) = trace.logits.dim();
    grads[g.output_layer()] = Some(
        ce_grad
            .to_shape((n, classes, 1, 1))
            .expect("grad reshape")
            .to_owned(),
    );
    let mut weight_grads: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    let mut theta_grads: Vec<Option<Array1<f64>>> = (0..h.edges().len()).map(|_| None).collect();

    let add_grad = |grads: &mut Vec<Option<Array4<f64>>>, p: usize, g_in: Array4<f64>| {
        match &mut grads[p] {
            Some(acc) => *acc += &g_in,
            slot @ None => *slot = Some(g_in),
        }
    };

    for i in (0..g.len()).rev() {
        let Some(mut grad_out) = grads[i].take() else {
            continue;
        };
        let layer = g.layer(i);
        let preds = g.preds(i);
        // Through the gate first: data path uses the hard mask; the logit
        // path accumulates into the edge's θ-gradient.
        if let Some(mask) = &masks[i] {
            let pre = trace.layers[i].pre_gate.as_ref().expect("gated layer");
            match gate_ctx {
                Some((gates, draw)) => {
                    let j = h.layer_output_edge(i);
                    let eg = gates.edges[j].as_ref().expect("gated edge");
                    let x = draw.x[j].as_ref().expect("gated edge");
                    let (ga, gt) = gate_backward(
                        &grad_out,
                        pre,
                        x,
                        mask,
                        &eg.theta,
                        gates.tau,
                        &eg.pruned,
                    )?;
                    grad_out = ga;
                    match &mut theta_grads[j] {
                        Some(acc) => *acc += &gt,
                        slot @ None => *slot = Some(gt),
                    }
                }
                None => apply_row_mask(&mut grad_out, mask),
            }
        }
        match &layer.kind {
            LayerKind::Input { .. } => {}
            LayerKind::Conv { stride, padding, .. } => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                let weight = w.conv_weight(&layer.id)?;
                let cols = trace.layers[i].cols.as_ref().expect("conv cache");
                let (gx, gw) = nn::conv2d_backward(
                    &grad_out.view(),
                    &cols.view(),
                    &weight.view(),
                    x.dim(),
                    *stride,
                    *padding,
                );
                weight_grads.insert(format!("{}.weight", layer.id), gw.into_dyn());
                add_grad(&mut grads, preds[0], gx);
            }
            LayerKind::BatchNorm { .. } => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                let gamma = w.bn_param(&layer.id, "gamma")?;
                let cache = trace.layers[i].bn.as_ref().expect("bn cache");
                let (gx, ggamma, gbeta) =
                    nn::batchnorm_backward(&x.view(), &grad_out.view(), &gamma.view(), cache);
                weight_grads.insert(format!("{}.gamma", layer.id), ggamma.into_dyn());
                weight_grads.insert(format!("{}.beta", layer.id), gbeta.into_dyn());
                add_grad(&mut grads, preds[0], gx);
            }
            LayerKind::Relu => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                add_grad(
                    &mut grads,
                    preds[0],
                    nn::relu_backward(&x.view(), &grad_out.view()),
                );
            }
            LayerKind::Add => {
                for &p in preds {
                    add_grad(&mut grads, p, grad_out.clone());
                }
            }
            LayerKind::MaxPool { .. } => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                let argmax = trace.layers[i].argmax.as_ref().expect("pool cache");
                add_grad(
                    &mut grads,
                    preds[0],
                    nn::maxpool_backward(&grad_out.view(), argmax, x.dim()),
                );
            }
            LayerKind::GlobalAvgPool => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                add_grad(&mut grads, preds[0], nn::gap_backward(&grad_out.view(), x.dim()));
            }
            LayerKind::FullyConnected { .. } => {
                let x = trace.layers[preds[0]].out.as_ref().expect("trace");
                let weight = w.fc_weight(&layer.id)?;
                let (gx, gw) = nn::linear_backward(&x.view(), &weight.view(), &grad_out.view());
                weight_grads.insert(format!("{}.weight", layer.id), gw.into_dyn());
                add_grad(&mut grads, preds[0], gx);
            }
            LayerKind::Output => {
                add_grad(&mut grads, preds[0], grad_out);
            }
        }
    }

    // Pruning-loss term: ∂(α·Σ c_j λ̂_j)/∂θ = α·λ̂_j·σ′((θ+x)/τ)/τ per draw row.
    if let (Some((gates, draw)), Some((factors, alpha))) = (gate_ctx, cost_ctx) {
        if alpha != 0.0 {
            for &j in factors.prunable() {
                let Some(eg) = gates.edges[j].as_ref() else { continue };
                let x = draw.x[j].as_ref().expect("gated edge");
                let rows = x.nrows() as f64;
                let gt = theta_grads[j].get_or_insert_with(|| Array1::zeros(eg.theta.len()));
                for i in 0..eg.theta.len() {
                    if eg.pruned[i] {
                        continue;
                    }
                    let mut acc = 0.0;
                    for r in 0..x.nrows() {
                        acc += nn::sigmoid_derivative((eg.theta[i] + x[(r, i)]) / gates.tau)
                            / gates.tau;
                    }
                    gt[i] += alpha * factors.lambda_hat[j] * acc / rows;
                }
            }
        }
    }

    Ok((
        Losses {
            total: l_orig + alpha * l_comp,
            original: l_orig,
            computational: l_comp,
        },
        GradientSet {
            weights: weight_grads,
            theta: theta_grads,
        },
    ))
}

/// Cost-adjusted gate learning rate `η_j = γ·η/λ̂_j`; `None` when λ̂
/// vanishes (the edge's update is skipped that step).
pub fn edge_learning_rate(eta: f64, gamma: f64, lambda_hat: f64) -> Option<f64> {
    (lambda_hat > 0.0).then(|| gamma * eta / lambda_hat)
}

/// Momentum buffers for the weight parameters.
#[derive(Debug, Clone, Default)]
pub struct Momentum {
    v: BTreeMap<String, ArrayD<f64>>,
}

/// One SGD step: momentum + weight decay on network weights at `eta`, plain
/// SGD on gate logits at the per-edge adjusted rate. Returns edges skipped
/// because their λ̂ was zero.
pub fn sgd_step(
    w: &mut WeightStore,
    gates: &mut GateState,
    grads: &GradientSet,
    mom: &mut Momentum,
    eta: f64,
    config: &TrainingConfig,
    factors: &CostFactors,
) -> Vec<usize> {
    for (name, grad) in &grads.weights {
        let param = w.get_mut(name).expect("gradient names a stored parameter");
        let v = mom
            .v
            .entry(name.clone())
            .or_insert_with(|| ArrayD::zeros(param.raw_dim()));
        azip_sgd(param, v, grad, config.momentum, config.weight_decay, eta);
    }
    let mut skipped = Vec::new();
    for (j, gt) in grads.theta.iter().enumerate() {
        let Some(gt) = gt else { continue };
        let Some(eg) = gates.edges[j].as_mut() else { continue };
        match edge_learning_rate(eta, config.gamma, factors.lambda_hat[j]) {
            Some(eta_j) => {
                for i in 0..eg.theta.len() {
                    if !eg.pruned[i] {
                        eg.theta[i] -= eta_j * gt[i];
                    }
                }
            }
            None => skipped.push(j),
        }
    }
    skipped
}

fn azip_sgd(
    param: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    grad: &ArrayD<f64>,
    momentum: f64,
    weight_decay: f64,
    eta: f64,
) {
    ndarray::Zip::from(param)
        .and(v)
        .and(grad)
        .for_each(|p, vel, &g| {
            *vel = momentum * *vel + g + weight_decay * *p;
            *p -= eta * *vel;
        });
}

/// Per-epoch record of a [`PruningRunLog`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss_original: f64,
    pub loss_computational: f64,
    pub loss_total: f64,
    pub eval_accuracy: f64,
    pub pruned_per_edge: Vec<usize>,
    pub flops_estimate: u64,
    pub memory_estimate: u64,
    pub skipped_edges: Vec<usize>,
}

/// Append-only training log; one record per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruningRunLog {
    pub records: Vec<EpochRecord>,
}

impl PruningRunLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialization"))
            .fold(String::new(), |mut s, line| {
                s.push_str(&line);
                s.push('\n');
                s
            })
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| GatorError::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(PruningRunLog { records })
    }
}

/// FLOPs and parameter totals of the network with every edge reduced to
/// `counts[edge]` channels (structural estimate, no weights materialized).
pub fn estimate_costs(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    counts: &[usize],
    input_hw: (usize, usize),
) -> (u64, u64) {
    let spatial = output_spatial(g, input_hw);
    let mut flops = 0u64;
    let mut params = 0u64;
    for i in 0..g.len() {
        match &g.layer(i).kind {
            LayerKind::Conv { kernel, .. } => {
                let cin = counts[h.edge_of(i, Side::In).expect("conv vertex")] as u64;
                let cout = counts[h.edge_of(i, Side::Out).expect("conv vertex")] as u64;
                let k = (kernel.0 * kernel.1) as u64;
                params += k * cin * cout;
                let (oh, ow) = spatial[i];
                flops += k * cin * cout * (oh * ow) as u64;
            }
            LayerKind::FullyConnected { .. } => {
                let cin = counts[h.edge_of(i, Side::In).expect("fc vertex")] as u64;
                let cout = counts[h.edge_of(i, Side::Out).expect("fc vertex")] as u64;
                params += cin * cout;
                flops += cin * cout;
            }
            _ => {}
        }
    }
    (flops, params)
}

/// Top-1 accuracy of the masked network on a dataset (eval-mode batchnorm).
pub fn evaluate_accuracy(
    g: &NetworkGraph,
    w: &mut WeightStore,
    masks: &[Option<Array1<f64>>],
    data: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(GatorError::Dataset("empty evaluation split".into()));
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let batch = data.images.slice(s![start..end, .., .., ..]).to_owned();
        let logits = forward(g, w, &batch, Mode::Eval, Some(masks))?;
        for (row, &label) in logits.axis_iter(Axis(0)).zip(&data.labels[start..end]) {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            if pred == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Gating,
    Finetune,
}

impl PhaseKind {
    fn name(self) -> &'static str {
        match self {
            PhaseKind::Gating => "gating",
            PhaseKind::Finetune => "finetune",
        }
    }
}

/// Run one phase of one iteration, mutating weights (and, in the gating
/// phase, gates) in place and appending to the log.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    kind: PhaseKind,
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    w: &mut WeightStore,
    gates: &mut GateState,
    data: &DataBundle,
    config: &TrainingConfig,
    objective: &CostObjective,
    alpha: f64,
    iteration: usize,
    log: &mut PruningRunLog,
) -> Result<()> {
    if data.train.is_empty() {
        return Err(GatorError::Dataset("empty training split".into()));
    }
    let input_hw = (data.train.images.dim().2, data.train.images.dim().3);
    let mut factors = CostFactors::initial(g, h, objective, input_hw)?;
    let mut mom = Momentum::default();
    let n = data.train.len();
    let schedule = match kind {
        PhaseKind::Gating => &config.gating_lr,
        PhaseKind::Finetune => &config.finetune_lr,
    };
    let mut epoch = 0usize;
    for step_cfg in schedule {
        for _ in 0..step_cfg.epochs {
            let tag = |name: &str| format!("{name}-i{iteration}-{}", kind.name());
            let mut order_rng = stream_at(config.seed, &tag("order"), epoch as u64);
            let mut aug_rng = stream_at(config.seed, &tag("augment"), epoch as u64);
            let mut noise_rng = stream_at(config.seed, &tag("gate-noise"), epoch as u64);
            let order = epoch_order(n, &mut order_rng);
            let mut sums = (0.0f64, 0.0f64, 0.0f64);
            let mut steps = 0usize;
            let mut skipped_edges: Vec<usize> = Vec::new();
            for chunk in order.chunks(config.batch_size) {
                let mut batch = Array4::zeros((
                    chunk.len(),
                    data.train.images.dim().1,
                    input_hw.0,
                    input_hw.1,
                ));
                let mut labels = Vec::with_capacity(chunk.len());
                for (bi, &si) in chunk.iter().enumerate() {
                    batch
                        .index_axis_mut(Axis(0), bi)
                        .assign(&data.train.images.index_axis(Axis(0), si));
                    labels.push(data.train.labels[si]);
                }
                let batch = if config.augment {
                    augment_batch(&batch, &mut aug_rng)
                } else {
                    batch
                };
                let losses = match kind {
                    PhaseKind::Gating => {
                        factors.refresh(g, h, objective, &gates.active_counts(h), input_hw)?;
                        let rows = match config.granularity {
                            Granularity::PerBatch => 1,
                            Granularity::PerSample => chunk.len(),
                        };
                        let draw = sample_gates(gates, &mut noise_rng, rows);
                        let masks = layer_masks_from_draw(g, h, &draw);
                        let trace = forward_trace(g, w, &batch, &masks, true)?;
                        let (losses, grads) = backward(
                            g,
                            h,
                            w,
                            &trace,
                            &labels,
                            &masks,
                            Some((gates, &draw)),
                            Some((&factors, alpha)),
                        )?;
                        let skipped =
                            sgd_step(w, gates, &grads, &mut mom, step_cfg.lr, config, &factors);
                        for j in skipped {
                            if !skipped_edges.contains(&j) {
                                skipped_edges.push(j);
                            }
                        }
                        prune_check(gates);
                        losses
                    }
                    PhaseKind::Finetune => {
                        let masks = layer_masks_fixed(g, h, gates);
                        let trace = forward_trace(g, w, &batch, &masks, true)?;
                        let (losses, grads) =
                            backward(g, h, w, &trace, &labels, &masks, None, None)?;
                        sgd_step(w, gates, &grads, &mut mom, step_cfg.lr, config, &factors);
                        losses
                    }
                };
                sums.0 += losses.original;
                sums.1 += losses.computational;
                sums.2 += losses.total;
                steps += 1;
            }
            let masks = eval_masks(g, h, gates);
            let accuracy = evaluate_accuracy(g, w, &masks, &data.eval, config.batch_size)?;
            let live: Vec<usize> = gates
                .edges
                .iter()
                .enumerate()
                .map(|(j, e)| match e {
                    Some(eg) => eg.live_count(),
                    None => h.edges()[j].channel_count,
                })
                .collect();
            let (flops, params) = estimate_costs(g, h, &live, input_hw);
            log.records.push(EpochRecord {
                iteration,
                phase: kind.name().to_string(),
                epoch,
                lr: step_cfg.lr,
                loss_original: sums.0 / steps as f64,
                loss_computational: sums.1 / steps as f64,
                loss_total: sums.2 / steps as f64,
                eval_accuracy: accuracy,
                pruned_per_edge: gates
                    .edges
                    .iter()
                    .map(|e| e.as_ref().map_or(0, |eg| eg.pruned.iter().filter(|&&p| p).count()))
                    .collect(),
                flops_estimate: flops,
                memory_estimate: params,
                skipped_edges,
            });
            epoch += 1;
        }
    }
    Ok(())
}

/// Weights and gates as they stood after each iteration.
#[derive(Debug, Clone)]
pub struct IterationArtifact {
    pub alpha: f64,
    /// State the next iteration continues from.
    pub gating_weights: WeightStore,
    /// Accuracy-recovered weights for this iteration's architecture.
    pub finetuned_weights: WeightStore,
    pub gates: GateState,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub iterations: Vec<IterationArtifact>,
    /// Fine-tuned weights of the last iteration (the emitted artifact), or
    /// the baseline weights for an empty schedule.
    pub final_weights: WeightStore,
    pub gates: GateState,
    pub log: PruningRunLog,
}

/// The full schedule: per α, a gating phase then a fine-tune phase on a copy;
/// the next iteration continues from the gating-phase weights.
pub fn run_iterative_pruning(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    w: &WeightStore,
    data: &DataBundle,
    config: &TrainingConfig,
    objective: &CostObjective,
) -> Result<RunOutcome> {
    let gates = init_gates(g, h, config.p_gate)?;
    resume_iterative_pruning(
        g,
        h,
        w.clone(),
        gates,
        PruningRunLog::default(),
        0,
        data,
        config,
        objective,
    )
}

/// Continue a schedule from iteration `start` given the gating-phase weights,
/// gates, and log as they stood after iteration `start - 1`. With the same
/// config and seed this is bit-identical to an uninterrupted run, because
/// every RNG stream is keyed by (iteration, phase, epoch).
#[allow(clippy::too_many_arguments)]
pub fn resume_iterative_pruning(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    mut gating_w: WeightStore,
    mut gates: GateState,
    mut log: PruningRunLog,
    start: usize,
    data: &DataBundle,
    config: &TrainingConfig,
    objective: &CostObjective,
) -> Result<RunOutcome> {
    if config
        .alpha_schedule
        .windows(2)
        .any(|pair| pair[1] < pair[0])
    {
        return Err(GatorError::Config(
            "alpha schedule must be non-decreasing".into(),
        ));
    }
    if start > config.alpha_schedule.len() {
        return Err(GatorError::Config(format!(
            "resume iteration {start} beyond the {}-step schedule",
            config.alpha_schedule.len()
        )));
    }
    let mut iterations = Vec::new();
    for (it, &alpha) in config.alpha_schedule.iter().enumerate().skip(start) {
        if it > 0 && config.reinit_gates_each_iteration {
            let theta0 = ((1.0 - config.p_gate) / config.p_gate).ln();
            for eg in gates.edges.iter_mut().flatten() {
                for i in 0..eg.theta.len() {
                    if !eg.pruned[i] {
                        eg.theta[i] = theta0;
                    }
                }
            }
        }
        run_phase(
            PhaseKind::Gating,
            g,
            h,
            &mut gating_w,
            &mut gates,
            data,
            config,
            objective,
            alpha,
            it,
            &mut log,
        )?;
        let mut finetuned = gating_w.clone();
        run_phase(
            PhaseKind::Finetune,
            g,
            h,
            &mut finetuned,
            &mut gates,
            data,
            config,
            objective,
            alpha,
            it,
            &mut log,
        )?;
        iterations.push(IterationArtifact {
            alpha,
            gating_weights: gating_w.clone(),
            finetuned_weights: finetuned,
            gates: gates.clone(),
        });
    }
    let final_weights = iterations
        .last()
        .map(|a| a.finetuned_weights.clone())
        .unwrap_or_else(|| gating_w.clone());
    Ok(RunOutcome {
        iterations,
        final_weights,
        gates,
        log,
    })
}

/// Self-pruned fraction measured for one γ candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma: f64,
    pub self_pruned_fraction: f64,
}

/// Short α=0 gating run per candidate; picks the largest γ whose self-pruned
/// channel fraction stays at or below the configured ceiling.
pub fn calibrate_gamma(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    w: &WeightStore,
    data: &DataBundle,
    config: &TrainingConfig,
    candidates: &[f64],
    objective: &CostObjective,
) -> Result<(f64, Vec<GammaReport>)> {
    if candidates.is_empty() || candidates.iter().any(|&c| !(c > 0.0)) {
        return Err(GatorError::Config(
            "gamma candidates must be positive and non-empty".into(),
        ));
    }
    let mut reports = Vec::new();
    for &gamma in candidates {
        let mut probe_config = config.clone();
        probe_config.gamma = gamma;
        probe_config.gating_lr = vec![LrStep {
            epochs: config.calibration_epochs,
            lr: config.gating_lr.first().map_or(0.01, |s| s.lr),
        }];
        let mut probe_w = w.clone();
        let mut probe_gates = init_gates(g, h, config.p_gate)?;
        let mut probe_log = PruningRunLog::default();
        run_phase(
            PhaseKind::Gating,
            g,
            h,
            &mut probe_w,
            &mut probe_gates,
            data,
            &probe_config,
            objective,
            0.0,
            0,
            &mut probe_log,
        )?;
        let fraction = probe_gates.total_pruned() as f64 / probe_gates.total_channels() as f64;
        reports.push(GammaReport {
            gamma,
            self_pruned_fraction: fraction,
        });
    }
    let chosen = reports
        .iter()
        .filter(|r| r.self_pruned_fraction <= config.self_prune_ceiling)
        .max_by(|a, b| a.gamma.partial_cmp(&b.gamma).expect("finite gamma"));
    match chosen {
        Some(r) => Ok((r.gamma, reports)),
        None => Err(GatorError::CalibrationFailed(
            reports
                .iter()
                .map(|r| format!("gamma {:.3e}: {:.1}%", r.gamma, 100.0 * r.self_pruned_fraction))
                .collect::<Vec<_>>()
                .join(", "),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::full_counts;
    use crate::data::synthetic_dataset;
    use crate::hypergraph::build_hypergraph;
    use crate::ir::{builtin_graph, parse_network};
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn tiny_net() -> NetworkGraph {
        parse_network(
            r#"{"layers":[
            {"id":"input","kind":"input","channels":2},
            {"id":"c1","kind":"conv","kernel":[3,3],"in_channels":2,"out_channels":4,"inputs":["input"]},
            {"id":"c1_bn","kind":"batchnorm","channels":4,"inputs":["c1"]},
            {"id":"c1_relu","kind":"relu","inputs":["c1_bn"]},
            {"id":"c2","kind":"conv","kernel":[3,3],"in_channels":4,"out_channels":5,"inputs":["c1_relu"]},
            {"id":"pool","kind":"max-pool","pool_kernel":2,"stride":2,"inputs":["c2"]},
            {"id":"gap","kind":"global-avg-pool","inputs":["pool"]},
            {"id":"fc","kind":"fully-connected","in_features":5,"out_features":3,"inputs":["gap"]},
            {"id":"output","kind":"output","inputs":["fc"]}
        ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TrainingConfig::default();
        let text = serialize_config(&c);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(c, parsed);
        assert_eq!(serialize_config(&parsed), text);
        assert!(parse_config("gamma = -1.0").is_err());
        assert!(parse_config("unknown_field = 3").is_err());
    }

    #[test]
    fn edge_learning_rate_formula() {
        assert_relative_eq!(
            edge_learning_rate(0.01, 1e-4, 1e-3).unwrap(),
            1e-3,
            epsilon = 1e-18
        );
        // Doubling lambda-hat halves the rate.
        let base = edge_learning_rate(0.01, 1e-4, 2e-3).unwrap();
        assert_relative_eq!(base, 5e-4, epsilon = 1e-18);
        assert!(edge_learning_rate(0.01, 1e-4, 0.0).is_none());
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let w0 = WeightStore::init_random(&g, 3);
        let data = synthetic_dataset("classes=3,n=8,hw=8,channels=2", 5).unwrap();
        let batch = data.train.images.slice(s![0..4, .., .., ..]).to_owned();
        let labels = &data.train.labels[0..4];
        let gates = init_gates(&g, &h, 0.2).unwrap();
        let mut rng = stream(7, "fd-noise");
        let draw = sample_gates(&gates, &mut rng, 1);
        let masks = layer_masks_from_draw(&g, &h, &draw);
        let factors = CostFactors::initial(&g, &h, &CostObjective::Memory, (8, 8)).unwrap();

        let mut w = w0.clone();
        let trace = forward_trace(&g, &mut w, &batch, &masks, false).unwrap();
        let (_, grads) = backward(
            &g,
            &h,
            &w,
            &trace,
            labels,
            &masks,
            Some((&gates, &draw)),
            Some((&factors, 0.5)),
        )
        .unwrap();

        let loss_at = |w: &WeightStore| -> f64 {
            let mut wc = w.clone();
            let t = forward_trace(&g, &mut wc, &batch, &masks, false).unwrap();
            nn::softmax_cross_entropy(&t.logits.view(), labels).0
        };
        let eps = 1e-5;
        for (name, grad) in &grads.weights {
            let flat: Vec<usize> = vec![0, grad.len() / 2, grad.len() - 1]
                .into_iter()
                .filter(|&i| i < grad.len())
                .collect();
            for idx in flat {
                let mut wp = w0.clone();
                let mut wm = w0.clone();
                wp.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] += eps;
                wm.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] -= eps;
                let fd = (loss_at(&wp) - loss_at(&wm)) / (2.0 * eps);
                let an = grad.as_slice().unwrap()[idx];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom <= 1e-4,
                    "{name}[{idx}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn pruning_component_cancels_lambda_hat() {
        // With zero task gradient, the post-learning-rate update is
        // gamma*eta*alpha*sigmoid'(theta+x) on every edge.
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let factors = CostFactors::initial(&g, &h, &CostObjective::Flops, (16, 16)).unwrap();
        let (gamma, eta, alpha) = (3e-3, 0.01, 2.0);
        let (theta, x) = (1.3, -0.4);
        let mut updates = Vec::new();
        for &j in factors.prunable() {
            let grad = alpha * factors.lambda_hat[j] * nn::sigmoid_derivative(theta + x);
            let eta_j = edge_learning_rate(eta, gamma, factors.lambda_hat[j]).unwrap();
            updates.push(eta_j * grad);
        }
        let expect = gamma * eta * alpha * nn::sigmoid_derivative(theta + x);
        for u in updates {
            assert!(((u - expect) / expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn sgd_momentum_matches_hand_recursion() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let mut w = WeightStore::zeros(&g);
        *w.get_mut("fc.weight").unwrap() = ArrayD::from_elem(vec![3, 5], 1.0);
        let mut gates = init_gates(&g, &h, 0.005).unwrap();
        let factors = CostFactors::initial(&g, &h, &CostObjective::Memory, (8, 8)).unwrap();
        let config = TrainingConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
            ..TrainingConfig::default()
        };
        let mut grads = GradientSet {
            weights: BTreeMap::new(),
            theta: (0..h.edges().len()).map(|_| None).collect(),
        };
        grads
            .weights
            .insert("fc.weight".into(), ArrayD::from_elem(vec![3, 5], 1.0));
        let mut mom = Momentum::default();
        let eta = 0.1;
        // Hand recursion for a parameter starting at 1 with grad 1.
        let (mut p, mut v) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            sgd_step(&mut w, &mut gates, &grads, &mut mom, eta, &config, &factors);
            v = 0.9 * v + 1.0 + 1e-4 * p;
            p -= eta * v;
            let got = w.get("fc.weight").unwrap().as_slice().unwrap()[0];
            assert_relative_eq!(got, p, epsilon = 1e-12);
        }
        // Gate logits without gradients are exactly unchanged.
        let theta0 = ((1.0 - 0.005f64) / 0.005).ln();
        for eg in gates.edges.iter().flatten() {
            assert!(eg.theta.iter().all(|&t| t == theta0));
        }
    }

    #[test]
    fn alpha_zero_theta_gradient_is_task_only() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let mut w = WeightStore::init_random(&g, 1);
        let data = synthetic_dataset("classes=3,n=8,hw=8,channels=2", 2).unwrap();
        let batch = data.train.images.slice(s![0..4, .., .., ..]).to_owned();
        let labels = &data.train.labels[0..4];
        let gates = init_gates(&g, &h, 0.2).unwrap();
        let mut rng = stream(3, "noise");
        let draw = sample_gates(&gates, &mut rng, 4);
        let masks = layer_masks_from_draw(&g, &h, &draw);
        let factors = CostFactors::initial(&g, &h, &CostObjective::Memory, (8, 8)).unwrap();
        let trace = forward_trace(&g, &mut w, &batch, &masks, false).unwrap();
        let (l0, g0) = backward(
            &g,
            &h,
            &w,
            &trace,
            labels,
            &masks,
            Some((&gates, &draw)),
            Some((&factors, 0.0)),
        )
        .unwrap();
        let (l1, g1) = backward(
            &g,
            &h,
            &w,
            &trace,
            labels,
            &masks,
            Some((&gates, &draw)),
            None,
        )
        .unwrap();
        assert_eq!(l0.total, l0.original);
        assert_eq!(l1.computational, 0.0);
        for (a, b) in g0.theta.iter().zip(g1.theta.iter()) {
            match (a, b) {
                (Some(a), Some(b)) => assert_eq!(a, b),
                (None, None) => {}
                _ => panic!("theta gradient coverage differs"),
            }
        }
        assert_relative_eq!(l0.original, l1.original, epsilon = 1e-15);
    }

    #[test]
    fn loss_decomposition_holds_in_log() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let w = WeightStore::init_random(&g, 4);
        let data = synthetic_dataset("classes=3,n=48,hw=8,channels=2", 9).unwrap();
        let config = TrainingConfig {
            alpha_schedule: vec![0.5],
            gating_lr: vec![LrStep { epochs: 2, lr: 0.01 }],
            finetune_lr: vec![LrStep { epochs: 1, lr: 0.01 }],
            batch_size: 16,
            augment: false,
            ..TrainingConfig::default()
        };
        let out = run_iterative_pruning(&g, &h, &w, &data, &config, &CostObjective::Memory)
            .unwrap();
        assert_eq!(out.log.records.len(), 3);
        for r in &out.log.records {
            let alpha = if r.phase == "gating" { 0.5 } else { 0.0 };
            assert_relative_eq!(
                r.loss_total - alpha * r.loss_computational,
                r.loss_original,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn finetune_never_changes_pruned_set() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let mut w = WeightStore::init_random(&g, 8);
        let data = synthetic_dataset("classes=3,n=32,hw=8,channels=2", 1).unwrap();
        let mut gates = init_gates(&g, &h, 0.005).unwrap();
        // Prune one channel by hand.
        let j = gates.edges.iter().position(|e| e.is_some()).unwrap();
        gates.edges[j].as_mut().unwrap().theta[0] = -1.0;
        prune_check(&mut gates);
        let before: Vec<Vec<bool>> = gates
            .edges
            .iter()
            .flatten()
            .map(|e| e.pruned.clone())
            .collect();
        let theta_before: Vec<Array1<f64>> = gates
            .edges
            .iter()
            .flatten()
            .map(|e| e.theta.clone())
            .collect();
        let config = TrainingConfig {
            finetune_lr: vec![LrStep { epochs: 1, lr: 0.01 }],
            batch_size: 16,
            augment: false,
            ..TrainingConfig::default()
        };
        let mut log = PruningRunLog::default();
        run_phase(
            PhaseKind::Finetune,
            &g,
            &h,
            &mut w,
            &mut gates,
            &data,
            &config,
            &CostObjective::Memory,
            0.0,
            0,
            &mut log,
        )
        .unwrap();
        let after: Vec<Vec<bool>> = gates
            .edges
            .iter()
            .flatten()
            .map(|e| e.pruned.clone())
            .collect();
        let theta_after: Vec<Array1<f64>> = gates
            .edges
            .iter()
            .flatten()
            .map(|e| e.theta.clone())
            .collect();
        assert_eq!(before, after);
        assert_eq!(theta_before, theta_after);
    }

    #[test]
    fn runs_are_deterministic() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let w = WeightStore::init_random(&g, 13);
        let data = synthetic_dataset("classes=3,n=48,hw=8,channels=2", 21).unwrap();
        let config = TrainingConfig {
            alpha_schedule: vec![0.5, 1.0],
            gating_lr: vec![LrStep { epochs: 1, lr: 0.01 }],
            finetune_lr: vec![LrStep { epochs: 1, lr: 0.01 }],
            batch_size: 16,
            ..TrainingConfig::default()
        };
        let a = run_iterative_pruning(&g, &h, &w, &data, &config, &CostObjective::Flops).unwrap();
        let b = run_iterative_pruning(&g, &h, &w, &data, &config, &CostObjective::Flops).unwrap();
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
        assert_eq!(a.final_weights, b.final_weights);
    }

    #[test]
    fn empty_schedule_is_a_noop() {
        let g = tiny_net();
        let h = build_hypergraph(&g).unwrap();
        let w = WeightStore::init_random(&g, 2);
        let data = synthetic_dataset("classes=3,n=16,hw=8,channels=2", 2).unwrap();
        let config = TrainingConfig {
            alpha_schedule: vec![],
            ..TrainingConfig::default()
        };
        let out = run_iterative_pruning(&g, &h, &w, &data, &config, &CostObjective::Memory)
            .unwrap();
        assert_eq!(out.final_weights, w);
        assert!(out.log.records.is_empty());
        assert_eq!(out.gates.total_pruned(), 0);
    }

    #[test]
    fn estimate_matches_counters_at_full_width() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let counts = full_counts(&h);
        let (flops, params) = estimate_costs(&g, &h, &counts, (16, 16));
        assert_eq!(flops, crate::ir::count_flops(&g, (16, 16)));
        assert_eq!(params, crate::ir::count_params(&g));
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let log = PruningRunLog {
            records: vec![EpochRecord {
                iteration: 0,
                phase: "gating".into(),
                epoch: 1,
                lr: 0.01,
                loss_original: 1.5,
                loss_computational: 0.9,
                loss_total: 2.4,
                eval_accuracy: 0.75,
                pruned_per_edge: vec![0, 2],
                flops_estimate: 1000,
                memory_estimate: 50,
                skipped_edges: vec![],
            }],
        };
        let text = log.to_jsonl();
        assert_eq!(PruningRunLog::from_jsonl(&text).unwrap(), log);
    }
}
