//! Reference executor for the layer graph.
//!
//! Activations are released as soon as their last consumer has run, so large
//! graphs stay within memory at batch sizes used for equivalence checks.

use ndarray::{Array1, Array2, Array4, Axis};

use super::{LayerKind, NetworkGraph, WeightStore};
use crate::{nn, GatorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; updates batchnorm running statistics.
    Train,
    /// Running statistics; no mutation.
    Eval,
}

/// Spatial size of every layer's output for the given input size.
pub fn output_spatial(g: &NetworkGraph, input_hw: (usize, usize)) -> Vec<(usize, usize)> {
    super::count::spatial_plan(g, input_hw)
}

/// Run the network. `masks`, when present, holds an optional per-channel
/// multiplier per layer, applied to that layer's output (the gating hook).
/// Returns logits `[batch, classes]`.
pub fn forward(
    g: &NetworkGraph,
    w: &mut WeightStore,
    batch: &Array4<f64>,
    mode: Mode,
    masks: Option<&[Option<Array1<f64>>]>,
) -> Result<Array2<f64>> {
    if let Some(m) = masks {
        assert_eq!(m.len(), g.len(), "one mask slot per layer");
    }
    let n = batch.dim().0;
    let mut remaining: Vec<usize> = vec![0; g.len()];
    for i in 0..g.len() {
        for &p in g.preds(i) {
            remaining[p] += 1;
        }
    }
    let mut acts: Vec<Option<Array4<f64>>> = vec![None; g.len()];
    let mut out = None;
    for i in 0..g.len() {
        let layer = g.layer(i);
        let preds = g.preds(i);
        let take = |acts: &[Option<Array4<f64>>], p: usize| -> Array4<f64> {
            acts[p].as_ref().expect("topological order").clone()
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
                let x = take(&acts, preds[0]);
                let weight = w.conv_weight(&layer.id)?;
                let (y, _) = nn::conv2d_forward(&x.view(), &weight.view(), *stride, *padding);
                y
            }
            LayerKind::BatchNorm { .. } => {
                let x = take(&acts, preds[0]);
                let gamma = w.bn_param(&layer.id, "gamma")?;
                let beta = w.bn_param(&layer.id, "beta")?;
                match mode {
                    Mode::Eval => {
                        let rm = w.bn_param(&layer.id, "running_mean")?;
                        let rv = w.bn_param(&layer.id, "running_var")?;
                        nn::batchnorm_forward_eval(
                            &x.view(),
                            &gamma.view(),
                            &beta.view(),
                            &rm.view(),
                            &rv.view(),
                        )
                    }
                    Mode::Train => {
                        let mut rm = w.bn_param(&layer.id, "running_mean")?;
                        let mut rv = w.bn_param(&layer.id, "running_var")?;
                        let (y, _) = nn::batchnorm_forward_train(
                            &x.view(),
                            &gamma.view(),
                            &beta.view(),
                            &mut rm,
                            &mut rv,
                        );
                        *w.get_mut(&format!("{}.running_mean", layer.id))? = rm.into_dyn();
                        *w.get_mut(&format!("{}.running_var", layer.id))? = rv.into_dyn();
                        y
                    }
                }
            }
            LayerKind::Relu => nn::relu_forward(&take(&acts, preds[0]).view()),
            LayerKind::Add => {
                let mut y = take(&acts, preds[0]);
                for &p in &preds[1..] {
                    let x = acts[p].as_ref().expect("topological order");
                    if x.dim() != y.dim() {
                        return Err(GatorError::ShapeMismatch(format!(
                            "add `{}` inputs {:?} vs {:?}",
                            layer.id,
                            y.dim(),
                            x.dim()
                        )));
                    }
                    y += x;
                }
                y
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let x = take(&acts, preds[0]);
                nn::maxpool_forward(&x.view(), *kernel, *stride, *padding).0
            }
            LayerKind::GlobalAvgPool => nn::gap_forward(&take(&acts, preds[0]).view()),
            LayerKind::FullyConnected { .. } => {
                let x = take(&acts, preds[0]);
                if x.dim().2 != 1 || x.dim().3 != 1 {
                    return Err(GatorError::ShapeMismatch(format!(
                        "fully-connected `{}` expects 1x1 spatial input, got {:?}",
                        layer.id,
                        x.dim()
                    )));
                }
                let weight = w.fc_weight(&layer.id)?;
                nn::linear_forward(&x.view(), &weight.view())
            }
            LayerKind::Output => take(&acts, preds[0]),
        };
        if let Some(masks) = masks {
            if let Some(mask) = &masks[i] {
                apply_channel_mask(&mut y, mask);
            }
        }
        if matches!(layer.kind, LayerKind::Output) {
            let c = y.dim().1;
            out = Some(y.to_shape((n, c)).expect("logits reshape").to_owned());
        } else {
            acts[i] = Some(y);
        }
        for &p in preds {
            remaining[p] -= 1;
            if remaining[p] == 0 {
                acts[p] = None;
            }
        }
    }
    out.ok_or_else(|| GatorError::InvalidGraph("no output layer reached".into()))
}

pub(crate) fn apply_channel_mask(y: &mut Array4<f64>, mask: &Array1<f64>) {
    assert_eq!(y.dim().1, mask.len(), "mask length must equal channel count");
    for (ci, &m) in mask.iter().enumerate() {
        if m != 1.0 {
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * m);
        }
    }
}
