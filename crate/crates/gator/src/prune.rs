//! Materializing a learned pruning: weight slicing, empty-branch collapse,
//! and reduction reports.
//!
//! The central property is emitted-equals-gated: slicing the surviving
//! channels out of every member layer of every edge produces a network whose
//! forward pass matches the original network run with the plan's binary
//! masks. Gates mask both conv and batchnorm outputs, so a pruned channel is
//! exactly zero everywhere and removing it cannot change any surviving
//! activation (up to float summation order).

use std::collections::BTreeMap;

use ndarray::{Array1, Array4, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::gating::GateState;
use crate::hypergraph::{DependencyHypergraph, Side};
use crate::ir::{
    LayerKind, LayerSpec, NetworkGraph, WeightStore, count_flops, count_params,
};
use crate::nn::BN_EPS;
use crate::{GatorError, Result};

/// Ordered surviving channel indices per dependency edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub survivors: Vec<Vec<usize>>,
}

impl PruningPlan {
    /// Keep everything.
    pub fn identity(h: &DependencyHypergraph) -> Self {
        PruningPlan {
            survivors: h
                .edges()
                .iter()
                .map(|e| (0..e.channel_count).collect())
                .collect(),
        }
    }

    pub fn validate(&self, g: &NetworkGraph, h: &DependencyHypergraph) -> Result<()> {
        if self.survivors.len() != h.edges().len() {
            return Err(GatorError::PlanMismatch(format!(
                "plan covers {} edges, hypergraph has {}",
                self.survivors.len(),
                h.edges().len()
            )));
        }
        for (j, (survivors, edge)) in self.survivors.iter().zip(h.edges()).enumerate() {
            if survivors.windows(2).any(|p| p[1] <= p[0]) {
                return Err(GatorError::PlanMismatch(format!(
                    "edge {j}: survivors not strictly increasing"
                )));
            }
            if survivors.iter().any(|&c| c >= edge.channel_count) {
                return Err(GatorError::PlanMismatch(format!(
                    "edge {j}: survivor index out of range (width {})",
                    edge.channel_count
                )));
            }
            if edge.frozen && survivors.len() != edge.channel_count {
                return Err(GatorError::PlanMismatch(format!(
                    "edge {j} is frozen but the plan prunes it"
                )));
            }
            if survivors.is_empty() && !edge.frozen && !h.edge_removable(g, j) {
                return Err(GatorError::PlanMismatch(format!(
                    "edge {j} is not removable but the plan empties it"
                )));
            }
        }
        Ok(())
    }
}

/// Survivors = channels not permanently pruned.
pub fn extract_plan(gates: &GateState, h: &DependencyHypergraph) -> PruningPlan {
    PruningPlan {
        survivors: h
            .edges()
            .iter()
            .enumerate()
            .map(|(j, e)| match &gates.edges[j] {
                Some(eg) => (0..e.channel_count).filter(|&i| !eg.pruned[i]).collect(),
                None => (0..e.channel_count).collect(),
            })
            .collect(),
    }
}

/// An emitted network: rewritten graph, sliced weights, and the mapping from
/// new channel indices back to the original ones per edge.
#[derive(Debug, Clone)]
pub struct PrunedNetwork {
    pub graph: NetworkGraph,
    pub weights: WeightStore,
    pub provenance: Vec<Vec<usize>>,
}

fn select_axis(a: &ArrayD<f64>, axis: usize, idx: &[usize]) -> ArrayD<f64> {
    a.select(Axis(axis), idx)
}

/// Slice every member layer of every edge down to the plan's survivors.
pub fn apply_pruning(
    g: &NetworkGraph,
    w: &WeightStore,
    plan: &PruningPlan,
    h: &DependencyHypergraph,
) -> Result<PrunedNetwork> {
    plan.validate(g, h)?;
    let width = |i: usize, side: Side| -> Result<usize> {
        Ok(plan.survivors[h.edge_of(i, side)?].len())
    };
    let mut layers = Vec::with_capacity(g.len());
    for (i, l) in g.layers().iter().enumerate() {
        let kind = match &l.kind {
            LayerKind::Conv {
                kernel,
                stride,
                padding,
                ..
            } => LayerKind::Conv {
                kernel: *kernel,
                in_channels: width(i, Side::In)?,
                out_channels: width(i, Side::Out)?,
                stride: *stride,
                padding: *padding,
            },
            LayerKind::FullyConnected { .. } => LayerKind::FullyConnected {
                in_features: width(i, Side::In)?,
                out_features: width(i, Side::Out)?,
            },
            LayerKind::BatchNorm { .. } => LayerKind::BatchNorm {
                channels: plan.survivors[h.layer_output_edge(i)].len(),
            },
            other => other.clone(),
        };
        layers.push(LayerSpec {
            id: l.id.clone(),
            kind,
            inputs: l.inputs.clone(),
        });
    }
    let graph = NetworkGraph::new(layers)?;

    let mut weights = WeightStore::new();
    for (i, l) in g.layers().iter().enumerate() {
        match &l.kind {
            LayerKind::Conv { .. } => {
                let out_idx = &plan.survivors[h.edge_of(i, Side::Out)?];
                let in_idx = &plan.survivors[h.edge_of(i, Side::In)?];
                let arr = w.get(&format!("{}.weight", l.id))?;
                let sliced = select_axis(&select_axis(arr, 0, out_idx), 1, in_idx);
                weights.insert(format!("{}.weight", l.id), sliced);
            }
            LayerKind::FullyConnected { .. } => {
                let out_idx = &plan.survivors[h.edge_of(i, Side::Out)?];
                let in_idx = &plan.survivors[h.edge_of(i, Side::In)?];
                let arr = w.get(&format!("{}.weight", l.id))?;
                let sliced = select_axis(&select_axis(arr, 0, out_idx), 1, in_idx);
                weights.insert(format!("{}.weight", l.id), sliced);
            }
            LayerKind::BatchNorm { .. } => {
                let idx = &plan.survivors[h.layer_output_edge(i)];
                for field in ["gamma", "beta", "running_mean", "running_var"] {
                    let arr = w.get(&format!("{}.{field}", l.id))?;
                    weights.insert(format!("{}.{field}", l.id), select_axis(arr, 0, idx));
                }
            }
            _ => {}
        }
    }
    weights.validate_against(&graph)?;
    Ok(PrunedNetwork {
        graph,
        weights,
        provenance: plan.survivors.clone(),
    })
}

/// Per-layer binary masks equivalent to a plan, for the reference executor.
pub fn plan_masks(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    plan: &PruningPlan,
) -> Vec<Option<Array1<f64>>> {
    (0..g.len())
        .map(|i| {
            if !matches!(
                g.layer(i).kind,
                LayerKind::Conv { .. } | LayerKind::BatchNorm { .. }
            ) {
                return None;
            }
            let j = h.layer_output_edge(i);
            let edge = &h.edges()[j];
            let mut mask = Array1::zeros(edge.channel_count);
            for &c in &plan.survivors[j] {
                mask[c] = 1.0;
            }
            Some(mask)
        })
        .collect()
}

/// Delete residual branches that became identically zero because an internal
/// edge was pruned to nothing. A dead branch whose batchnorm still shifts the
/// zeros to a non-zero constant (eval-mode `β − γ·μ/√(σ²+ε)` ≠ 0) cannot be
/// deleted without changing the function and is reported instead.
pub fn collapse_empty_blocks(net: &PrunedNetwork) -> Result<PrunedNetwork> {
    let g = &net.graph;
    let w = &net.weights;
    let n = g.len();
    // zero: output is identically 0 for every input. empty: 0 channels.
    // taint: dead upstream but constant non-zero output (the error case).
    let mut zero = vec![false; n];
    let mut empty = vec![false; n];
    let mut taint: Vec<Option<String>> = vec![None; n];
    for i in 0..n {
        let l = g.layer(i);
        let preds = g.preds(i);
        empty[i] = g.channels_out(i) == 0 && !matches!(l.kind, LayerKind::Input { .. });
        match &l.kind {
            LayerKind::Input { .. } => {}
            LayerKind::Conv { in_channels, .. } => {
                zero[i] = *in_channels == 0 || zero[preds[0]] || empty[preds[0]];
                taint[i] = taint[preds[0]].clone();
            }
            LayerKind::FullyConnected { in_features, .. } => {
                zero[i] = *in_features == 0 || zero[preds[0]] || empty[preds[0]];
                taint[i] = taint[preds[0]].clone();
            }
            LayerKind::BatchNorm { channels } => {
                taint[i] = taint[preds[0]].clone();
                if empty[preds[0]] || *channels == 0 {
                    zero[i] = *channels == 0;
                } else if zero[preds[0]] {
                    let gamma = w.bn_param(&l.id, "gamma")?;
                    let beta = w.bn_param(&l.id, "beta")?;
                    let rm = w.bn_param(&l.id, "running_mean")?;
                    let rv = w.bn_param(&l.id, "running_var")?;
                    let shifted = (0..*channels).any(|c| {
                        (beta[c] - gamma[c] * rm[c] / (rv[c] + BN_EPS).sqrt()).abs() > 1e-12
                    });
                    if shifted {
                        taint[i] = Some(l.id.clone());
                    } else {
                        zero[i] = true;
                    }
                }
            }
            LayerKind::Add => {
                zero[i] = preds.iter().all(|&p| zero[p]);
                taint[i] = preds.iter().find_map(|&p| taint[p].clone());
            }
            _ => {
                zero[i] = zero[preds[0]];
                taint[i] = taint[preds[0]].clone();
            }
        }
    }

    // Rewrite add layers: drop inputs that are identically zero (or carry no
    // channels); error on tainted dead inputs.
    let mut new_inputs: Vec<Vec<String>> = g.layers().iter().map(|l| l.inputs.clone()).collect();
    let mut redirect: BTreeMap<String, String> = BTreeMap::new();
    for i in 0..n {
        if !matches!(g.layer(i).kind, LayerKind::Add) {
            continue;
        }
        let preds = g.preds(i);
        for &p in preds {
            if let Some(src) = &taint[p] {
                return Err(GatorError::NonCollapsible(format!(
                    "batchnorm `{src}` shifts a dead branch away from zero (feeds add `{}`)",
                    g.layer(i).id
                )));
            }
        }
        let kept: Vec<String> = preds
            .iter()
            .filter(|&&p| !zero[p])
            .map(|&p| g.layer(p).id.clone())
            .collect();
        if kept.is_empty() {
            continue; // whole add is zero; leave for upstream handling
        }
        if kept.len() == 1 {
            redirect.insert(g.layer(i).id.clone(), kept[0].clone());
        }
        new_inputs[i] = kept;
    }

    // Resolve redirect chains and drop the collapsed adds, then keep only
    // layers still reachable backwards from the output.
    let resolve = |mut id: String| -> String {
        while let Some(next) = redirect.get(&id) {
            id = next.clone();
        }
        id
    };
    let mut keep = vec![false; n];
    let mut stack = vec![g.output_layer()];
    let index_of = |id: &str| g.index_of(id).expect("known layer id");
    while let Some(i) = stack.pop() {
        if keep[i] {
            continue;
        }
        keep[i] = true;
        for input in &new_inputs[i] {
            let target = index_of(&resolve(input.clone()));
            if !keep[target] {
                stack.push(target);
            }
        }
    }
    let mut layers = Vec::new();
    for i in 0..n {
        let l = g.layer(i);
        if !keep[i] || redirect.contains_key(&l.id) {
            continue;
        }
        layers.push(LayerSpec {
            id: l.id.clone(),
            kind: l.kind.clone(),
            inputs: new_inputs[i].iter().map(|s| resolve(s.clone())).collect(),
        });
    }
    let graph = NetworkGraph::new(layers)?;
    let mut weights = WeightStore::new();
    for (name, arr) in w.iter() {
        let layer_id = name.rsplit_once('.').map(|(l, _)| l).unwrap_or(name);
        if graph.index_of(layer_id).is_some() {
            weights.insert(name.clone(), arr.clone());
        }
    }
    weights.validate_against(&graph)?;
    Ok(PrunedNetwork {
        graph,
        weights,
        provenance: net.provenance.clone(),
    })
}

/// Reduction metrics, recomputed from the emitted graph (never the plan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub flops_original: u64,
    pub flops_pruned: u64,
    pub flops_reduction: f64,
    pub params_original: u64,
    pub params_pruned: u64,
    pub memory_reduction: f64,
    pub survivors_per_edge: Vec<usize>,
    pub layers_original: usize,
    pub layers_pruned: usize,
}

pub fn report(
    original: &NetworkGraph,
    pruned: &PrunedNetwork,
    input_hw: (usize, usize),
) -> PruneReport {
    let fo = count_flops(original, input_hw);
    let fp = count_flops(&pruned.graph, input_hw);
    let po = count_params(original);
    let pp = count_params(&pruned.graph);
    PruneReport {
        flops_original: fo,
        flops_pruned: fp,
        flops_reduction: 1.0 - fp as f64 / fo as f64,
        params_original: po,
        params_pruned: pp,
        memory_reduction: 1.0 - pp as f64 / po as f64,
        survivors_per_edge: pruned.provenance.iter().map(|s| s.len()).collect(),
        layers_original: original.len(),
        layers_pruned: pruned.graph.len(),
    }
}

/// Max abs difference between the masked original and the emitted network
/// over a batch (eval mode).
pub fn forward_gap(
    g: &NetworkGraph,
    w: &WeightStore,
    h: &DependencyHypergraph,
    plan: &PruningPlan,
    emitted: &PrunedNetwork,
    batch: &Array4<f64>,
) -> Result<f64> {
    use crate::ir::{Mode, forward};
    let masks = plan_masks(g, h, plan);
    let mut w_gated = w.clone();
    let gated = forward(g, &mut w_gated, batch, Mode::Eval, Some(&masks))?;
    let mut w_emitted = emitted.weights.clone();
    let direct = forward(&emitted.graph, &mut w_emitted, batch, Mode::Eval, None)?;
    let gap = gated
        .iter()
        .zip(direct.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(gap)
}

/// Helper for random plans in tests and the profiler: keep `keep[j]` channels
/// of each non-frozen edge (lowest indices), floor-respecting.
pub fn uniform_plan(h: &DependencyHypergraph, keep_fraction: f64) -> PruningPlan {
    PruningPlan {
        survivors: h
            .edges()
            .iter()
            .map(|e| {
                if e.frozen {
                    (0..e.channel_count).collect()
                } else {
                    let keep = ((e.channel_count as f64 * keep_fraction).ceil() as usize)
                        .clamp(1, e.channel_count);
                    (0..keep).collect()
                }
            })
            .collect(),
    }
}

/// Random floor-respecting plan, used by equivalence and oracle suites.
pub fn random_plan(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> PruningPlan {
    use rand::Rng;
    PruningPlan {
        survivors: h
            .edges()
            .iter()
            .map(|e| {
                if e.frozen {
                    return (0..e.channel_count).collect();
                }
                let removable = h.edge_removable(g, e.id);
                loop {
                    let survivors: Vec<usize> =
                        (0..e.channel_count).filter(|_| rng.random::<f64>() < 0.6).collect();
                    if !survivors.is_empty() || removable {
                        return survivors;
                    }
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::init_gates;
    use crate::hypergraph::build_hypergraph;
    use crate::ir::builtin_graph;
    use crate::rng::stream;
    use rand::Rng;

    fn toy() -> (NetworkGraph, DependencyHypergraph, WeightStore) {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let w = WeightStore::init_random(&g, 5);
        (g, h, w)
    }

    fn batch(seed: u64, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = stream(seed, "prune-batch");
        Array4::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn identity_plan_is_forward_equal() {
        let (g, h, w) = toy();
        let plan = PruningPlan::identity(&h);
        let emitted = apply_pruning(&g, &w, &plan, &h).unwrap();
        assert_eq!(emitted.graph.len(), g.len());
        let gap =
            forward_gap(&g, &w, &h, &plan, &emitted, &batch(1, (4, 3, 16, 16))).unwrap();
        assert!(gap <= 1e-7, "gap {gap}");
    }

    #[test]
    fn random_plans_are_forward_equal() {
        let (g, h, w) = toy();
        for seed in 0..8u64 {
            let mut rng = stream(seed, "plan");
            let plan = random_plan(&g, &h, &mut rng);
            let emitted = apply_pruning(&g, &w, &plan, &h).unwrap();
            let gap =
                forward_gap(&g, &w, &h, &plan, &emitted, &batch(seed, (4, 3, 16, 16)))
                    .unwrap();
            assert!(gap <= 1e-5, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn plan_validation_rejects_bad_plans() {
        let (g, h, _) = toy();
        let mut plan = PruningPlan::identity(&h);
        let frozen = h.edges().iter().position(|e| e.frozen).unwrap();
        plan.survivors[frozen].pop();
        assert!(matches!(
            plan.validate(&g, &h),
            Err(GatorError::PlanMismatch(_))
        ));

        let mut plan = PruningPlan::identity(&h);
        let trunk = h
            .edges()
            .iter()
            .position(|e| !e.frozen && !h.edge_removable(&g, e.id))
            .unwrap();
        plan.survivors[trunk].clear();
        assert!(matches!(
            plan.validate(&g, &h),
            Err(GatorError::PlanMismatch(_))
        ));

        let mut plan = PruningPlan::identity(&h);
        plan.survivors.pop();
        assert!(plan.validate(&g, &h).is_err());
    }

    #[test]
    fn extract_plan_matches_pruned_flags() {
        let (g, h, _) = toy();
        let mut gates = init_gates(&g, &h, 0.005).unwrap();
        let j = h.prunable_edges()[1];
        if let Some(eg) = gates.edges[j].as_mut() {
            eg.pruned[0] = true;
            eg.theta[0] = -1.0;
        }
        let plan = extract_plan(&gates, &h);
        assert!(!plan.survivors[j].contains(&0));
        assert_eq!(
            plan.survivors[j].len(),
            h.edges()[j].channel_count - 1
        );
        plan.validate(&g, &h).unwrap();
    }

    /// Emptying a removable branch edge with init weights (β=0, μ=0) must
    /// collapse: fewer layers, identical outputs.
    #[test]
    fn empty_block_collapses_exactly() {
        let (g, h, w) = toy();
        let removable = h
            .edges()
            .iter()
            .position(|e| !e.frozen && h.edge_removable(&g, e.id))
            .unwrap();
        let mut plan = PruningPlan::identity(&h);
        plan.survivors[removable].clear();
        let emitted = apply_pruning(&g, &w, &plan, &h).unwrap();
        let collapsed = collapse_empty_blocks(&emitted).unwrap();
        assert!(
            collapsed.graph.len() < emitted.graph.len(),
            "no layers removed"
        );
        use crate::ir::{Mode, forward};
        let x = batch(7, (6, 3, 16, 16));
        let mut w1 = emitted.weights.clone();
        let y1 = forward(&emitted.graph, &mut w1, &x, Mode::Eval, None).unwrap();
        let mut w2 = collapsed.weights.clone();
        let y2 = forward(&collapsed.graph, &mut w2, &x, Mode::Eval, None).unwrap();
        let gap = y1
            .iter()
            .zip(y2.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(gap <= 1e-6, "gap {gap}");
    }

    /// A batchnorm that shifts the dead branch away from zero must be
    /// reported, not silently dropped.
    #[test]
    fn shifted_batchnorm_blocks_collapse() {
        let (g, h, mut w) = toy();
        let removable = h
            .edges()
            .iter()
            .position(|e| !e.frozen && h.edge_removable(&g, e.id))
            .unwrap();
        // The batchnorm downstream of the dead edge: the bn attached to the
        // conv that consumes the emptied edge.
        let (consumer, _) = h
            .member_weighted_layers(&g, removable)
            .into_iter()
            .find(|&(_, side)| side == Side::In)
            .unwrap();
        let bn_id = g
            .layers()
            .iter()
            .enumerate()
            .find(|(i, l)| {
                matches!(l.kind, LayerKind::BatchNorm { .. }) && g.preds(*i) == [consumer]
            })
            .map(|(_, l)| l.id.clone())
            .unwrap();
        w.get_mut(&format!("{bn_id}.beta")).unwrap().fill(0.3);
        let mut plan = PruningPlan::identity(&h);
        plan.survivors[removable].clear();
        let emitted = apply_pruning(&g, &w, &plan, &h).unwrap();
        let err = collapse_empty_blocks(&emitted).unwrap_err();
        assert!(matches!(err, GatorError::NonCollapsible(_)), "{err:?}");
    }

    /// Report numbers must come from the emitted graph's own counters.
    #[test]
    fn report_matches_structural_counters() {
        let (g, h, w) = toy();
        let plan = uniform_plan(&h, 0.5);
        let emitted = apply_pruning(&g, &w, &plan, &h).unwrap();
        let r = report(&g, &emitted, (16, 16));
        assert_eq!(r.flops_original, count_flops(&g, (16, 16)));
        assert_eq!(r.flops_pruned, count_flops(&emitted.graph, (16, 16)));
        assert_eq!(r.params_pruned, count_params(&emitted.graph));
        assert!(r.flops_reduction > 0.4 && r.flops_reduction < 0.9);
        assert!(r.memory_reduction > 0.4);
        assert_eq!(r.layers_original, g.len());
        let hist: Vec<usize> = plan.survivors.iter().map(|s| s.len()).collect();
        assert_eq!(r.survivors_per_edge, hist);
    }
}
