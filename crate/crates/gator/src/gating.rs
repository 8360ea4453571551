//! Stochastic hard channel gates.
//!
//! A gate is `g(θ) = sign(θ + x)` with logistic noise `x`, so a channel stays
//! open with probability `σ(θ)`. The forward pass is exactly binary; the
//! backward pass substitutes the sigmoid derivative `σ′((θ+x)/τ)/τ` for the
//! sign's zero derivative. Channels whose survival probability falls to 0.5
//! (θ ≤ 0) are pruned permanently: their gate is forced closed and their θ is
//! never updated again. Every non-removable edge keeps at least one live
//! channel so the trunk cannot be severed.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hypergraph::DependencyHypergraph;
use crate::ir::NetworkGraph;
use crate::nn::{logistic_sigmoid, sigmoid_derivative};
use crate::{GatorError, Result};

/// How much noise a batch shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One draw per channel, shared by the whole batch.
    PerBatch,
    /// Independent noise per sample (the default).
    PerSample,
}

/// Gates of a single prunable edge.
#[derive(Debug, Clone)]
pub struct EdgeGates {
    pub theta: Array1<f64>,
    pub pruned: Vec<bool>,
    /// Whether this edge may legally shrink to zero channels.
    pub removable: bool,
}

impl EdgeGates {
    pub fn live_count(&self) -> usize {
        self.pruned.iter().filter(|&&p| !p).count()
    }
}

/// Gate logits and pruning flags for every prunable edge (`None` for frozen
/// edges, which carry no gates).
#[derive(Debug, Clone)]
pub struct GateState {
    pub edges: Vec<Option<EdgeGates>>,
    pub tau: f64,
}

impl GateState {
    /// Channels currently considered kept by the deterministic rule:
    /// σ(θ) ≥ 0.5 and not permanently pruned. Frozen edges report their full
    /// width.
    pub fn active_counts(&self, h: &DependencyHypergraph) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .map(|(j, e)| match e {
                Some(eg) => eg
                    .theta
                    .iter()
                    .zip(&eg.pruned)
                    .filter(|&(&t, &p)| !p && t >= 0.0)
                    .count(),
                None => h.edges()[j].channel_count,
            })
            .collect()
    }

    /// Deterministic 0/1 masks holding pruned channels at zero (fine-tune
    /// and evaluation mode). Frozen edges get no mask.
    pub fn fixed_masks(&self) -> Vec<Option<Array1<f64>>> {
        self.edges
            .iter()
            .map(|e| {
                e.as_ref().map(|eg| {
                    Array1::from_iter(eg.pruned.iter().map(|&p| if p { 0.0 } else { 1.0 }))
                })
            })
            .collect()
    }

    pub fn total_channels(&self) -> usize {
        self.edges
            .iter()
            .flatten()
            .map(|e| e.theta.len())
            .sum()
    }

    pub fn total_pruned(&self) -> usize {
        self.edges
            .iter()
            .flatten()
            .map(|e| e.pruned.iter().filter(|&&p| p).count())
            .sum()
    }
}

/// One noise realization: per prunable edge, logistic noise `x` and the
/// binary gates `g`, shaped `[rows, channels]` with `rows` either 1
/// (per-batch) or the batch size (per-sample).
#[derive(Debug, Clone)]
pub struct GateDraw {
    pub x: Vec<Option<Array2<f64>>>,
    pub g: Vec<Option<Array2<f64>>>,
}

impl GateDraw {
    /// Mean over rows of each edge's open-gate count; frozen edges report
    /// their full width so the vector lines up with the hypergraph.
    pub fn gate_sums(&self, h: &DependencyHypergraph) -> Vec<f64> {
        self.g
            .iter()
            .enumerate()
            .map(|(j, g)| match g {
                Some(g) => g.sum() / g.nrows() as f64,
                None => h.edges()[j].channel_count as f64,
            })
            .collect()
    }
}

/// All gates open with probability `1 − p_gate`.
pub fn init_gates(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    p_gate: f64,
) -> Result<GateState> {
    if !(p_gate > 0.0 && p_gate < 0.5) {
        return Err(GatorError::Gating(format!(
            "gating probability {p_gate} outside (0, 0.5)"
        )));
    }
    let theta0 = ((1.0 - p_gate) / p_gate).ln();
    let edges = h
        .edges()
        .iter()
        .map(|e| {
            if e.frozen {
                None
            } else {
                Some(EdgeGates {
                    theta: Array1::from_elem(e.channel_count, theta0),
                    pruned: vec![false; e.channel_count],
                    removable: h.edge_removable(g, e.id),
                })
            }
        })
        .collect();
    Ok(GateState { edges, tau: 1.0 })
}

/// Draw noise and gates for every prunable edge; `rows` is 1 for per-batch
/// granularity or the batch size for per-sample. Deterministic given the
/// generator state.
pub fn sample_gates(state: &GateState, rng: &mut ChaCha8Rng, rows: usize) -> GateDraw {
    let mut xs = Vec::with_capacity(state.edges.len());
    let mut gs = Vec::with_capacity(state.edges.len());
    for edge in &state.edges {
        match edge {
            None => {
                xs.push(None);
                gs.push(None);
            }
            Some(eg) => {
                let c = eg.theta.len();
                let mut x = Array2::zeros((rows, c));
                let mut g = Array2::zeros((rows, c));
                for r in 0..rows {
                    for i in 0..c {
                        if eg.pruned[i] {
                            continue;
                        }
                        let u: f64 = rng.random();
                        let noise = (u / (1.0 - u)).ln();
                        x[(r, i)] = noise;
                        g[(r, i)] = if eg.theta[i] + noise >= 0.0 { 1.0 } else { 0.0 };
                    }
                }
                xs.push(Some(x));
                gs.push(Some(g));
            }
        }
    }
    GateDraw { x: xs, g: gs }
}

/// Multiply channel `i` of each sample by its gate. `g` has one row (shared)
/// or one row per sample.
pub fn gate_forward(act: &Array4<f64>, g: &Array2<f64>) -> Result<Array4<f64>> {
    let (n, c, _, _) = act.dim();
    if g.ncols() != c || (g.nrows() != 1 && g.nrows() != n) {
        return Err(GatorError::ShapeMismatch(format!(
            "gate draw [{}, {}] against activations [{n}, {c}, ..]",
            g.nrows(),
            g.ncols()
        )));
    }
    let mut out = act.clone();
    for s in 0..n {
        let row = if g.nrows() == 1 { 0 } else { s };
        for i in 0..c {
            if g[(row, i)] == 0.0 {
                out.index_axis_mut(Axis(0), s)
                    .index_axis_mut(Axis(0), i)
                    .fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Backward through the gate: the data path uses the hard mask, the logit
/// path the sigmoid surrogate at the retained noise.
#[allow(clippy::too_many_arguments)]
pub fn gate_backward(
    upstream: &Array4<f64>,
    act: &Array4<f64>,
    x: &Array2<f64>,
    g: &Array2<f64>,
    theta: &Array1<f64>,
    tau: f64,
    pruned: &[bool],
) -> Result<(Array4<f64>, Array1<f64>)> {
    let (n, c, h, w) = act.dim();
    if upstream.dim() != act.dim() || g.ncols() != c || x.dim() != g.dim() {
        return Err(GatorError::ShapeMismatch(format!(
            "gate backward shapes: upstream {:?}, activations {:?}, draw [{}, {}]",
            upstream.dim(),
            act.dim(),
            g.nrows(),
            g.ncols()
        )));
    }
    let mut grad_act = upstream.clone();
    let mut grad_theta = Array1::zeros(c);
    for s in 0..n {
        let row = if g.nrows() == 1 { 0 } else { s };
        for i in 0..c {
            if g[(row, i)] == 0.0 {
                grad_act
                    .index_axis_mut(Axis(0), s)
                    .index_axis_mut(Axis(0), i)
                    .fill(0.0);
            }
            if pruned[i] {
                continue;
            }
            let mut dot = 0.0;
            for y in 0..h {
                for z in 0..w {
                    dot += upstream[(s, i, y, z)] * act[(s, i, y, z)];
                }
            }
            grad_theta[i] += dot * sigmoid_derivative((theta[i] + x[(row, i)]) / tau) / tau;
        }
    }
    Ok((grad_act, grad_theta))
}

/// Mark every live channel with θ ≤ 0 as permanently pruned, except that a
/// non-removable edge keeps its highest-θ channel (ties broken by lowest
/// index). Returns (edge, channel) pairs newly pruned.
pub fn prune_check(state: &mut GateState) -> Vec<(usize, usize)> {
    let mut newly = Vec::new();
    for (j, edge) in state.edges.iter_mut().enumerate() {
        let Some(eg) = edge else { continue };
        let candidates: Vec<usize> = (0..eg.theta.len())
            .filter(|&i| !eg.pruned[i] && eg.theta[i] <= 0.0)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let mut survivors_kept = usize::MAX;
        if !eg.removable && candidates.len() == eg.live_count() {
            let mut best = candidates[0];
            for &i in &candidates[1..] {
                if eg.theta[i] > eg.theta[best] {
                    best = i;
                }
            }
            survivors_kept = best;
        }
        for i in candidates {
            if i == survivors_kept {
                continue;
            }
            eg.pruned[i] = true;
            newly.push((j, i));
        }
    }
    newly
}

/// Probability a gate is open, `σ(θ)`.
pub fn open_probability(theta: f64) -> f64 {
    logistic_sigmoid(theta)
}

/// Gate checkpoint as a weight container: per prunable edge `j`, arrays
/// `edge{j}.theta` and `edge{j}.pruned` (0.0 / 1.0), plus a scalar `tau`.
pub fn gates_to_store(state: &GateState) -> crate::ir::WeightStore {
    use ndarray::ArrayD;
    let mut store = crate::ir::WeightStore::new();
    store.insert(
        "tau".to_string(),
        ArrayD::from_shape_vec(vec![1], vec![state.tau]).expect("scalar"),
    );
    for (j, eg) in state.edges.iter().enumerate() {
        let Some(eg) = eg else { continue };
        store.insert(
            format!("edge{j}.theta"),
            eg.theta.clone().into_dyn(),
        );
        let flags: Vec<f64> = eg.pruned.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        store.insert(
            format!("edge{j}.pruned"),
            ArrayD::from_shape_vec(vec![flags.len()], flags).expect("flags"),
        );
    }
    store
}

/// Inverse of [`gates_to_store`]; removability is recomputed from the graph,
/// and widths are checked against the hypergraph.
pub fn gates_from_store(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    store: &crate::ir::WeightStore,
) -> Result<GateState> {
    let tau_arr = store.get("tau")?;
    let tau = *tau_arr.iter().next().ok_or_else(|| {
        GatorError::Gating("gate checkpoint has an empty tau array".into())
    })?;
    if !(tau > 0.0) {
        return Err(GatorError::Gating(format!("non-positive tau {tau}")));
    }
    let mut edges = Vec::with_capacity(h.edges().len());
    for (j, edge) in h.edges().iter().enumerate() {
        if edge.frozen {
            edges.push(None);
            continue;
        }
        let theta = store.get(&format!("edge{j}.theta"))?;
        let flags = store.get(&format!("edge{j}.pruned"))?;
        if theta.len() != edge.channel_count || flags.len() != edge.channel_count {
            return Err(GatorError::Gating(format!(
                "edge {j}: checkpoint width {} does not match the network's {}",
                theta.len(),
                edge.channel_count
            )));
        }
        let theta = Array1::from_iter(theta.iter().copied());
        let pruned: Vec<bool> = flags.iter().map(|&f| f != 0.0).collect();
        for (c, (&t, &p)) in theta.iter().zip(&pruned).enumerate() {
            if p && t > 0.0 {
                return Err(GatorError::Gating(format!(
                    "edge {j} channel {c}: pruned flag with positive θ"
                )));
            }
        }
        edges.push(Some(EdgeGates {
            theta,
            pruned,
            removable: h.edge_removable(g, j),
        }));
    }
    Ok(GateState { edges, tau })
}
