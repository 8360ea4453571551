//! Per-edge, per-channel computational cost.
//!
//! Removing one channel from dependency edge `j` removes one output channel
//! from every producer conv of the edge and one input channel from every
//! consumer, so the per-channel cost is a sum over member layers evaluated at
//! the *current* channel counts of the opposite side:
//!
//! ```text
//! memory:  λ_j(t) = Σ_{q ∈ consumers} k_q·c_q_out(t) + Σ_{q ∈ producers} k_q·c_q_in(t)
//! flops:   as memory with each term scaled by the layer's downsample factor
//!          (per-input-pixel units; the classifier head scales by 1/(H·W))
//! latency: measured once as (T_orig − T_half) / (c_j / 2), constant over t
//! ```
//!
//! The computational loss normalizes by the initial total `D = Σ_j c_j·λ_j(0)`
//! over prunable edges, so it starts at exactly 1 and the gradient with
//! respect to each open gate is `λ̂_j(t) = λ_j(t)/D`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::hypergraph::{DependencyHypergraph, Side};
use crate::ir::{LayerKind, NetworkGraph};
use crate::{GatorError, Result};

/// Which resource the pruning loss targets.
#[derive(Debug, Clone)]
pub enum CostObjective {
    Memory,
    Flops,
    Latency(LatencyTable),
}

impl CostObjective {
    pub fn name(&self) -> &'static str {
        match self {
            CostObjective::Memory => "memory",
            CostObjective::Flops => "flops",
            CostObjective::Latency(_) => "latency",
        }
    }
}

/// One measured edge of a [`LatencyTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub t_half: f64,
    /// Seconds per channel, clamped at zero when timing noise makes the
    /// half-pruned variant slower than the original.
    pub lambda: f64,
}

/// Latency measurements: the original network plus one variant per prunable
/// edge with half of that edge's channels removed.
#[derive(Debug, Clone, Default)]
pub struct LatencyTable {
    pub t_orig: f64,
    rows: BTreeMap<usize, LatencyRow>,
}

impl LatencyTable {
    /// `measurements` holds (edge id, T_half seconds, full channel count).
    pub fn new(t_orig: f64, measurements: &[(usize, f64, usize)]) -> Result<Self> {
        if !(t_orig > 0.0) {
            return Err(GatorError::CostModel(format!(
                "non-positive original latency {t_orig}"
            )));
        }
        let mut rows = BTreeMap::new();
        for &(edge, t_half, channels) in measurements {
            if !(t_half > 0.0) {
                return Err(GatorError::CostModel(format!(
                    "non-positive latency {t_half} for edge {edge}"
                )));
            }
            let lambda = (t_orig - t_half).max(0.0) / (channels as f64 / 2.0);
            rows.insert(edge, LatencyRow { t_half, lambda });
        }
        Ok(LatencyTable { t_orig, rows })
    }

    pub fn row(&self, edge: usize) -> Option<&LatencyRow> {
        self.rows.get(&edge)
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &LatencyRow)> {
        self.rows.iter().map(|(&e, r)| (e, r))
    }

    /// Textual form: a header with T_orig, then one `edge t_half lambda` row
    /// per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# gator latency table v1").unwrap();
        writeln!(s, "t_orig {:.17e}", self.t_orig).unwrap();
        for (edge, row) in &self.rows {
            writeln!(s, "{edge} {:.17e} {:.17e}", row.t_half, row.lambda).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t_orig = None;
        let mut rows = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| {
                GatorError::Parse(format!("latency table line {}: {what}", ln + 1))
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "t_orig" {
                let v: f64 = fields
                    .get(1)
                    .ok_or_else(|| bad("missing value"))?
                    .parse()
                    .map_err(|_| bad("bad t_orig"))?;
                t_orig = Some(v);
            } else {
                if fields.len() != 3 {
                    return Err(bad("expected `edge t_half lambda`"));
                }
                let edge: usize = fields[0].parse().map_err(|_| bad("bad edge id"))?;
                let t_half: f64 = fields[1].parse().map_err(|_| bad("bad t_half"))?;
                let lambda: f64 = fields[2].parse().map_err(|_| bad("bad lambda"))?;
                rows.insert(edge, LatencyRow { t_half, lambda });
            }
        }
        let t_orig =
            t_orig.ok_or_else(|| GatorError::Parse("latency table missing t_orig".into()))?;
        Ok(LatencyTable { t_orig, rows })
    }
}

/// Kernel-area and downsample factor of a weighted layer, with the
/// classifier head treated as a 1×1 conv over a single output position.
fn layer_terms(g: &NetworkGraph, layer: usize, input_hw: (usize, usize)) -> (f64, f64) {
    match &g.layer(layer).kind {
        LayerKind::Conv { kernel, .. } => (
            (kernel.0 * kernel.1) as f64,
            g.downsample_factor(layer),
        ),
        LayerKind::FullyConnected { .. } => (1.0, 1.0 / (input_hw.0 * input_hw.1) as f64),
        _ => unreachable!("cost terms requested for unweighted layer"),
    }
}

fn structural_cost(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    counts: &[usize],
    input_hw: (usize, usize),
    j: usize,
    flops: bool,
) -> Result<f64> {
    let edge = h.edge(j)?;
    let mut lambda = 0.0;
    for v in &edge.in_vertices {
        if !matches!(
            g.layer(v.layer).kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        ) {
            continue;
        }
        let (k, d) = layer_terms(g, v.layer, input_hw);
        let out_edge = h.edge_of(v.layer, Side::Out)?;
        lambda += if flops { k * d } else { k } * counts[out_edge] as f64;
    }
    for v in &edge.out_vertices {
        if !matches!(
            g.layer(v.layer).kind,
            LayerKind::Conv { .. } | LayerKind::FullyConnected { .. }
        ) {
            continue;
        }
        let (k, d) = layer_terms(g, v.layer, input_hw);
        let in_edge = h.edge_of(v.layer, Side::In)?;
        lambda += if flops { k * d } else { k } * counts[in_edge] as f64;
    }
    Ok(lambda)
}

/// Per-channel memory cost of edge `j` at the given per-edge channel counts.
pub fn memory_cost(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    counts: &[usize],
    j: usize,
) -> Result<f64> {
    structural_cost(g, h, counts, (1, 1), j, false)
}

/// Per-channel FLOPs cost of edge `j`, in multiply-accumulates per input
/// pixel. `input_hw` fixes the classifier head's share.
pub fn flops_cost(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    counts: &[usize],
    input_hw: (usize, usize),
    j: usize,
) -> Result<f64> {
    structural_cost(g, h, counts, input_hw, j, true)
}

/// Per-channel latency cost of edge `j` (constant over training).
pub fn latency_cost(table: &LatencyTable, j: usize) -> Result<f64> {
    table
        .row(j)
        .map(|r| r.lambda)
        .ok_or_else(|| GatorError::CostModel(format!("latency table has no entry for edge {j}")))
}

/// Full channel counts per edge (no pruning).
pub fn full_counts(h: &DependencyHypergraph) -> Vec<usize> {
    h.edges().iter().map(|e| e.channel_count).collect()
}

/// Cost factors for every edge, with the normalizing denominator frozen at
/// the initial (unpruned) configuration.
#[derive(Debug, Clone)]
pub struct CostFactors {
    /// Raw λ_j(t), indexed by edge id (frozen edges included but never summed).
    pub lambda: Vec<f64>,
    /// λ̂_j(t) = λ_j(t)/D.
    pub lambda_hat: Vec<f64>,
    /// D = Σ_{j prunable} c_j·λ_j at t=0.
    pub denom: f64,
    prunable: Vec<usize>,
}

impl CostFactors {
    /// Evaluate factors at the unpruned network and freeze the denominator.
    pub fn initial(
        g: &NetworkGraph,
        h: &DependencyHypergraph,
        objective: &CostObjective,
        input_hw: (usize, usize),
    ) -> Result<Self> {
        let counts = full_counts(h);
        let lambda = Self::raw(g, h, objective, &counts, input_hw)?;
        let prunable = h.prunable_edges();
        let denom: f64 = prunable
            .iter()
            .map(|&j| counts[j] as f64 * lambda[j])
            .sum();
        if !(denom > 0.0) {
            return Err(GatorError::CostModel(format!(
                "initial cost denominator is {denom}; nothing to normalize"
            )));
        }
        let lambda_hat = lambda.iter().map(|&l| l / denom).collect();
        Ok(CostFactors {
            lambda,
            lambda_hat,
            denom,
            prunable,
        })
    }

    fn raw(
        g: &NetworkGraph,
        h: &DependencyHypergraph,
        objective: &CostObjective,
        counts: &[usize],
        input_hw: (usize, usize),
    ) -> Result<Vec<f64>> {
        (0..h.edges().len())
            .map(|j| match objective {
                CostObjective::Memory => memory_cost(g, h, counts, j),
                CostObjective::Flops => flops_cost(g, h, counts, input_hw, j),
                CostObjective::Latency(table) => {
                    if h.edges()[j].frozen {
                        Ok(0.0)
                    } else {
                        latency_cost(table, j)
                    }
                }
            })
            .collect()
    }

    /// Re-evaluate λ_j(t) at new channel counts, keeping D frozen.
    pub fn refresh(
        &mut self,
        g: &NetworkGraph,
        h: &DependencyHypergraph,
        objective: &CostObjective,
        counts: &[usize],
        input_hw: (usize, usize),
    ) -> Result<()> {
        self.lambda = Self::raw(g, h, objective, counts, input_hw)?;
        self.lambda_hat = self.lambda.iter().map(|&l| l / self.denom).collect();
        Ok(())
    }

    pub fn prunable(&self) -> &[usize] {
        &self.prunable
    }
}

/// `Σ_j c_j(t)·λ_j(t) / D` over prunable edges; `draws[j]` is the gate sum of
/// edge j (indexed by edge id, frozen entries ignored).
pub fn computational_loss(draws: &[f64], factors: &CostFactors) -> Result<f64> {
    if draws.len() != factors.lambda.len() {
        return Err(GatorError::CostModel(format!(
            "gate-sum vector has {} entries, hypergraph has {} edges",
            draws.len(),
            factors.lambda.len()
        )));
    }
    Ok(factors
        .prunable
        .iter()
        .map(|&j| draws[j] * factors.lambda_hat[j])
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::build_hypergraph;
    use crate::ir::{builtin_graph, count_flops, count_params, parse_network};
    use approx::assert_relative_eq;

    fn two_conv(stride_b: usize) -> NetworkGraph {
        let pad = r#""padding":[1,1],"#;
        parse_network(&format!(
            r#"{{"layers":[
            {{"id":"input","kind":"input","channels":3}},
            {{"id":"a","kind":"conv","kernel":[3,3],"in_channels":3,"out_channels":8,"inputs":["input"]}},
            {{"id":"b","kind":"conv","kernel":[3,3],"in_channels":8,"out_channels":32,"stride":{stride_b},{pad}"inputs":["a"]}},
            {{"id":"output","kind":"output","inputs":["b"]}}
        ]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn memory_cost_matches_hand_value() {
        let g = two_conv(1);
        let h = build_hypergraph(&g).unwrap();
        let j = h.edge_of_id(&g, "a", Side::Out).unwrap();
        let counts = full_counts(&h);
        assert_eq!(memory_cost(&g, &h, &counts, j).unwrap(), 315.0);
        // Pretend b's output group was pruned to 16.
        let mut pruned = counts.clone();
        let out_b = h.edge_of_id(&g, "b", Side::Out).unwrap();
        pruned[out_b] = 16;
        assert_eq!(memory_cost(&g, &h, &pruned, j).unwrap(), 171.0);
    }

    #[test]
    fn memory_cost_matches_param_count_difference() {
        // Brute-force oracle: deleting one channel of the group changes
        // count_params by exactly lambda.
        let g = two_conv(1);
        let h = build_hypergraph(&g).unwrap();
        let j = h.edge_of_id(&g, "a", Side::Out).unwrap();
        let counts = full_counts(&h);
        let lam = memory_cost(&g, &h, &counts, j).unwrap();
        let smaller = parse_network(
            r#"{"layers":[
            {"id":"input","kind":"input","channels":3},
            {"id":"a","kind":"conv","kernel":[3,3],"in_channels":3,"out_channels":7,"inputs":["input"]},
            {"id":"b","kind":"conv","kernel":[3,3],"in_channels":7,"out_channels":32,"inputs":["a"]},
            {"id":"output","kind":"output","inputs":["b"]}
        ]}"#,
        )
        .unwrap();
        assert_eq!(
            count_params(&g) - count_params(&smaller),
            lam as u64
        );
    }

    #[test]
    fn flops_cost_matches_hand_value() {
        let g = two_conv(2);
        let h = build_hypergraph(&g).unwrap();
        let j = h.edge_of_id(&g, "a", Side::Out).unwrap();
        let counts = full_counts(&h);
        let lam = flops_cost(&g, &h, &counts, (16, 16), j).unwrap();
        assert_relative_eq!(lam, 99.0, max_relative = 1e-12);
        // With every member at d=1, flops degenerates to memory.
        let g1 = two_conv(1);
        let h1 = build_hypergraph(&g1).unwrap();
        let j1 = h1.edge_of_id(&g1, "a", Side::Out).unwrap();
        assert_eq!(
            flops_cost(&g1, &h1, &full_counts(&h1), (16, 16), j1).unwrap(),
            memory_cost(&g1, &h1, &full_counts(&h1), j1).unwrap()
        );
    }

    #[test]
    fn flops_cost_matches_flops_count_difference() {
        // Per-input-pixel units: count_flops difference per removed channel,
        // divided by the input pixel count.
        let g = two_conv(2);
        let h = build_hypergraph(&g).unwrap();
        let j = h.edge_of_id(&g, "a", Side::Out).unwrap();
        let lam = flops_cost(&g, &h, &full_counts(&h), (16, 16), j).unwrap();
        let smaller = parse_network(
            r#"{"layers":[
            {"id":"input","kind":"input","channels":3},
            {"id":"a","kind":"conv","kernel":[3,3],"in_channels":3,"out_channels":7,"inputs":["input"]},
            {"id":"b","kind":"conv","kernel":[3,3],"in_channels":7,"out_channels":32,"stride":2,"padding":[1,1],"inputs":["a"]},
            {"id":"output","kind":"output","inputs":["b"]}
        ]}"#,
        )
        .unwrap();
        let diff = count_flops(&g, (16, 16)) - count_flops(&smaller, (16, 16));
        assert_relative_eq!(diff as f64 / 256.0, lam, max_relative = 1e-12);
    }

    #[test]
    fn deeper_toy_resnet_edge_is_cheaper_in_flops() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let first = h.edge_of_id(&g, "l1b1c1", Side::Out).unwrap();
        let last = h.edge_of_id(&g, "l3b2c1", Side::Out).unwrap();
        let counts = full_counts(&h);
        let f_first = flops_cost(&g, &h, &counts, (16, 16), first).unwrap();
        let f_last = flops_cost(&g, &h, &counts, (16, 16), last).unwrap();
        let m_first = memory_cost(&g, &h, &counts, first).unwrap();
        let m_last = memory_cost(&g, &h, &counts, last).unwrap();
        assert!(m_last > m_first, "deep edge has more weights");
        assert!(f_last < f_first, "but smaller flops factor");
    }

    #[test]
    fn latency_table_arithmetic_and_round_trip() {
        let t = LatencyTable::new(0.100, &[(1, 0.090, 64), (2, 0.101, 16)]).unwrap();
        assert_relative_eq!(latency_cost(&t, 1).unwrap(), 0.0003125, max_relative = 1e-12);
        assert_eq!(latency_cost(&t, 2).unwrap(), 0.0);
        assert!(latency_cost(&t, 3).is_err());
        let round = LatencyTable::parse(&t.to_text()).unwrap();
        assert_eq!(round.t_orig, t.t_orig);
        assert_eq!(round.row(1), t.row(1));
        assert_eq!(round.row(2), t.row(2));
    }

    #[test]
    fn initial_loss_is_one() {
        for name in ["toy-resnet", "resnet50"] {
            let g = builtin_graph(name).unwrap();
            let h = build_hypergraph(&g).unwrap();
            for obj in [CostObjective::Memory, CostObjective::Flops] {
                let f = CostFactors::initial(&g, &h, &obj, (16, 16)).unwrap();
                let draws: Vec<f64> = full_counts(&h).iter().map(|&c| c as f64).collect();
                let loss = computational_loss(&draws, &f).unwrap();
                assert_relative_eq!(loss, 1.0, epsilon = 1e-9);
                let zero = vec![0.0; draws.len()];
                assert_eq!(computational_loss(&zero, &f).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn closing_gates_never_increases_loss() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let f = CostFactors::initial(&g, &h, &CostObjective::Memory, (16, 16)).unwrap();
        let mut draws: Vec<f64> = full_counts(&h).iter().map(|&c| c as f64).collect();
        let mut prev = computational_loss(&draws, &f).unwrap();
        for &j in f.prunable() {
            while draws[j] > 0.0 {
                draws[j] -= 1.0;
                let now = computational_loss(&draws, &f).unwrap();
                assert!(now <= prev + 1e-15);
                prev = now;
            }
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let f = CostFactors::initial(&g, &h, &CostObjective::Memory, (16, 16)).unwrap();
        assert!(computational_loss(&[1.0, 2.0], &f).is_err());
    }
}
