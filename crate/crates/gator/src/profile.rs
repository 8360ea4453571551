//! Latency profiling against the reference executor.
//!
//! One per-channel latency factor per prunable edge, obtained by timing the
//! original network and a variant with half of that edge's channels removed.
//! Timings are wall-clock and machine-relative; only ratios are meaningful.

use std::time::Instant;

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::LatencyTable;
use crate::hypergraph::{DependencyHypergraph, build_hypergraph};
use crate::ir::{Mode, NetworkGraph, WeightStore, forward};
use crate::prune::{PruningPlan, apply_pruning};
use crate::rng::stream;
use crate::{GatorError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub warmups: usize,
    pub repeats: usize,
    pub batch_size: usize,
    pub input_hw: (usize, usize),
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            warmups: 2,
            repeats: 5,
            batch_size: 8,
            input_hw: (16, 16),
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(GatorError::Profile(format!(
                "repeats {} below the minimum of 5",
                self.repeats
            )));
        }
        if self.warmups < 2 {
            return Err(GatorError::Profile(format!(
                "warmups {} below the minimum of 2",
                self.warmups
            )));
        }
        if self.batch_size == 0 || self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(GatorError::Profile(
                "batch size and input size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Keep the lowest ⌈c/2⌉ channel indices of edge `j`, everything elsewhere.
pub fn half_plan(h: &DependencyHypergraph, j: usize) -> PruningPlan {
    let mut plan = PruningPlan::identity(h);
    let c = h.edges()[j].channel_count;
    plan.survivors[j] = (0..c.div_ceil(2)).collect();
    plan
}

/// Median wall-clock seconds of an eval-mode forward pass.
pub fn time_network(g: &NetworkGraph, w: &WeightStore, cfg: &ProfileConfig) -> Result<f64> {
    cfg.validate()?;
    let mut rng = stream(0, "profile-input");
    let batch = Array4::from_shape_fn(
        (cfg.batch_size, g.input_channels(), cfg.input_hw.0, cfg.input_hw.1),
        |_| rng.random::<f64>() - 0.5,
    );
    let mut w = w.clone();
    for _ in 0..cfg.warmups {
        forward(g, &mut w, &batch, Mode::Eval, None)?;
    }
    let mut samples = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let start = Instant::now();
        forward(g, &mut w, &batch, Mode::Eval, None)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    let mid = samples.len() / 2;
    Ok(if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    })
}

/// Time the original network and one 50%-pruned variant per prunable edge.
pub fn profile_latency(
    g: &NetworkGraph,
    w: &WeightStore,
    cfg: &ProfileConfig,
) -> Result<LatencyTable> {
    cfg.validate()?;
    let h = build_hypergraph(g)?;
    let t_orig = time_network(g, w, cfg)?;
    let mut measurements = Vec::new();
    for j in h.prunable_edges() {
        let variant = apply_pruning(g, w, &half_plan(&h, j), &h)?;
        let t_half = time_network(&variant.graph, &variant.weights, cfg)?;
        measurements.push((j, t_half, h.edges()[j].channel_count));
    }
    LatencyTable::new(t_orig, &measurements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::builtin_graph;

    #[test]
    fn config_enforces_minimums() {
        let mut cfg = ProfileConfig::default();
        cfg.repeats = 3;
        assert!(cfg.validate().is_err());
        cfg.repeats = 5;
        cfg.warmups = 1;
        assert!(cfg.validate().is_err());
        cfg.warmups = 2;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn half_plan_keeps_lowest_half() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let j = h.prunable_edges()[0];
        let plan = half_plan(&h, j);
        let c = h.edges()[j].channel_count;
        assert_eq!(plan.survivors[j], (0..c.div_ceil(2)).collect::<Vec<_>>());
        for other in h.prunable_edges() {
            if other != j {
                assert_eq!(plan.survivors[other].len(), h.edges()[other].channel_count);
            }
        }
    }

    /// Measured table: every prunable edge covered, T > 0, λ ≥ 0, and total
    /// modeled cost bounded by twice the measured original latency.
    #[test]
    fn profiled_table_is_sane() {
        let g = builtin_graph("toy-resnet").unwrap();
        let h = build_hypergraph(&g).unwrap();
        let w = WeightStore::init_random(&g, 0);
        let cfg = ProfileConfig {
            batch_size: 2,
            ..ProfileConfig::default()
        };
        let table = profile_latency(&g, &w, &cfg).unwrap();
        assert!(table.t_orig > 0.0);
        for j in h.prunable_edges() {
            let row = table.row(j).unwrap();
            assert!(row.t_half > 0.0);
            assert!(row.lambda >= 0.0);
        }
        // Σ c_j λ_j should be within a safety factor of the whole-network
        // latency: each term approximates the time attributable to one edge.
        let total: f64 = h
            .prunable_edges()
            .iter()
            .map(|&j| h.edges()[j].channel_count as f64 * table.row(j).unwrap().lambda)
            .sum();
        assert!(total <= 2.0 * table.t_orig, "{total} vs {}", table.t_orig);
    }
}
