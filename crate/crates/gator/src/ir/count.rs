//! Exact parameter and FLOPs counters.
//!
//! Convention: 1 FLOP = 1 multiply-accumulate. Biases, batchnorm, activations
//! and pooling are excluded, so both counters are exact integers.

use super::{LayerKind, NetworkGraph};

pub(crate) fn spatial_plan(g: &NetworkGraph, input_hw: (usize, usize)) -> Vec<(usize, usize)> {
    let mut hw = vec![(0usize, 0usize); g.len()];
    for i in 0..g.len() {
        let preds = g.preds(i);
        hw[i] = match &g.layer(i).kind {
            LayerKind::Input { .. } => input_hw,
            LayerKind::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let (h, w) = hw[preds[0]];
                (
                    (h + 2 * padding.0 - kernel.0) / stride + 1,
                    (w + 2 * padding.1 - kernel.1) / stride + 1,
                )
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (h, w) = hw[preds[0]];
                (
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                )
            }
            LayerKind::GlobalAvgPool | LayerKind::FullyConnected { .. } => (1, 1),
            _ => hw[preds[0]],
        };
    }
    hw
}

/// Multiply-accumulate count of one forward pass at the given input size.
pub fn count_flops(g: &NetworkGraph, input_hw: (usize, usize)) -> u64 {
    let hw = spatial_plan(g, input_hw);
    let mut total = 0u64;
    for i in 0..g.len() {
        match &g.layer(i).kind {
            LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => {
                let (oh, ow) = hw[i];
                total += (kernel.0 * kernel.1 * in_channels * out_channels * oh * ow) as u64;
            }
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => {
                total += (in_features * out_features) as u64;
            }
            _ => {}
        }
    }
    total
}

/// Weight count over convs and the fully-connected layer.
pub fn count_params(g: &NetworkGraph) -> u64 {
    let mut total = 0u64;
    for l in g.layers() {
        match &l.kind {
            LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => total += (kernel.0 * kernel.1 * in_channels * out_channels) as u64,
            LayerKind::FullyConnected {
                in_features,
                out_features,
            } => total += (in_features * out_features) as u64,
            _ => {}
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_graph, LayerKind, LayerSpec, NetworkGraph};
    use super::*;

    fn single_conv(k: usize, cin: usize, cout: usize, stride: usize, pad: usize) -> NetworkGraph {
        NetworkGraph::new(vec![
            LayerSpec { id: "input".into(), kind: LayerKind::Input { channels: cin }, inputs: vec![] },
            LayerSpec {
                id: "conv".into(),
                kind: LayerKind::Conv {
                    kernel: (k, k),
                    in_channels: cin,
                    out_channels: cout,
                    stride,
                    padding: (pad, pad),
                },
                inputs: vec!["input".into()],
            },
            LayerSpec { id: "output".into(), kind: LayerKind::Output, inputs: vec!["conv".into()] },
        ])
        .unwrap()
    }

    /// Brute-force oracle: count one MAC per (output position, tap).
    fn loop_count(k: usize, cin: usize, cout: usize, oh: usize, ow: usize) -> u64 {
        let mut n = 0u64;
        for _ in 0..cout {
            for _ in 0..oh {
                for _ in 0..ow {
                    for _ in 0..cin {
                        for _ in 0..k * k {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn conv_flops_match_hand_count() {
        // 3x3, 16 -> 32, stride 2 on 16x16 "same" padding gives 8x8 output
        let g = single_conv(3, 16, 32, 2, 1);
        assert_eq!(count_flops(&g, (16, 16)), 9 * 16 * 32 * 64);
        assert_eq!(count_flops(&g, (16, 16)), loop_count(3, 16, 32, 8, 8));
    }

    #[test]
    fn one_by_one_conv_flops() {
        let g = single_conv(1, 2, 3, 1, 0);
        assert_eq!(count_flops(&g, (1, 1)), 6);
    }

    #[test]
    fn params_hand_count() {
        let g = single_conv(3, 16, 32, 1, 1);
        assert_eq!(count_params(&g), 4608);
    }

    #[test]
    fn zero_channel_conv_contributes_nothing() {
        let g = NetworkGraph::new(vec![
            LayerSpec { id: "input".into(), kind: LayerKind::Input { channels: 4 }, inputs: vec![] },
            LayerSpec {
                id: "a".into(),
                kind: LayerKind::Conv { kernel: (3, 3), in_channels: 4, out_channels: 0, stride: 1, padding: (1, 1) },
                inputs: vec!["input".into()],
            },
            LayerSpec {
                id: "b".into(),
                kind: LayerKind::Conv { kernel: (3, 3), in_channels: 0, out_channels: 4, stride: 1, padding: (1, 1) },
                inputs: vec!["a".into()],
            },
            LayerSpec { id: "output".into(), kind: LayerKind::Output, inputs: vec!["b".into()] },
        ])
        .unwrap();
        assert_eq!(count_params(&g), 0);
        assert_eq!(count_flops(&g, (8, 8)), 0);
    }

    #[test]
    fn toy_resnet_matches_per_layer_oracle() {
        let g = builtin_graph("toy-resnet").unwrap();
        let hw = spatial_plan(&g, (16, 16));
        let mut oracle = 0u64;
        for i in 0..g.len() {
            match &g.layer(i).kind {
                LayerKind::Conv { kernel, in_channels, out_channels, .. } => {
                    oracle += loop_count(kernel.0, *in_channels, *out_channels, hw[i].0, hw[i].1);
                }
                LayerKind::FullyConnected { in_features, out_features } => {
                    oracle += (in_features * out_features) as u64;
                }
                _ => {}
            }
        }
        assert_eq!(count_flops(&g, (16, 16)), oracle);
    }
}
