//! Built-in network descriptions: ResNet-50 and a desk-scale toy ResNet.

use super::{LayerKind, LayerSpec, NetworkGraph};
use crate::{GatorError, Result};

/// Resolve a builtin name. Recognized: `resnet50`, `toy-resnet`.
pub fn builtin_graph(name: &str) -> Result<NetworkGraph> {
    match name {
        "resnet50" => resnet50(),
        "toy-resnet" => toy_resnet(),
        other => Err(GatorError::UnknownBuiltin(other.to_string())),
    }
}

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new(channels: usize) -> Self {
        Builder {
            layers: vec![LayerSpec {
                id: "input".into(),
                kind: LayerKind::Input { channels },
                inputs: vec![],
            }],
        }
    }

    fn push(&mut self, id: &str, kind: LayerKind, inputs: &[&str]) -> String {
        self.layers.push(LayerSpec {
            id: id.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        id.to_string()
    }

    fn conv(&mut self, id: &str, from: &str, k: usize, cin: usize, cout: usize, stride: usize) -> String {
        self.push(
            id,
            LayerKind::Conv {
                kernel: (k, k),
                in_channels: cin,
                out_channels: cout,
                stride,
                padding: (k / 2, k / 2),
            },
            &[from],
        )
    }

    /// conv + batchnorm; returns the batchnorm id.
    fn conv_bn(&mut self, id: &str, from: &str, k: usize, cin: usize, cout: usize, stride: usize) -> String {
        self.conv(id, from, k, cin, cout, stride);
        self.push(&format!("{id}_bn"), LayerKind::BatchNorm { channels: cout }, &[id])
    }

    fn conv_bn_relu(&mut self, id: &str, from: &str, k: usize, cin: usize, cout: usize, stride: usize) -> String {
        let bn = self.conv_bn(id, from, k, cin, cout, stride);
        self.push(&format!("{id}_relu"), LayerKind::Relu, &[&bn])
    }

    fn finish(mut self, from: &str, classes: usize, features: usize) -> Result<NetworkGraph> {
        self.push("gap", LayerKind::GlobalAvgPool, &[from]);
        self.push(
            "fc",
            LayerKind::FullyConnected {
                in_features: features,
                out_features: classes,
            },
            &["gap"],
        );
        self.push("output", LayerKind::Output, &["fc"]);
        NetworkGraph::new(self.layers)
    }
}

/// ResNet-50: stem conv `c0`, 4 stages of bottleneck blocks [3, 4, 6, 3],
/// downsample convs `l{L}b1d`, classifier `fc`. Layer naming follows the
/// `l{layer}b{block}c{1,2,3}` convention.
fn resnet50() -> Result<NetworkGraph> {
    let mut b = Builder::new(3);
    b.conv_bn_relu("c0", "input", 7, 3, 64, 2);
    b.push(
        "maxpool",
        LayerKind::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        &["c0_relu"],
    );

    let widths = [64usize, 128, 256, 512];
    let blocks = [3usize, 4, 6, 3];
    let mut prev = "maxpool".to_string();
    let mut prev_ch = 64usize;
    for (li, (&w, &nb)) in widths.iter().zip(blocks.iter()).enumerate() {
        let l = li + 1;
        let out_ch = w * 4;
        for blk in 1..=nb {
            let name = |c: &str| format!("l{l}b{blk}{c}");
            // Stage transitions (except layer 1) downsample on c2 and d.
            let stride = if blk == 1 && l > 1 { 2 } else { 1 };
            let c1 = b.conv_bn_relu(&name("c1"), &prev, 1, prev_ch, w, 1);
            let c2 = b.conv_bn_relu(&name("c2"), &c1, 3, w, w, stride);
            let c3 = b.conv_bn(&name("c3"), &c2, 1, w, out_ch, 1);
            let shortcut = if blk == 1 {
                b.conv_bn(&name("d"), &prev, 1, prev_ch, out_ch, stride)
            } else {
                prev.clone()
            };
            let add = b.push(&name("_add"), LayerKind::Add, &[&c3, &shortcut]);
            prev = b.push(&name("_relu"), LayerKind::Relu, &[&add]);
            prev_ch = out_ch;
        }
    }
    b.finish(&prev, 1000, 2048)
}

/// Desk-scale residual network: stem conv (3 -> 8) plus 3 stages of 2 basic
/// blocks at widths 8/16/32; stages 2 and 3 downsample with a 1x1 projection
/// conv. With a 16x16 input the last stage sits at d = 1/16.
fn toy_resnet() -> Result<NetworkGraph> {
    let mut b = Builder::new(3);
    let mut prev = b.conv_bn_relu("c0", "input", 3, 3, 8, 1);
    let widths = [8usize, 16, 32];
    let mut prev_ch = 8usize;
    for (si, &w) in widths.iter().enumerate() {
        let l = si + 1;
        for blk in 1..=2usize {
            let name = |c: &str| format!("l{l}b{blk}{c}");
            let transition = blk == 1 && l > 1;
            let stride = if transition { 2 } else { 1 };
            let c1 = b.conv_bn_relu(&name("c1"), &prev, 3, prev_ch, w, stride);
            let c2 = b.conv_bn(&name("c2"), &c1, 3, w, w, 1);
            let shortcut = if transition {
                b.conv_bn(&name("d"), &prev, 1, prev_ch, w, stride)
            } else {
                prev.clone()
            };
            let add = b.push(&name("_add"), LayerKind::Add, &[&c2, &shortcut]);
            prev = b.push(&name("_relu"), LayerKind::Relu, &[&add]);
            prev_ch = w;
        }
    }
    b.finish(&prev, 10, 32)
}
