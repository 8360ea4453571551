//! Textual IR: a JSON document with a `layers` list.
//!
//! See docs/formats.md for the exact schema. Padding is optional for
//! stride-1 convs (defaults to "same", i.e. k/2) and mandatory otherwise.

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, NetworkGraph};
use crate::{GatorError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    layers: Vec<RawLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLayer {
    id: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
}

fn missing(layer: &str, field: &str) -> GatorError {
    GatorError::Parse(format!("layer `{layer}` is missing field `{field}`"))
}

fn convert(raw: RawLayer) -> Result<LayerSpec> {
    let id = raw.id.clone();
    let kind = match raw.kind.as_str() {
        "input" => LayerKind::Input {
            channels: raw.channels.ok_or_else(|| missing(&id, "channels"))?,
        },
        "output" => LayerKind::Output,
        "conv" => {
            let kernel = raw.kernel.ok_or_else(|| missing(&id, "kernel"))?;
            let stride = raw.stride.unwrap_or(1);
            let padding = match raw.padding {
                Some(p) => (p[0], p[1]),
                None if stride == 1 => (kernel[0] / 2, kernel[1] / 2),
                None => return Err(missing(&id, "padding (required for stride-2 convs)")),
            };
            LayerKind::Conv {
                kernel: (kernel[0], kernel[1]),
                in_channels: raw.in_channels.ok_or_else(|| missing(&id, "in_channels"))?,
                out_channels: raw.out_channels.ok_or_else(|| missing(&id, "out_channels"))?,
                stride,
                padding,
            }
        }
        "fully-connected" => LayerKind::FullyConnected {
            in_features: raw.in_features.ok_or_else(|| missing(&id, "in_features"))?,
            out_features: raw.out_features.ok_or_else(|| missing(&id, "out_features"))?,
        },
        "relu" => LayerKind::Relu,
        "batchnorm" => LayerKind::BatchNorm {
            channels: raw.channels.ok_or_else(|| missing(&id, "channels"))?,
        },
        "add" => LayerKind::Add,
        "global-avg-pool" => LayerKind::GlobalAvgPool,
        "max-pool" => LayerKind::MaxPool {
            kernel: raw.pool_kernel.ok_or_else(|| missing(&id, "pool_kernel"))?,
            stride: raw.stride.unwrap_or(1),
            padding: raw.pool_padding.unwrap_or(0),
        },
        other => {
            return Err(GatorError::UnknownLayerKind {
                layer: id,
                kind: other.to_string(),
            })
        }
    };
    Ok(LayerSpec {
        id,
        kind,
        inputs: raw.inputs,
    })
}

fn deconvert(layer: &LayerSpec) -> RawLayer {
    let mut raw = RawLayer {
        id: layer.id.clone(),
        kind: layer.kind.name().to_string(),
        channels: None,
        kernel: None,
        in_channels: None,
        out_channels: None,
        stride: None,
        padding: None,
        in_features: None,
        out_features: None,
        pool_kernel: None,
        pool_padding: None,
        inputs: layer.inputs.clone(),
    };
    match &layer.kind {
        LayerKind::Input { channels } => raw.channels = Some(*channels),
        LayerKind::Conv {
            kernel,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            raw.kernel = Some([kernel.0, kernel.1]);
            raw.in_channels = Some(*in_channels);
            raw.out_channels = Some(*out_channels);
            raw.stride = Some(*stride);
            raw.padding = Some([padding.0, padding.1]);
        }
        LayerKind::FullyConnected {
            in_features,
            out_features,
        } => {
            raw.in_features = Some(*in_features);
            raw.out_features = Some(*out_features);
        }
        LayerKind::BatchNorm { channels } => raw.channels = Some(*channels),
        LayerKind::MaxPool {
            kernel,
            stride,
            padding,
        } => {
            raw.pool_kernel = Some(*kernel);
            raw.stride = Some(*stride);
            raw.pool_padding = Some(*padding);
        }
        LayerKind::Output | LayerKind::Relu | LayerKind::Add | LayerKind::GlobalAvgPool => {}
    }
    raw
}

/// Parse and validate an IR document.
pub fn parse_network(text: &str) -> Result<NetworkGraph> {
    let doc: RawDocument =
        serde_json::from_str(text).map_err(|e| GatorError::Parse(e.to_string()))?;
    let layers = doc
        .layers
        .into_iter()
        .map(convert)
        .collect::<Result<Vec<_>>>()?;
    NetworkGraph::new(layers)
}

/// Serialize a graph back to the IR document format.
pub fn serialize_network(g: &NetworkGraph) -> String {
    let doc = RawDocument {
        layers: g.layers().iter().map(deconvert).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("IR serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_layer_graph_parses() {
        let text = r#"{"layers":[
            {"id":"input","kind":"input","channels":3},
            {"id":"conv","kind":"conv","kernel":[3,3],"in_channels":3,"out_channels":8,"inputs":["input"]},
            {"id":"output","kind":"output","inputs":["conv"]}
        ]}"#;
        let g = parse_network(text).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.downsample_factor(g.index_of("conv").unwrap()), 1.0);
    }

    #[test]
    fn unknown_kind_is_reported() {
        let text = r#"{"layers":[
            {"id":"input","kind":"input","channels":3},
            {"id":"x","kind":"depthwise","inputs":["input"]},
            {"id":"output","kind":"output","inputs":["x"]}
        ]}"#;
        match parse_network(text).unwrap_err() {
            GatorError::UnknownLayerKind { layer, kind } => {
                assert_eq!(layer, "x");
                assert_eq!(kind, "depthwise");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let g = super::super::builtin_graph("toy-resnet").unwrap();
        let text = serialize_network(&g);
        let g2 = parse_network(&text).unwrap();
        assert_eq!(g.layers(), g2.layers());
    }
}
