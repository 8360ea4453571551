//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatorError {
    #[error("cycle detected involving layer `{layer}`")]
    CycleDetected { layer: String },

    #[error("unknown layer kind `{kind}` on layer `{layer}`")]
    UnknownLayerKind { layer: String, kind: String },

    #[error("layer `{layer}` expects {expected} input channels but predecessor `{pred}` provides {actual}")]
    ChannelMismatch {
        layer: String,
        pred: String,
        expected: usize,
        actual: usize,
    },

    #[error("layer `{layer}` references unknown input `{input}`")]
    DanglingInput { layer: String, input: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown builtin network `{0}`")]
    UnknownBuiltin(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weight store error: {0}")]
    WeightStore(String),

    #[error("hypergraph error: {0}")]
    Hypergraph(String),

    #[error("unknown dependency edge {0}")]
    UnknownEdge(usize),

    #[error("unknown vertex: {0}")]
    UnknownVertex(String),

    #[error("cost model error: {0}")]
    CostModel(String),

    #[error("gating error: {0}")]
    Gating(String),

    #[error("non-finite loss at layer `{layer}`")]
    NonFiniteLoss { layer: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("gamma calibration failed, all candidates exceed the self-pruning ceiling: {0}")]
    CalibrationFailed(String),

    #[error("pruning plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("residual branch is numerically non-zero despite empty channels: {0}")]
    NonCollapsible(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("profiling error: {0}")]
    Profile(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
